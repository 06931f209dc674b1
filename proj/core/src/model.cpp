#include "vrta/model.hpp"

#include <cmath>
#include <fstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "vrta/error.hpp"
#include "vrta/tensor_io.hpp"

namespace vrta {

void ToyModelConfig::validate() const {
    if (blocks < 1 || heads < 1 || width < 1 || ffn_hidden < 1) {
        throw ConfigError("model config: blocks/heads/width/ffn_hidden must be positive");
    }
    if (width % heads != 0) {
        throw ConfigError("model config: width must be divisible by heads");
    }
    if (width % 2 != 0) {
        throw ConfigError("model config: width must be even for the timestep embedding");
    }
    // Constructing the masks validates both geometries against the grid.
    TileMask probe(grid, tile);
    (void)probe;
    BucketGeometry b = bucket;
    const double drop = b.volume() * (1.0 - b.r_core);
    if (std::fabs(drop - std::round(drop)) > 1e-9) {
        throw ConfigError("model config: bucket volume * (1 - r_core) must be an integer");
    }
    if (grid.frames % b.bucket_f != 0 || grid.height % b.bucket_h != 0 ||
        grid.width % b.bucket_w != 0) {
        throw ConfigError("model config: bucket sizes must divide the grid dimensions");
    }
}

ModelState ModelState::init(const ToyModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelState s;
    s.config = cfg;
    Rng rng = Rng(seed).fork("init");
    const int d = cfg.width;
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double sh = 1.0 / std::sqrt(static_cast<double>(cfg.ffn_hidden));

    s.time_w = Matrix::randn(d, d, rng, sd);
    s.time_b = Matrix(1, d);
    s.out_w = Matrix::randn(d, d, rng, sd);
    s.blocks.resize(static_cast<std::size_t>(cfg.blocks));
    for (BlockParams& b : s.blocks) {
        b.wq = Matrix::randn(d, d, rng, sd);
        b.wk = Matrix::randn(d, d, rng, sd);
        b.wv = Matrix::randn(d, d, rng, sd);
        b.wo = Matrix::randn(d, d, rng, sd);
        b.ln1_gamma = Matrix::filled(1, d, 1.0);
        b.ln1_beta = Matrix(1, d);
        b.ln2_gamma = Matrix::filled(1, d, 1.0);
        b.ln2_beta = Matrix(1, d);
        b.ffn_w1 = Matrix::randn(d, cfg.ffn_hidden, rng, sd);
        b.ffn_b1 = Matrix(1, cfg.ffn_hidden);
        b.ffn_w2 = Matrix::randn(cfg.ffn_hidden, d, rng, sh);
        b.ffn_b2 = Matrix(1, d);
        b.router = Matrix(d, 3 * cfg.heads);  // zero-initialized: uniform gates
    }
    return s;
}

RouterWeights ModelState::router_weights() const {
    RouterWeights w;
    for (const BlockParams& b : blocks) {
        w.per_block.push_back(b.router);
    }
    return w;
}

namespace {

template <typename State, typename Ref>
std::vector<Ref> enumerate_params(State& s) {
    std::vector<Ref> refs;
    auto push = [&refs](std::string name, auto* m, bool router) {
        refs.push_back(Ref{std::move(name), m, router});
    };
    push("time_w", &s.time_w, false);
    push("time_b", &s.time_b, false);
    push("out_w", &s.out_w, false);
    for (std::size_t n = 0; n < s.blocks.size(); ++n) {
        auto& b = s.blocks[n];
        const std::string p = "block" + std::to_string(n) + ".";
        push(p + "wq", &b.wq, false);
        push(p + "wk", &b.wk, false);
        push(p + "wv", &b.wv, false);
        push(p + "wo", &b.wo, false);
        push(p + "ln1_gamma", &b.ln1_gamma, false);
        push(p + "ln1_beta", &b.ln1_beta, false);
        push(p + "ln2_gamma", &b.ln2_gamma, false);
        push(p + "ln2_beta", &b.ln2_beta, false);
        push(p + "ffn_w1", &b.ffn_w1, false);
        push(p + "ffn_b1", &b.ffn_b1, false);
        push(p + "ffn_w2", &b.ffn_w2, false);
        push(p + "ffn_b2", &b.ffn_b2, false);
        push(p + "router", &b.router, true);
    }
    return refs;
}

struct ConstParamRef {
    std::string name;
    const Matrix* tensor;
    bool router;
};

}  // namespace

std::vector<ParamRef> param_refs(ModelState& state) {
    return enumerate_params<ModelState, ParamRef>(state);
}

std::vector<ParamRef> param_refs_const(const ModelState& state) {
    // The caller promises to only read through the pointers.
    return enumerate_params<ModelState, ParamRef>(const_cast<ModelState&>(state));
}

std::uint64_t group_checksum(const ModelState& state, bool router_group) {
    std::uint64_t h = 14695981039346656037ull;
    auto feed = [&h](const Matrix& m) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
        for (std::size_t i = 0; i < m.size() * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    for (const ParamRef& r : param_refs_const(state)) {
        if (r.router == router_group) {
            feed(*r.tensor);
        }
    }
    return h;
}

ParamTapeIds register_params(Tape& tape, const ModelState& state) {
    ParamTapeIds ids;
    ids.time_w = tape.leaf(state.time_w);
    ids.time_b = tape.leaf(state.time_b);
    ids.out_w = tape.leaf(state.out_w);
    for (const BlockParams& b : state.blocks) {
        BlockParamIds bi;
        bi.wq = tape.leaf(b.wq);
        bi.wk = tape.leaf(b.wk);
        bi.wv = tape.leaf(b.wv);
        bi.wo = tape.leaf(b.wo);
        bi.ln1_gamma = tape.leaf(b.ln1_gamma);
        bi.ln1_beta = tape.leaf(b.ln1_beta);
        bi.ln2_gamma = tape.leaf(b.ln2_gamma);
        bi.ln2_beta = tape.leaf(b.ln2_beta);
        bi.ffn_w1 = tape.leaf(b.ffn_w1);
        bi.ffn_b1 = tape.leaf(b.ffn_b1);
        bi.ffn_w2 = tape.leaf(b.ffn_w2);
        bi.ffn_b2 = tape.leaf(b.ffn_b2);
        bi.router = tape.leaf(b.router);
        ids.blocks.push_back(bi);
    }
    return ids;
}

std::vector<Matrix> collect_param_grads(const Tape& tape, const ParamTapeIds& ids) {
    std::vector<Matrix> grads;
    auto take = [&](Tape::Id id) { grads.push_back(tape.grad(id)); };
    take(ids.time_w);
    take(ids.time_b);
    take(ids.out_w);
    for (const BlockParamIds& b : ids.blocks) {
        take(b.wq);
        take(b.wk);
        take(b.wv);
        take(b.wo);
        take(b.ln1_gamma);
        take(b.ln1_beta);
        take(b.ln2_gamma);
        take(b.ln2_beta);
        take(b.ffn_w1);
        take(b.ffn_b1);
        take(b.ffn_w2);
        take(b.ffn_b2);
        take(b.router);
    }
    return grads;
}

ForwardBuild build_forward(Tape& tape, const ModelState& state, const ParamTapeIds& ids,
                           const Matrix& x_t, double t, ForwardMode mode,
                           const AttentionMask& tile_mask_dense) {
    const ToyModelConfig& cfg = state.config;
    if (x_t.rows() != cfg.grid.tokens() || x_t.cols() != cfg.width) {
        throw ContractError("build_forward: x_t must be L x width on the model grid");
    }
    const int dh = cfg.head_width();
    const double scale = cfg.scale_qk ? 1.0 / std::sqrt(static_cast<double>(dh)) : 1.0;

    const std::vector<double> temb_vec = timestep_embedding(t, cfg.width);
    Matrix temb_row(1, cfg.width);
    std::copy(temb_vec.begin(), temb_vec.end(), temb_row.data());
    const Tape::Id temb = tape.leaf(std::move(temb_row));

    ForwardBuild out;
    const Tape::Id xt = tape.leaf(x_t);
    const Tape::Id cond = tape.add(tape.matmul(temb, ids.time_w), ids.time_b);
    Tape::Id h = tape.add_row_broadcast(xt, cond);

    for (int n = 0; n < cfg.blocks; ++n) {
        const BlockParamIds& bp = ids.blocks[n];
        const Tape::Id a = tape.layer_norm(h, bp.ln1_gamma, bp.ln1_beta);
        const Tape::Id q = tape.matmul(a, bp.wq);
        const Tape::Id k = tape.matmul(a, bp.wk);
        const Tape::Id v = tape.matmul(a, bp.wv);

        Tape::Id gate_id = -1;
        Matrix gate_vals;
        std::vector<Branch> choices;
        if (mode != ForwardMode::Dense) {
            const Tape::Id logits = tape.reshape(tape.matmul(temb, bp.router), cfg.heads, 3);
            gate_id = tape.softmax_rows(logits);
            gate_vals = tape.val(gate_id);
            if (mode == ForwardMode::HardRouted) {
                for (int head = 0; head < cfg.heads; ++head) {
                    choices.push_back(route_hard(
                        {gate_vals(head, 0), gate_vals(head, 1), gate_vals(head, 2)}));
                }
            }
        }

        // The coreset plan is data dependent: it reads the normalized block
        // input, once per block, shared by all heads.
        bool need_plan = mode == ForwardMode::SoftRouted;
        for (Branch c : choices) {
            need_plan = need_plan || c == Branch::Coreset;
        }
        BucketPlan plan;
        if (need_plan) {
            plan = bcs_plan(FeatureSequence(cfg.grid, tape.val(a)), cfg.bucket);
        }

        auto branch_out = [&](int head, Branch b) -> Tape::Id {
            const Tape::Id qh = tape.slice_cols(q, head * dh, dh);
            const Tape::Id kh = tape.slice_cols(k, head * dh, dh);
            const Tape::Id vh = tape.slice_cols(v, head * dh, dh);
            switch (b) {
                case Branch::Full: {
                    const Tape::Id p = tape.attn_probs(qh, kh, scale, nullptr);
                    if (mode == ForwardMode::Dense) {
                        if (static_cast<int>(out.head_probs.size()) <= n) {
                            out.head_probs.resize(n + 1);
                        }
                        out.head_probs[n].push_back(p);
                    }
                    return tape.matmul(p, vh);
                }
                case Branch::Sliding: {
                    const Tape::Id p = tape.attn_probs(qh, kh, scale, &tile_mask_dense);
                    return tape.matmul(p, vh);
                }
                case Branch::Coreset: {
                    const Tape::Id qc = tape.gather_rows(qh, plan.pooled_rows);
                    const Tape::Id kc = tape.gather_rows(kh, plan.pooled_rows);
                    const Tape::Id vc = tape.gather_rows(vh, plan.pooled_rows);
                    const Tape::Id p = tape.attn_probs(qc, kc, scale, nullptr);
                    const Tape::Id oc = tape.matmul(p, vc);
                    return tape.gather_rows(oc, plan.source_row);
                }
            }
            throw ContractError("build_forward: invalid branch");
        };

        std::vector<Tape::Id> head_outs;
        for (int head = 0; head < cfg.heads; ++head) {
            switch (mode) {
                case ForwardMode::Dense:
                    head_outs.push_back(branch_out(head, Branch::Full));
                    break;
                case ForwardMode::HardRouted:
                    head_outs.push_back(branch_out(head, choices[head]));
                    break;
                case ForwardMode::SoftRouted: {
                    const Tape::Id full = branch_out(head, Branch::Full);
                    const Tape::Id sliding = branch_out(head, Branch::Sliding);
                    const Tape::Id coreset = branch_out(head, Branch::Coreset);
                    const Tape::Id mixed =
                        tape.add(tape.add(tape.scale_by_entry(full, gate_id, head, 0),
                                          tape.scale_by_entry(sliding, gate_id, head, 1)),
                                 tape.scale_by_entry(coreset, gate_id, head, 2));
                    head_outs.push_back(mixed);
                    break;
                }
            }
        }
        const Tape::Id attn = tape.matmul(tape.concat_cols(head_outs), bp.wo);
        h = tape.add(h, attn);

        const Tape::Id f = tape.layer_norm(h, bp.ln2_gamma, bp.ln2_beta);
        const Tape::Id hidden =
            tape.gelu(tape.add_row_broadcast(tape.matmul(f, bp.ffn_w1), bp.ffn_b1));
        const Tape::Id ffn = tape.add_row_broadcast(tape.matmul(hidden, bp.ffn_w2), bp.ffn_b2);
        h = tape.add(h, ffn);

        if (!tape.val(h).all_finite()) {
            throw NumericError("model forward: non-finite activation in block " +
                               std::to_string(n));
        }
        if (mode != ForwardMode::Dense) {
            out.gate_ids.push_back(gate_id);
            out.gates.push_back(gate_vals);
            if (mode == ForwardMode::HardRouted) {
                out.choices.push_back(choices);
            }
        }
    }

    out.final_features = h;
    out.velocity = tape.matmul(h, ids.out_w);
    return out;
}

namespace {

struct Workspace {
    TileMask mask;
    AttentionMask dense;

    explicit Workspace(const ToyModelConfig& cfg)
        : mask(cfg.grid, cfg.tile), dense(mask.dense()) {}
};

ForwardResult forward_with_ws(const ModelState& state, const Workspace& ws, const Matrix& x_t,
                              double t, ForwardMode mode) {
    Tape tape;
    const ParamTapeIds ids = register_params(tape, state);
    const ForwardBuild fb = build_forward(tape, state, ids, x_t, t, mode, ws.dense);
    ForwardResult r;
    r.velocity = tape.val(fb.velocity);
    r.final_features = tape.val(fb.final_features);
    r.gates = fb.gates;
    r.choices = fb.choices;
    return r;
}

}  // namespace

ForwardResult model_forward(const ModelState& state, const Matrix& x_t, double t,
                            ForwardMode mode) {
    const Workspace ws(state.config);
    return forward_with_ws(state, ws, x_t, t, mode);
}

std::vector<std::vector<Matrix>> dense_attention_probs(const ModelState& state,
                                                       const Matrix& x_t, double t) {
    const Workspace ws(state.config);
    Tape tape;
    const ParamTapeIds ids = register_params(tape, state);
    const ForwardBuild fb = build_forward(tape, state, ids, x_t, t, ForwardMode::Dense, ws.dense);
    std::vector<std::vector<Matrix>> probs;
    for (const auto& block : fb.head_probs) {
        std::vector<Matrix> row;
        for (Tape::Id id : block) {
            row.push_back(tape.val(id));
        }
        probs.push_back(std::move(row));
    }
    return probs;
}

FlowSample flow_interpolate(Matrix x0, Matrix x1, double t) {
    if (!x0.same_shape(x1)) {
        throw ContractError("flow_interpolate: shape mismatch");
    }
    if (t < 0.0 || t > 1.0) {
        throw ContractError("flow_interpolate: t must lie in [0, 1]");
    }
    FlowSample s;
    s.x_t = Matrix(x0.rows(), x0.cols());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        s.x_t.data()[i] = t * x1.data()[i] + (1.0 - t) * x0.data()[i];
    }
    s.x0 = std::move(x0);
    s.x1 = std::move(x1);
    s.t = t;
    return s;
}

std::vector<Matrix> synth_dataset(int count, const VideoGrid& grid, int width,
                                  std::uint64_t seed) {
    if (count < 1) {
        throw ContractError("synth_dataset: count must be >= 1");
    }
    if (grid.frames < 2 || grid.height < 2 || grid.width < 2) {
        throw ConfigError("synth_dataset: every grid dimension must be >= 2");
    }
    Rng root = Rng(seed).fork("dataset");
    Rng code_rng = root.fork("code");
    const Matrix bright = Matrix::randn(1, width, code_rng);
    const Matrix background = Matrix::randn(1, width, code_rng);

    auto wrap = [](int x, int m) { return ((x % m) + m) % m; };
    const int side = std::max(1, std::min(grid.height, grid.width) / 3);

    std::vector<Matrix> data;
    data.reserve(static_cast<std::size_t>(count));
    for (int s = 0; s < count; ++s) {
        Rng r = root.fork(static_cast<std::uint64_t>(s));
        const int p0h = static_cast<int>(r.next_below(grid.height));
        const int p0w = static_cast<int>(r.next_below(grid.width));
        const int vh = static_cast<int>(r.next_below(3)) - 1;
        const int vw = static_cast<int>(r.next_below(3)) - 1;

        Matrix m(grid.tokens(), width);
        for (int i = 0; i < grid.tokens(); ++i) {
            std::copy(background.data(), background.data() + width, m.row(i));
        }
        for (int f = 0; f < grid.frames; ++f) {
            const int top = wrap(p0h + f * vh, grid.height);
            const int left = wrap(p0w + f * vw, grid.width);
            for (int dy = 0; dy < side; ++dy) {
                for (int dx = 0; dx < side; ++dx) {
                    const int i =
                        flatten_index(f, wrap(top + dy, grid.height), wrap(left + dx, grid.width),
                                      grid);
                    std::copy(bright.data(), bright.data() + width, m.row(i));
                }
            }
        }
        data.push_back(std::move(m));
    }
    return data;
}

SampleResult euler_sample(const ModelState& state, int steps, std::uint64_t seed,
                          ForwardMode mode) {
    if (steps < 1) {
        throw ContractError("euler_sample: steps must be >= 1");
    }
    const ToyModelConfig& cfg = state.config;
    Rng noise = Rng(seed).fork("sample-noise");
    Matrix x = Matrix::randn(cfg.grid.tokens(), cfg.width, noise);
    const Workspace ws(cfg);

    SampleResult result;
    const double dt = 1.0 / steps;
    for (int k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) / steps;
        const ForwardResult fr = forward_with_ws(state, ws, x, t, mode);
        axpy(x, fr.velocity, dt);
        if (frobenius_norm(x) > 1e6) {
            throw TrainingError("euler_sample: trajectory diverged at step " +
                                std::to_string(k));
        }
        if (mode != ForwardMode::Dense) {
            for (int n = 0; n < cfg.blocks; ++n) {
                for (int head = 0; head < cfg.heads; ++head) {
                    GateDumpRow row;
                    row.step = k;
                    row.block = n;
                    row.head = head;
                    row.alpha = {fr.gates[n](head, 0), fr.gates[n](head, 1),
                                 fr.gates[n](head, 2)};
                    row.choice = mode == ForwardMode::HardRouted ? fr.choices[n][head]
                                                                 : route_hard(row.alpha);
                    result.gate_rows.push_back(row);
                }
            }
        }
    }
    result.x = std::move(x);
    return result;
}

std::uint64_t branch_attention_macs(const ToyModelConfig& cfg, Branch b) {
    const std::uint64_t l = static_cast<std::uint64_t>(cfg.grid.tokens());
    const std::uint64_t dh = static_cast<std::uint64_t>(cfg.head_width());
    switch (b) {
        case Branch::Full:
            return 2 * l * l * dh;
        case Branch::Sliding: {
            const TileMask mask(cfg.grid, cfg.tile);
            const std::uint64_t tv = static_cast<std::uint64_t>(mask.tile_volume());
            return 2 * dh * tv * tv * static_cast<std::uint64_t>(mask.active_blocks());
        }
        case Branch::Coreset: {
            const int vol = cfg.bucket.volume();
            const int n_drop =
                static_cast<int>(std::llround(vol * (1.0 - cfg.bucket.r_core)));
            const std::uint64_t lc = l / vol * static_cast<std::uint64_t>(vol - n_drop);
            return 2 * lc * lc * dh;
        }
    }
    throw ContractError("branch_attention_macs: invalid branch");
}

namespace {

nlohmann::ordered_json config_to_json(const ToyModelConfig& c) {
    nlohmann::ordered_json j;
    j["blocks"] = c.blocks;
    j["heads"] = c.heads;
    j["width"] = c.width;
    j["ffn_hidden"] = c.ffn_hidden;
    j["grid"] = {c.grid.frames, c.grid.height, c.grid.width};
    j["tile"] = {c.tile.tile_f, c.tile.tile_h, c.tile.tile_w,
                 c.tile.win_f, c.tile.win_h, c.tile.win_w};
    j["bucket"] = {c.bucket.bucket_f, c.bucket.bucket_h, c.bucket.bucket_w};
    j["r_core"] = c.bucket.r_core;
    j["scale_qk"] = c.scale_qk;
    return j;
}

ToyModelConfig config_from_json(const nlohmann::json& j) {
    ToyModelConfig c;
    c.blocks = j.at("blocks").get<int>();
    c.heads = j.at("heads").get<int>();
    c.width = j.at("width").get<int>();
    c.ffn_hidden = j.at("ffn_hidden").get<int>();
    const auto g = j.at("grid");
    c.grid = VideoGrid(g.at(0).get<int>(), g.at(1).get<int>(), g.at(2).get<int>());
    const auto t = j.at("tile");
    c.tile = TileGeometry{t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>(),
                          t.at(3).get<int>(), t.at(4).get<int>(), t.at(5).get<int>()};
    const auto b = j.at("bucket");
    c.bucket = BucketGeometry{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                              j.at("r_core").get<double>()};
    c.scale_qk = j.at("scale_qk").get<bool>();
    return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const ModelState& state) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["format"] = 1;
    manifest["config"] = config_to_json(state.config);
    manifest["groups"] = nlohmann::ordered_json::array(
        {{{"name", "base"}, {"frozen", state.base_frozen}},
         {{"name", "router"}, {"frozen", state.router_frozen}}});
    auto tensors = nlohmann::ordered_json::array();
    for (const ParamRef& r : param_refs_const(state)) {
        const std::string file = r.name + ".vrta";
        write_matrix(dir / file, *r.tensor);
        tensors.push_back({{"name", r.name},
                           {"group", r.router ? "router" : "base"},
                           {"rows", r.tensor->rows()},
                           {"cols", r.tensor->cols()},
                           {"file", file}});
    }
    manifest["tensors"] = std::move(tensors);
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) {
        throw IoError("cannot write checkpoint manifest in " + dir.string());
    }
    out << manifest.dump(2) << '\n';
}

ModelState load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) {
        throw IoError("missing checkpoint manifest: " + (dir / "manifest.json").string() +
                      " (run the train command first)");
    }
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const std::exception& e) {
        throw IoError("malformed checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.at("format").get<int>() != 1) {
        throw IoError("unsupported checkpoint format version");
    }
    ModelState state;
    state.config = config_from_json(manifest.at("config"));
    state.config.validate();
    state = ModelState::init(state.config, 0);  // allocate shapes, then overwrite
    state.config.validate();
    for (const auto& g : manifest.at("groups")) {
        if (g.at("name") == "base") {
            state.base_frozen = g.at("frozen").get<bool>();
        } else if (g.at("name") == "router") {
            state.router_frozen = g.at("frozen").get<bool>();
        }
    }
    auto refs = param_refs(state);
    for (const auto& t : manifest.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        bool found = false;
        for (const ParamRef& r : refs) {
            if (r.name == name) {
                Matrix m = read_matrix(dir / t.at("file").get<std::string>());
                if (m.rows() != r.tensor->rows() || m.cols() != r.tensor->cols()) {
                    throw IoError("checkpoint tensor shape mismatch for " + name);
                }
                *r.tensor = std::move(m);
                found = true;
                break;
            }
        }
        if (!found) {
            throw IoError("checkpoint names unknown tensor " + name);
        }
    }
    return state;
}

}  // namespace vrta
