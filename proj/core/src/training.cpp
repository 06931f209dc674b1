#include "vrta/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "vrta/error.hpp"

namespace vrta {

void TrainConfig::validate() const {
    if (steps < 0) {
        throw ConfigError("train config: steps must be >= 0");
    }
    if (!(lr > 0.0) || batch < 1) {
        throw ConfigError("train config: lr must be positive and batch >= 1");
    }
    if (lambda_distill < 0.0 || lambda_reg < 0.0) {
        throw ConfigError("train config: loss weights must be non-negative");
    }
}

double cfm_loss(const Matrix& v_pred, const Matrix& x0, const Matrix& x1) {
    if (!v_pred.same_shape(x0) || !v_pred.same_shape(x1)) {
        throw ContractError("cfm_loss: shape mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < v_pred.size(); ++i) {
        const double d = v_pred.data()[i] - (x1.data()[i] - x0.data()[i]);
        s += d * d;
    }
    return s / static_cast<double>(v_pred.size());
}

double distill_loss(const Matrix& routed_final, const Matrix& dense_final) {
    if (!routed_final.same_shape(dense_final)) {
        throw ContractError("distill_loss: shape mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < routed_final.size(); ++i) {
        const double d = routed_final.data()[i] - dense_final.data()[i];
        s += d * d;
    }
    return s / static_cast<double>(routed_final.size());
}

double reg_loss(const GateValues& gates) {
    double s = 0.0;
    for (const Matrix& block : gates.per_block) {
        for (int h = 0; h < block.rows(); ++h) {
            s += block(h, 0) * block(h, 0);
        }
    }
    return s;
}

std::vector<BatchSample> draw_batch(const std::vector<Matrix>& dataset, int batch,
                                    const VideoGrid& grid, int width, Rng stream) {
    if (dataset.empty()) {
        throw ContractError("draw_batch: empty dataset");
    }
    std::vector<BatchSample> out;
    out.reserve(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) {
        BatchSample s;
        const std::uint64_t idx = stream.next_below(dataset.size());
        s.t = stream.next_unit();
        s.x0 = Matrix::randn(grid.tokens(), width, stream);
        s.x1 = dataset[static_cast<std::size_t>(idx)];
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

struct LossIds {
    Tape::Id cfm;
    Tape::Id distill;
    Tape::Id reg;
    Tape::Id total;
};

// Builds the full training loss for one sample on the given tape: a dense
// forward for the distillation target plus a soft-routed forward, sharing
// one set of parameter leaves.
LossIds build_sample_loss(Tape& tape, const ModelState& state, const ParamTapeIds& ids,
                          const BatchSample& sample, double lambda_distill, double lambda_reg,
                          const AttentionMask& mask) {
    Matrix x_t(sample.x0.rows(), sample.x0.cols());
    Matrix target(sample.x0.rows(), sample.x0.cols());
    for (std::size_t i = 0; i < x_t.size(); ++i) {
        x_t.data()[i] = sample.t * sample.x1.data()[i] + (1.0 - sample.t) * sample.x0.data()[i];
        target.data()[i] = sample.x1.data()[i] - sample.x0.data()[i];
    }
    const ForwardBuild dense =
        build_forward(tape, state, ids, x_t, sample.t, ForwardMode::Dense, mask);
    const ForwardBuild soft =
        build_forward(tape, state, ids, x_t, sample.t, ForwardMode::SoftRouted, mask);

    LossIds loss;
    loss.cfm = tape.mse(soft.velocity, tape.leaf(std::move(target)));
    loss.distill = tape.mse(soft.final_features, dense.final_features);
    Tape::Id reg = tape.sumsq_col(soft.gate_ids[0], 0);
    for (std::size_t n = 1; n < soft.gate_ids.size(); ++n) {
        reg = tape.add(reg, tape.sumsq_col(soft.gate_ids[n], 0));
    }
    loss.reg = reg;
    loss.total = tape.add(tape.add(loss.cfm, tape.scale(loss.distill, lambda_distill)),
                          tape.scale(loss.reg, lambda_reg));
    return loss;
}

std::vector<Matrix> zero_grads_like(const ModelState& state) {
    std::vector<Matrix> z;
    for (const ParamRef& r : param_refs_const(state)) {
        z.emplace_back(r.tensor->rows(), r.tensor->cols());
    }
    return z;
}

}  // namespace

GradientResult total_loss_and_grad(const ModelState& state,
                                   const std::vector<BatchSample>& batch, double lambda_distill,
                                   double lambda_reg, bool want_grads) {
    if (batch.empty()) {
        throw ContractError("total_loss_and_grad: empty batch");
    }
    const ToyModelConfig& cfg = state.config;
    const TileMask tile_mask(cfg.grid, cfg.tile);
    const AttentionMask mask = tile_mask.dense();

    GradientResult result;
    result.grads = want_grads ? zero_grads_like(state) : std::vector<Matrix>{};
    for (int n = 0; n < cfg.blocks; ++n) {
        result.mean_gates.emplace_back(cfg.heads, 3);
    }

    double cfm_sum = 0.0;
    double distill_sum = 0.0;
    double reg_sum = 0.0;
    for (const BatchSample& sample : batch) {
        Tape tape;
        const ParamTapeIds ids = register_params(tape, state);
        const LossIds loss =
            build_sample_loss(tape, state, ids, sample, lambda_distill, lambda_reg, mask);
        cfm_sum += tape.val(loss.cfm)(0, 0);
        distill_sum += tape.val(loss.distill)(0, 0);
        reg_sum += tape.val(loss.reg)(0, 0);

        // Recover the gate values for logging: they sit right before the
        // reg nodes; cheaper to recompute from the router weights.
        const std::vector<double> temb = timestep_embedding(sample.t, cfg.width);
        for (int n = 0; n < cfg.blocks; ++n) {
            const Matrix g = compute_block_gates(temb, state.blocks[n].router);
            axpy(result.mean_gates[n], g, 1.0 / batch.size());
        }

        if (want_grads) {
            tape.backward(loss.total);
            const std::vector<Matrix> g = collect_param_grads(tape, ids);
            for (std::size_t i = 0; i < g.size(); ++i) {
                axpy(result.grads[i], g[i], 1.0 / batch.size());
            }
        }
    }

    const double b = static_cast<double>(batch.size());
    result.loss.cfm = cfm_sum / b;
    result.loss.distill = distill_sum / b;
    result.loss.reg = reg_sum / b;
    result.loss.lambda_distill = lambda_distill;
    result.loss.lambda_reg = lambda_reg;
    result.loss.total = result.loss.cfm + lambda_distill * result.loss.distill +
                        lambda_reg * result.loss.reg;
    return result;
}

LossBreakdown total_loss(const ModelState& state, const std::vector<BatchSample>& batch,
                         double lambda_distill, double lambda_reg) {
    return total_loss_and_grad(state, batch, lambda_distill, lambda_reg, false).loss;
}

std::vector<Matrix> gradient(const ModelState& state, const std::vector<BatchSample>& batch,
                             double lambda_distill, double lambda_reg, ParamGroup group) {
    GradientResult r = total_loss_and_grad(state, batch, lambda_distill, lambda_reg, true);
    if (group == ParamGroup::RouterOnly) {
        const auto refs = param_refs_const(state);
        for (std::size_t i = 0; i < refs.size(); ++i) {
            if (!refs[i].router) {
                r.grads[i].fill(0.0);
            }
        }
    }
    for (const Matrix& g : r.grads) {
        if (!g.all_finite()) {
            throw NumericError("gradient: non-finite gradient entry");
        }
    }
    return std::move(r.grads);
}

ModelState pretrain_base(const ToyModelConfig& model_cfg, const TrainConfig& cfg,
                         const std::vector<Matrix>& dataset, PretrainLog* log) {
    cfg.validate();
    ModelState state = ModelState::init(model_cfg, cfg.seed);
    state.router_frozen = true;
    state.base_frozen = false;

    const TileMask tile_mask(model_cfg.grid, model_cfg.tile);
    const AttentionMask mask = tile_mask.dense();
    Rng root = Rng(cfg.seed);
    auto refs = param_refs(state);

    PretrainLog local;
    int over_budget = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        Rng stream = root.fork("pretrain").fork(static_cast<std::uint64_t>(step));
        const std::vector<BatchSample> batch =
            draw_batch(dataset, cfg.batch, model_cfg.grid, model_cfg.width, stream);

        std::vector<Matrix> grads = zero_grads_like(state);
        double loss_sum = 0.0;
        for (const BatchSample& sample : batch) {
            Matrix x_t(sample.x0.rows(), sample.x0.cols());
            Matrix target(sample.x0.rows(), sample.x0.cols());
            for (std::size_t i = 0; i < x_t.size(); ++i) {
                x_t.data()[i] =
                    sample.t * sample.x1.data()[i] + (1.0 - sample.t) * sample.x0.data()[i];
                target.data()[i] = sample.x1.data()[i] - sample.x0.data()[i];
            }
            Tape tape;
            const ParamTapeIds ids = register_params(tape, state);
            const ForwardBuild fb =
                build_forward(tape, state, ids, x_t, sample.t, ForwardMode::Dense, mask);
            const Tape::Id loss = tape.mse(fb.velocity, tape.leaf(std::move(target)));
            loss_sum += tape.val(loss)(0, 0);
            tape.backward(loss);
            const std::vector<Matrix> g = collect_param_grads(tape, ids);
            for (std::size_t i = 0; i < g.size(); ++i) {
                axpy(grads[i], g[i], 1.0 / batch.size());
            }
        }
        const double loss = loss_sum / batch.size();
        local.loss_per_step.push_back(loss);
        if (step == 0) {
            local.initial_loss = loss;
        }
        if (loss > 10.0 * local.initial_loss) {
            if (++over_budget >= 50) {
                throw TrainingError("pretrain_base: loss exceeded 10x the initial value for 50 "
                                    "consecutive steps");
            }
        } else {
            over_budget = 0;
        }
        for (std::size_t i = 0; i < refs.size(); ++i) {
            if (!refs[i].router) {
                axpy(*refs[i].tensor, grads[i], -cfg.lr);
            }
        }
    }
    if (!local.loss_per_step.empty()) {
        local.final_loss = local.loss_per_step.back();
        local.improved = local.final_loss < local.initial_loss;
    }
    state.base_frozen = true;
    state.router_frozen = false;
    if (log != nullptr) {
        *log = std::move(local);
    }
    return state;
}

RouterTrainLog train_router(ModelState& state, const TrainConfig& cfg,
                            const std::vector<Matrix>& dataset) {
    cfg.validate();
    const ToyModelConfig& mc = state.config;
    const std::uint64_t base_sum = group_checksum(state, false);
    Rng root = Rng(cfg.seed);
    auto refs = param_refs(state);

    RouterTrainLog log;
    for (int step = 0; step < cfg.steps; ++step) {
        Rng stream = root.fork("router").fork(static_cast<std::uint64_t>(step));
        const std::vector<BatchSample> batch =
            draw_batch(dataset, cfg.batch, mc.grid, mc.width, stream);
        GradientResult res =
            total_loss_and_grad(state, batch, cfg.lambda_distill, cfg.lambda_reg, true);

        RouterTrainRow row;
        row.step = step;
        row.loss = res.loss;
        for (int n = 0; n < mc.blocks; ++n) {
            for (int h = 0; h < mc.heads; ++h) {
                for (int b = 0; b < 3; ++b) {
                    row.mean_alpha[b] += res.mean_gates[n](h, b) / (mc.blocks * mc.heads);
                }
                GateDumpRow snap;
                snap.step = step;
                snap.block = n;
                snap.head = h;
                snap.alpha = {res.mean_gates[n](h, 0), res.mean_gates[n](h, 1),
                              res.mean_gates[n](h, 2)};
                snap.choice = route_hard(snap.alpha);
                log.gate_snapshots.push_back(snap);
            }
        }
        log.rows.push_back(row);

        for (std::size_t i = 0; i < refs.size(); ++i) {
            if (refs[i].router) {
                axpy(*refs[i].tensor, res.grads[i], -cfg.lr);
            }
        }
        if (group_checksum(state, false) != base_sum) {
            throw TrainingError("train_router: freeze contract violated, a base parameter "
                                "changed at step " +
                                std::to_string(step));
        }
    }
    return log;
}

void write_pretrain_log_csv(const std::filesystem::path& path, const PretrainLog& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << "step,cfm\n";
    char buf[64];
    for (std::size_t i = 0; i < log.loss_per_step.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", log.loss_per_step[i]);
        out << i << ',' << buf << '\n';
    }
}

void write_router_log_csv(const std::filesystem::path& path, const RouterTrainLog& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << "step,cfm,distill,reg,total,mean_alpha_full,mean_alpha_sliding,mean_alpha_coreset\n";
    char buf[64];
    auto emit = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << ',' << buf;
    };
    for (const RouterTrainRow& r : log.rows) {
        out << r.step;
        emit(r.loss.cfm);
        emit(r.loss.distill);
        emit(r.loss.reg);
        emit(r.loss.total);
        emit(r.mean_alpha[0]);
        emit(r.mean_alpha[1]);
        emit(r.mean_alpha[2]);
        out << '\n';
    }
}

}  // namespace vrta
