#include "vrta/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>

#include "vrta/attention.hpp"
#include "vrta/attention_exec.hpp"
#include "vrta/error.hpp"
#include "vrta/tape.hpp"

namespace vrta {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Smallest observable nonzero clock increment, in milliseconds.
double estimate_tick_ms() {
    double best = 1e9;
    for (int i = 0; i < 16; ++i) {
        const auto a = Clock::now();
        auto b = Clock::now();
        while (b == a) {
            b = Clock::now();
        }
        best = std::min(best, std::chrono::duration<double, std::milli>(b - a).count());
    }
    return best;
}

std::uint64_t fnv_bytes(const void* data, std::size_t bytes, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

int coreset_length(const VideoGrid& grid, const BucketGeometry& bucket) {
    const int vol = bucket.volume();
    const int n_drop = static_cast<int>(std::llround(vol * (1.0 - bucket.r_core)));
    return grid.tokens() / vol * (vol - n_drop);
}

}  // namespace

FlopReport flop_count(Branch branch, const VideoGrid& grid, int d, const TileGeometry& tile,
                      const BucketGeometry& bucket) {
    const std::uint64_t l = static_cast<std::uint64_t>(grid.tokens());
    const std::uint64_t dd = static_cast<std::uint64_t>(d);
    FlopReport r;
    r.branch = branch;
    switch (branch) {
        case Branch::Full:
            r.attention_macs = 2 * l * l * dd;
            r.aux_macs = 3 * l * dd * dd;
            break;
        case Branch::Sliding: {
            const TileMask mask(grid, tile);
            const std::uint64_t tv = static_cast<std::uint64_t>(mask.tile_volume());
            r.attention_macs =
                2 * dd * tv * tv * static_cast<std::uint64_t>(mask.active_blocks());
            r.aux_macs = 3 * l * dd * dd;
            break;
        }
        case Branch::Coreset: {
            const std::uint64_t lc = static_cast<std::uint64_t>(coreset_length(grid, bucket));
            const std::uint64_t vol = static_cast<std::uint64_t>(bucket.volume());
            r.attention_macs = 2 * lc * lc * dd;
            // Projections over the pooled sequence plus one d-MAC cosine
            // evaluation per compared token; pooling itself is copies.
            r.aux_macs = 3 * lc * dd * dd + (l - l / vol) * dd;
            break;
        }
    }
    return r;
}

namespace {

struct BenchInputs {
    Matrix h;
    ProjectionSet p;
    TileMask mask;

    BenchInputs(const BenchDims& dims, const TileGeometry& tile, std::uint64_t seed)
        : mask(dims.grid, tile) {
        Rng rng = Rng(seed).fork("bench");
        h = Matrix::randn(dims.grid.tokens(), dims.d, rng);
        const double sd = 1.0 / std::sqrt(static_cast<double>(dims.d));
        p = ProjectionSet::randn(dims.d, rng, sd);
    }
};

Matrix slice_cols_plain(const Matrix& m, int c0, int width) {
    Matrix s(m.rows(), width);
    for (int r = 0; r < m.rows(); ++r) {
        std::copy(m.row(r) + c0, m.row(r) + c0 + width, s.row(r));
    }
    return s;
}

// One full branch execution at f64; returns the output for checksumming.
Matrix run_branch_f64(Branch branch, const BenchInputs& in, const BenchDims& dims,
                      const BucketGeometry& bucket) {
    const int dh = dims.d / dims.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix out(in.h.rows(), dims.d);
    switch (branch) {
        case Branch::Full:
        case Branch::Sliding: {
            const Matrix q = matmul(in.h, in.p.wq);
            const Matrix k = matmul(in.h, in.p.wk);
            const Matrix v = matmul(in.h, in.p.wv);
            for (int head = 0; head < dims.heads; ++head) {
                const Matrix qh = slice_cols_plain(q, head * dh, dh);
                const Matrix kh = slice_cols_plain(k, head * dh, dh);
                const Matrix vh = slice_cols_plain(v, head * dh, dh);
                const Matrix oh = branch == Branch::Full
                                      ? attend_full(qh, kh, vh, scale)
                                      : attend_block_sparse(qh, kh, vh, in.mask, scale);
                for (int r = 0; r < oh.rows(); ++r) {
                    std::copy(oh.row(r), oh.row(r) + dh, out.row(r) + head * dh);
                }
            }
            return out;
        }
        case Branch::Coreset: {
            // Selection happens per call: it is part of the branch cost.
            const BucketPlan plan = bcs_plan(FeatureSequence(dims.grid, in.h), bucket);
            const FeatureSequence pooled = bcs_pool(FeatureSequence(dims.grid, in.h), plan);
            const Matrix q = matmul(pooled.data, in.p.wq);
            const Matrix k = matmul(pooled.data, in.p.wk);
            const Matrix v = matmul(pooled.data, in.p.wv);
            for (int head = 0; head < dims.heads; ++head) {
                const Matrix qh = slice_cols_plain(q, head * dh, dh);
                const Matrix kh = slice_cols_plain(k, head * dh, dh);
                const Matrix vh = slice_cols_plain(v, head * dh, dh);
                const Matrix oh = attend_full(qh, kh, vh, scale);
                for (int i = 0; i < dims.grid.tokens(); ++i) {
                    std::copy(oh.row(plan.source_row[i]), oh.row(plan.source_row[i]) + dh,
                              out.row(i) + head * dh);
                }
            }
            return out;
        }
    }
    throw ContractError("bench: invalid branch");
}

BufF32 matmul_f32(const BufF32& a, const BufF32& b) {
    BufF32 c{a.rows, b.cols, std::vector<float>(static_cast<std::size_t>(a.rows) * b.cols)};
    gemm_f32(a.rows, b.cols, a.cols, a.data.data(), a.cols, false, b.data.data(), b.cols, false,
             c.data.data(), b.cols);
    return c;
}

BufF32 slice_cols_f32(const BufF32& m, int c0, int width) {
    BufF32 s{m.rows, width, std::vector<float>(static_cast<std::size_t>(m.rows) * width)};
    for (int r = 0; r < m.rows; ++r) {
        const float* src = m.data.data() + static_cast<std::size_t>(r) * m.cols + c0;
        std::copy(src, src + width, s.data.data() + static_cast<std::size_t>(r) * width);
    }
    return s;
}

BufF32 run_branch_f32(Branch branch, const BenchInputs& in, const BenchDims& dims,
                      const BucketGeometry& bucket, const BufF32& h32, const BufF32& wq32,
                      const BufF32& wk32, const BufF32& wv32) {
    const int dh = dims.d / dims.heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    const int l = dims.grid.tokens();
    BufF32 out{l, dims.d, std::vector<float>(static_cast<std::size_t>(l) * dims.d)};
    auto paste = [&](const BufF32& oh, int head, const std::vector<int>* source_row) {
        for (int i = 0; i < l; ++i) {
            const int src_row = source_row == nullptr ? i : (*source_row)[i];
            const float* src = oh.data.data() + static_cast<std::size_t>(src_row) * dh;
            std::copy(src, src + dh, out.data.data() + static_cast<std::size_t>(i) * dims.d +
                                         head * dh);
        }
    };
    if (branch == Branch::Coreset) {
        // Token selection stays in f64 (it is O(L d) and not the hot loop).
        const BucketPlan plan = bcs_plan(FeatureSequence(dims.grid, in.h), bucket);
        const int lc = plan.pooled_length();
        BufF32 pooled{lc, dims.d, std::vector<float>(static_cast<std::size_t>(lc) * dims.d)};
        for (int r = 0; r < lc; ++r) {
            const float* src =
                h32.data.data() + static_cast<std::size_t>(plan.pooled_rows[r]) * dims.d;
            std::copy(src, src + dims.d,
                      pooled.data.data() + static_cast<std::size_t>(r) * dims.d);
        }
        const BufF32 q = matmul_f32(pooled, wq32);
        const BufF32 k = matmul_f32(pooled, wk32);
        const BufF32 v = matmul_f32(pooled, wv32);
        for (int head = 0; head < dims.heads; ++head) {
            const BufF32 oh = attend_full_f32(slice_cols_f32(q, head * dh, dh),
                                              slice_cols_f32(k, head * dh, dh),
                                              slice_cols_f32(v, head * dh, dh), scale);
            paste(oh, head, &plan.source_row);
        }
        return out;
    }
    const BufF32 q = matmul_f32(h32, wq32);
    const BufF32 k = matmul_f32(h32, wk32);
    const BufF32 v = matmul_f32(h32, wv32);
    for (int head = 0; head < dims.heads; ++head) {
        const BufF32 qh = slice_cols_f32(q, head * dh, dh);
        const BufF32 kh = slice_cols_f32(k, head * dh, dh);
        const BufF32 vh = slice_cols_f32(v, head * dh, dh);
        const BufF32 oh = branch == Branch::Full
                              ? attend_full_f32(qh, kh, vh, scale)
                              : attend_block_sparse_f32(qh, kh, vh, in.mask, scale);
        paste(oh, head, nullptr);
    }
    return out;
}

}  // namespace

BenchRecord bench(Branch branch, const BenchDims& dims, const TileGeometry& tile,
                  const BucketGeometry& bucket, int reps, std::uint64_t seed, bool f32) {
    if (reps < 3) {
        throw ContractError("bench: reps must be >= 3");
    }
    if (dims.heads < 1 || dims.d % dims.heads != 0) {
        throw ContractError("bench: heads must divide d");
    }
    const BenchInputs in(dims, tile, seed);
    BufF32 h32, wq32, wk32, wv32;
    if (f32) {
        h32 = to_f32(in.h);
        wq32 = to_f32(in.p.wq);
        wk32 = to_f32(in.p.wk);
        wv32 = to_f32(in.p.wv);
    }

    std::vector<double> times;
    std::uint64_t checksum = 14695981039346656037ull;
    for (int r = 0; r < reps + 1; ++r) {  // first rep is warmup
        const auto t0 = Clock::now();
        std::uint64_t sum = 14695981039346656037ull;
        if (f32) {
            const BufF32 out = run_branch_f32(branch, in, dims, bucket, h32, wq32, wk32, wv32);
            sum = fnv_bytes(out.data.data(), out.data.size() * sizeof(float), sum);
        } else {
            const Matrix out = run_branch_f64(branch, in, dims, bucket);
            sum = fnv_bytes(out.data(), out.size() * sizeof(double), sum);
        }
        const double elapsed = ms_since(t0);
        if (r == 0) {
            checksum = sum;
            continue;
        }
        if (sum != checksum) {
            throw NumericError("bench: nondeterministic branch output across repetitions");
        }
        times.push_back(elapsed);
    }

    const double tick = estimate_tick_ms();
    const double min_t = *std::min_element(times.begin(), times.end());
    if (min_t < 10.0 * tick) {
        throw MeasurementError(
            "bench: timer resolution insufficient at these dims (" + std::to_string(min_t) +
            " ms per rep vs tick " + std::to_string(tick) + " ms); use larger dims");
    }

    BenchRecord rec;
    rec.branch = branch;
    rec.length = dims.grid.tokens();
    rec.d = dims.d;
    rec.heads = dims.heads;
    rec.reps = reps;
    std::vector<double> sorted = times;
    std::sort(sorted.begin(), sorted.end());
    rec.min_ms = sorted.front();
    rec.median_ms = sorted[sorted.size() / 2];
    double mean = 0.0;
    for (double t : times) {
        mean += t;
    }
    rec.mean_ms = mean / times.size();
    rec.checksum = checksum;
    return rec;
}

void write_bench_csv(const std::filesystem::path& path,
                     const std::vector<BenchRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << "branch,L,d,heads,reps,min_ms,median_ms,mean_ms,checksum\n";
    char buf[64];
    for (const BenchRecord& r : records) {
        out << branch_name(r.branch) << ',' << r.length << ',' << r.d << ',' << r.heads << ','
            << r.reps;
        for (double v : {r.min_ms, r.median_ms, r.mean_ms}) {
            std::snprintf(buf, sizeof(buf), "%.6f", v);
            out << ',' << buf;
        }
        out << ',' << r.checksum << '\n';
    }
}

std::vector<StepLatency> routed_step_latency(const std::vector<GateDumpRow>& dump,
                                             const BenchDims& dims, const TileGeometry& tile,
                                             const BucketGeometry& bucket, std::uint64_t seed) {
    const BenchInputs in(dims, tile, seed);
    const int dh = dims.d / dims.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // step -> (block, head) -> choice
    std::map<int, std::map<std::pair<int, int>, Branch>> by_step;
    for (const GateDumpRow& r : dump) {
        by_step[r.step][{r.block, r.head}] = r.choice;
    }

    std::vector<StepLatency> rows;
    for (const auto& [step, choices] : by_step) {
        StepLatency lat;
        lat.step = step;
        int last_block = -1;
        Matrix q, k, v;
        BucketPlan plan;
        Matrix qc, kc, vc;
        for (const auto& [bh, choice] : choices) {
            if (bh.first != last_block) {
                bool block_has_coreset = false;
                for (const auto& [bh2, c2] : choices) {
                    if (bh2.first == bh.first && c2 == Branch::Coreset) {
                        block_has_coreset = true;
                        break;
                    }
                }
                const auto t0 = Clock::now();
                q = matmul(in.h, in.p.wq);
                k = matmul(in.h, in.p.wk);
                v = matmul(in.h, in.p.wv);
                if (block_has_coreset) {
                    plan = bcs_plan(FeatureSequence(dims.grid, in.h), bucket);
                    const FeatureSequence pooled =
                        bcs_pool(FeatureSequence(dims.grid, in.h), plan);
                    qc = matmul(pooled.data, in.p.wq);
                    kc = matmul(pooled.data, in.p.wk);
                    vc = matmul(pooled.data, in.p.wv);
                }
                lat.aux_ms += ms_since(t0);
                last_block = bh.first;
            }
            const int head = bh.second;
            const auto t0 = Clock::now();
            switch (choice) {
                case Branch::Full:
                    attend_full(slice_cols_plain(q, head * dh, dh),
                                slice_cols_plain(k, head * dh, dh),
                                slice_cols_plain(v, head * dh, dh), scale);
                    break;
                case Branch::Sliding:
                    attend_block_sparse(slice_cols_plain(q, head * dh, dh),
                                        slice_cols_plain(k, head * dh, dh),
                                        slice_cols_plain(v, head * dh, dh), in.mask, scale);
                    break;
                case Branch::Coreset:
                    attend_full(slice_cols_plain(qc, head * dh, dh),
                                slice_cols_plain(kc, head * dh, dh),
                                slice_cols_plain(vc, head * dh, dh), scale);
                    break;
            }
            lat.attn_ms += ms_since(t0);
        }
        rows.push_back(lat);
    }
    return rows;
}

void write_step_latency_csv(const std::filesystem::path& path,
                            const std::vector<StepLatency>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << "step,attn_ms,aux_ms,total_ms\n";
    char buf[64];
    for (const StepLatency& r : rows) {
        out << r.step;
        for (double v : {r.attn_ms, r.aux_ms, r.attn_ms + r.aux_ms}) {
            std::snprintf(buf, sizeof(buf), "%.6f", v);
            out << ',' << buf;
        }
        out << '\n';
    }
}

std::vector<RecallSweepRow> recall_sweep(const ModelState& state, const std::vector<int>& k_grid,
                                         int steps, std::uint64_t seed) {
    if (steps < 1) {
        throw ContractError("recall_sweep: steps must be >= 1");
    }
    const ToyModelConfig& cfg = state.config;
    for (int k : k_grid) {
        if (k < 1 || k > cfg.grid.tokens()) {
            throw ContractError("recall_sweep: k out of range [1, L]");
        }
    }
    Rng noise = Rng(seed).fork("sample-noise");
    Matrix x = Matrix::randn(cfg.grid.tokens(), cfg.width, noise);

    std::vector<RecallSweepRow> rows;
    const double dt = 1.0 / steps;
    for (int step = 0; step < steps; ++step) {
        const double t = static_cast<double>(step) / steps;
        const std::vector<std::vector<Matrix>> probs = dense_attention_probs(state, x, t);
        for (int n = 0; n < cfg.blocks; ++n) {
            for (int head = 0; head < cfg.heads; ++head) {
                for (int k : k_grid) {
                    rows.push_back(RecallSweepRow{
                        step, n, head, k, recall_from_probs(probs[n][head], cfg.grid, k)});
                }
            }
        }
        const ForwardResult fr = model_forward(state, x, t, ForwardMode::Dense);
        axpy(x, fr.velocity, dt);
    }
    return rows;
}

void write_recall_sweep_csv(const std::filesystem::path& path,
                            const std::vector<RecallSweepRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << "step,block,head,k,recall\n";
    char buf[64];
    for (const RecallSweepRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.recall);
        out << r.step << ',' << r.block << ',' << r.head << ',' << r.k << ',' << buf << '\n';
    }
}

AvgPoolResult average_pool_baseline(const FeatureSequence& h, const ProjectionSet& p, int kf,
                                    int kh, int kw, bool scale_qk) {
    const VideoGrid& g = h.grid;
    if (kf < 1 || kh < 1 || kw < 1 || g.frames % kf != 0 || g.height % kh != 0 ||
        g.width % kw != 0) {
        throw GeometryError("average_pool_baseline: kernel must divide the grid dimensions");
    }
    const int d = h.width();
    const int cells_f = g.frames / kf;
    const int cells_h = g.height / kh;
    const int cells_w = g.width / kw;
    const int num_cells = cells_f * cells_h * cells_w;
    const int cell_vol = kf * kh * kw;

    Matrix pooled(num_cells, d);
    std::vector<int> cell_of(static_cast<std::size_t>(g.tokens()));
    int cell = 0;
    for (int cf = 0; cf < cells_f; ++cf) {
        for (int ch = 0; ch < cells_h; ++ch) {
            for (int cw = 0; cw < cells_w; ++cw, ++cell) {
                double* dst = pooled.row(cell);
                for (int df = 0; df < kf; ++df) {
                    for (int dh2 = 0; dh2 < kh; ++dh2) {
                        for (int dw = 0; dw < kw; ++dw) {
                            const int tok = flatten_index(cf * kf + df, ch * kh + dh2,
                                                          cw * kw + dw, g);
                            cell_of[tok] = cell;
                            const double* src = h.data.row(tok);
                            for (int c = 0; c < d; ++c) {
                                dst[c] += src[c];
                            }
                        }
                    }
                }
                for (int c = 0; c < d; ++c) {
                    dst[c] /= cell_vol;
                }
            }
        }
    }

    const double scale = scale_qk ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0;
    ExecCounters counters;
    const Matrix q = matmul(pooled, p.wq);
    const Matrix k = matmul(pooled, p.wk);
    const Matrix v = matmul(pooled, p.wv);
    const Matrix core = attend_full(q, k, v, scale, &counters);

    Matrix out(g.tokens(), d);
    for (int i = 0; i < g.tokens(); ++i) {
        std::copy(core.row(cell_of[i]), core.row(cell_of[i]) + d, out.row(i));
    }
    return AvgPoolResult{FeatureSequence(g, std::move(out)), counters.attention_macs};
}

std::vector<HeatmapCell> export_gate_heatmap(const std::vector<GateDumpRow>& dump,
                                             int num_intervals) {
    if (dump.empty()) {
        throw ContractError("export_gate_heatmap: empty gate dump");
    }
    std::vector<int> steps;
    for (const GateDumpRow& r : dump) {
        steps.push_back(r.step);
    }
    std::sort(steps.begin(), steps.end());
    steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
    const int num_steps = static_cast<int>(steps.size());
    if (num_intervals < 1 || num_intervals > num_steps) {
        throw ContractError("export_gate_heatmap: intervals must lie in [1, distinct steps]");
    }
    std::map<int, int> interval_of_step;
    for (int i = 0; i < num_steps; ++i) {
        interval_of_step[steps[i]] = i * num_intervals / num_steps;
    }

    struct Accum {
        std::array<double, 3> sum = {0.0, 0.0, 0.0};
        int n = 0;
    };
    std::map<std::tuple<int, int, int>, Accum> acc;
    for (const GateDumpRow& r : dump) {
        Accum& a = acc[{interval_of_step[r.step], r.block, r.head}];
        for (int i = 0; i < 3; ++i) {
            a.sum[i] += r.alpha[i];
        }
        ++a.n;
    }

    std::vector<HeatmapCell> cells;
    for (const auto& [key, a] : acc) {
        HeatmapCell c;
        c.interval = std::get<0>(key);
        c.block = std::get<1>(key);
        c.head = std::get<2>(key);
        for (int i = 0; i < 3; ++i) {
            c.mean_alpha[i] = a.sum[i] / a.n;
        }
        c.dominant = route_hard(c.mean_alpha);
        c.confidence = c.mean_alpha[static_cast<int>(c.dominant)];
        cells.push_back(c);
    }
    return cells;
}

void write_heatmap_csv(const std::filesystem::path& path,
                       const std::vector<HeatmapCell>& cells) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << "interval,block,head,dominant,confidence\n";
    char buf[64];
    for (const HeatmapCell& c : cells) {
        std::snprintf(buf, sizeof(buf), "%.17g", c.confidence);
        out << c.interval << ',' << c.block << ',' << c.head << ',' << branch_name(c.dominant)
            << ',' << buf << '\n';
    }
}

}  // namespace vrta
