#include "vrta/coreset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include "vrta/attention_exec.hpp"
#include "vrta/error.hpp"

namespace vrta {

namespace {

void check_geometry(const VideoGrid& grid, const BucketGeometry& geom, int* n_drop_out) {
    if (geom.bucket_f < 1 || geom.bucket_h < 1 || geom.bucket_w < 1) {
        throw GeometryError("bcs: bucket sizes must be positive");
    }
    if (grid.frames % geom.bucket_f != 0 || grid.height % geom.bucket_h != 0 ||
        grid.width % geom.bucket_w != 0) {
        throw GeometryError("bcs: bucket sizes must divide the grid dimensions");
    }
    if (!(geom.r_core > 0.0) || geom.r_core > 1.0) {
        throw GeometryError("bcs: r_core must lie in (0, 1]");
    }
    const double drop = geom.volume() * (1.0 - geom.r_core);
    const double rounded = std::round(drop);
    if (std::fabs(drop - rounded) > 1e-9) {
        throw GeometryError("bcs: volume * (1 - r_core) must be an integer, got " +
                            std::to_string(drop));
    }
    *n_drop_out = static_cast<int>(rounded);
}

}  // namespace

BucketPlan bcs_plan(const FeatureSequence& h, const BucketGeometry& geom) {
    BucketPlan plan;
    plan.grid = h.grid;
    plan.geom = geom;
    check_geometry(h.grid, geom, &plan.n_drop);

    const VideoGrid& g = h.grid;
    const int d = h.width();
    const int bf = g.frames / geom.bucket_f;
    const int bh = g.height / geom.bucket_h;
    const int bw = g.width / geom.bucket_w;
    const int vol = geom.volume();

    std::vector<double> norms(static_cast<std::size_t>(g.tokens()));
    for (int i = 0; i < g.tokens(); ++i) {
        double s = 0.0;
        const double* row = h.data.row(i);
        for (int c = 0; c < d; ++c) {
            s += row[c] * row[c];
        }
        norms[i] = std::sqrt(s);
    }
    auto cosine = [&](int a, int b) {
        if (norms[a] == 0.0 || norms[b] == 0.0) {
            return -std::numeric_limits<double>::infinity();
        }
        double dot = 0.0;
        const double* ra = h.data.row(a);
        const double* rb = h.data.row(b);
        for (int c = 0; c < d; ++c) {
            dot += ra[c] * rb[c];
        }
        return dot / (norms[a] * norms[b]);
    };

    plan.source_row.assign(static_cast<std::size_t>(g.tokens()), -1);
    std::vector<int> members(static_cast<std::size_t>(vol));
    std::vector<std::pair<double, int>> sims;  // (similarity, token)
    for (int f = 0; f < bf; ++f) {
        for (int hh = 0; hh < bh; ++hh) {
            for (int ww = 0; ww < bw; ++ww) {
                int m = 0;
                for (int df = 0; df < geom.bucket_f; ++df) {
                    for (int dh = 0; dh < geom.bucket_h; ++dh) {
                        for (int dw = 0; dw < geom.bucket_w; ++dw) {
                            members[m++] = flatten_index(f * geom.bucket_f + df,
                                                         hh * geom.bucket_h + dh,
                                                         ww * geom.bucket_w + dw, g);
                        }
                    }
                }
                Bucket bucket;
                bucket.center = flatten_index(f * geom.bucket_f + geom.bucket_f / 2,
                                              hh * geom.bucket_h + geom.bucket_h / 2,
                                              ww * geom.bucket_w + geom.bucket_w / 2, g);

                sims.clear();
                for (int i = 0; i < vol; ++i) {
                    if (members[i] == bucket.center) {
                        continue;
                    }
                    sims.emplace_back(cosine(bucket.center, members[i]), members[i]);
                    ++plan.similarity_evals;
                }
                // Most similar first; equal similarity drops the lower index first.
                std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
                    if (a.first != b.first) {
                        return a.first > b.first;
                    }
                    return a.second < b.second;
                });
                for (int i = 0; i < plan.n_drop; ++i) {
                    bucket.dropped.push_back(sims[i].second);
                }
                std::sort(bucket.dropped.begin(), bucket.dropped.end());

                bucket.kept.push_back(bucket.center);
                for (int i = 0; i < vol; ++i) {
                    if (members[i] == bucket.center ||
                        std::binary_search(bucket.dropped.begin(), bucket.dropped.end(),
                                           members[i])) {
                        continue;
                    }
                    bucket.kept.push_back(members[i]);
                }

                const int center_pooled_row = static_cast<int>(plan.pooled_rows.size());
                for (int t : bucket.kept) {
                    plan.source_row[t] = static_cast<int>(plan.pooled_rows.size());
                    plan.pooled_rows.push_back(t);
                }
                for (int t : bucket.dropped) {
                    plan.source_row[t] = center_pooled_row;
                }
                plan.buckets.push_back(std::move(bucket));
            }
        }
    }
    return plan;
}

FeatureSequence bcs_pool(const FeatureSequence& h, const BucketPlan& plan) {
    if (!(h.grid == plan.grid)) {
        throw ContractError("bcs_pool: plan was built for a different grid");
    }
    const int lc = plan.pooled_length();
    Matrix pooled(lc, h.width());
    for (int r = 0; r < lc; ++r) {
        const double* src = h.data.row(plan.pooled_rows[r]);
        std::copy(src, src + h.width(), pooled.row(r));
    }
    return FeatureSequence(VideoGrid(1, 1, lc), std::move(pooled));
}

FeatureSequence unpool_scatter(const Matrix& core_out, const BucketPlan& plan) {
    if (core_out.rows() != plan.pooled_length()) {
        throw ContractError("unpool_scatter: pooled output length " +
                            std::to_string(core_out.rows()) + " does not match plan length " +
                            std::to_string(plan.pooled_length()));
    }
    const int l = plan.grid.tokens();
    Matrix out(l, core_out.cols());
    for (int i = 0; i < l; ++i) {
        const double* src = core_out.row(plan.source_row[i]);
        std::copy(src, src + core_out.cols(), out.row(i));
    }
    return FeatureSequence(plan.grid, std::move(out));
}

CoresetAttentionResult coreset_attention(const FeatureSequence& h, const ProjectionSet& p,
                                         const BucketGeometry& geom, bool scale_qk) {
    h.require_finite("coreset_attention input");
    if (p.width() != h.width()) {
        throw ContractError("coreset_attention: projection width mismatch");
    }
    const BucketPlan plan = bcs_plan(h, geom);
    const FeatureSequence pooled = bcs_pool(h, plan);
    const int d = h.width();
    const double scale = scale_qk ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0;

    ExecCounters counters;
    const Matrix q = matmul(pooled.data, p.wq);
    const Matrix k = matmul(pooled.data, p.wk);
    const Matrix v = matmul(pooled.data, p.wv);
    const Matrix core_out = attend_full(q, k, v, scale, &counters);

    CoresetAttentionResult r{unpool_scatter(core_out, plan), counters.attention_macs,
                             plan.similarity_evals};
    return r;
}

void write_plan_csv(const std::filesystem::path& path, const BucketPlan& plan) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << "bucket,center,kept...,dropped...\n";
    for (std::size_t b = 0; b < plan.buckets.size(); ++b) {
        const Bucket& bucket = plan.buckets[b];
        out << b << ',' << bucket.center;
        for (int t : bucket.kept) {
            out << ',' << t;
        }
        for (int t : bucket.dropped) {
            out << ',' << t;
        }
        out << '\n';
    }
}

}  // namespace vrta
