#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vrta/sequence.hpp"

namespace vrta {

// Bucket sizes in tokens per axis plus the kept-token ratio.
struct BucketGeometry {
    int bucket_f = 1;
    int bucket_h = 1;
    int bucket_w = 1;
    double r_core = 1.0;  // in (0, 1]

    int volume() const { return bucket_f * bucket_h * bucket_w; }

    bool operator==(const BucketGeometry&) const = default;
};

struct Bucket {
    int center = 0;            // token index of the bucket center
    std::vector<int> kept;     // center first, then survivors in original order
    std::vector<int> dropped;  // ascending token index
};

// Output of bucketed coreset selection: which tokens survive, where the
// dropped ones borrow their output from, and the pooled row order.
struct BucketPlan {
    VideoGrid grid;
    BucketGeometry geom;
    int n_drop = 0;
    std::vector<Bucket> buckets;
    std::vector<int> pooled_rows;     // token index of each pooled row, bucket by bucket
    std::vector<int> source_row;      // per original token: pooled row whose output it takes
    std::uint64_t similarity_evals = 0;

    int pooled_length() const { return static_cast<int>(pooled_rows.size()); }
};

// Runs the selection: per bucket, drops the n_drop non-center tokens most
// cosine-similar to the center (ties: lower token index dropped first).
// Exactly L * (1 - 1/volume) similarity evaluations, reported in the plan.
BucketPlan bcs_plan(const FeatureSequence& h, const BucketGeometry& geom);

// Rows of h restricted to the kept tokens, center first per bucket,
// buckets in flatten order. The result carries a flat (1,1,Lc) grid.
FeatureSequence bcs_pool(const FeatureSequence& h, const BucketPlan& plan);

// Scatters pooled outputs back to full length: kept tokens take their own
// row, dropped tokens take their bucket center's row.
FeatureSequence unpool_scatter(const Matrix& core_out, const BucketPlan& plan);

struct CoresetAttentionResult {
    FeatureSequence out;
    std::uint64_t attention_macs = 0;
    std::uint64_t similarity_evals = 0;
};

// unpool . attn . pool: full attention over the pooled coreset, scattered
// back to the original length.
CoresetAttentionResult coreset_attention(const FeatureSequence& h, const ProjectionSet& p,
                                         const BucketGeometry& geom, bool scale_qk = true);

// CSV export, header `bucket,center,kept...,dropped...`; every row lists
// the kept indices (volume * r_core of them) then the dropped indices.
void write_plan_csv(const std::filesystem::path& path, const BucketPlan& plan);

}  // namespace vrta
