#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vrta/model.hpp"
#include "vrta/router.hpp"

namespace vrta {

// Closed-form multiply-accumulate counts for a single-head branch at
// width d. Convention: 1 MAC = 1 multiply + 1 add; FLOPs = 2 * MACs.
struct FlopReport {
    Branch branch = Branch::Full;
    std::uint64_t attention_macs = 0;
    std::uint64_t aux_macs = 0;  // projections, similarity, pooling

    std::uint64_t total() const { return attention_macs + aux_macs; }
};

FlopReport flop_count(Branch branch, const VideoGrid& grid, int d, const TileGeometry& tile,
                      const BucketGeometry& bucket);

struct BenchDims {
    VideoGrid grid{16, 16, 16};
    int d = 64;
    int heads = 1;
};

struct BenchRecord {
    Branch branch = Branch::Full;
    int length = 0;
    int d = 0;
    int heads = 0;
    int reps = 0;
    double min_ms = 0.0;
    double median_ms = 0.0;
    double mean_ms = 0.0;
    std::uint64_t checksum = 0;  // over the branch output bytes
};

// Times one branch (projections included; coreset also pays selection and
// pooling) on seeded random inputs. One warmup repetition is excluded.
// reps must be >= 3; f32 runs the 32-bit benchmarking path.
BenchRecord bench(Branch branch, const BenchDims& dims, const TileGeometry& tile,
                  const BucketGeometry& bucket, int reps, std::uint64_t seed,
                  bool f32 = false);

void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchRecord>& records);

// Per-sampling-step latency of a routed model, replayed from a gate dump
// (every (block, head) runs its recorded choice).
struct StepLatency {
    int step = 0;
    double attn_ms = 0.0;  // branch attention kernels
    double aux_ms = 0.0;   // projections and coreset selection/pooling
};

std::vector<StepLatency> routed_step_latency(const std::vector<GateDumpRow>& dump,
                                             const BenchDims& dims, const TileGeometry& tile,
                                             const BucketGeometry& bucket, std::uint64_t seed);

void write_step_latency_csv(const std::filesystem::path& path,
                            const std::vector<StepLatency>& rows);

// Recall-by-nearest-keys sweep along a dense sampling trajectory.
struct RecallSweepRow {
    int step = 0;
    int block = 0;
    int head = 0;
    int k = 0;
    double recall = 0.0;
};

std::vector<RecallSweepRow> recall_sweep(const ModelState& state, const std::vector<int>& k_grid,
                                         int steps, std::uint64_t seed);

void write_recall_sweep_csv(const std::filesystem::path& path,
                            const std::vector<RecallSweepRow>& rows);

// Average-pooling ablation: mean-pool each kernel cell, attend over the
// pooled sequence, broadcast outputs back to every cell member.
struct AvgPoolResult {
    FeatureSequence out;
    std::uint64_t attention_macs = 0;
};

AvgPoolResult average_pool_baseline(const FeatureSequence& h, const ProjectionSet& p, int kf,
                                    int kh, int kw, bool scale_qk = true);

// Gate heatmap: equal step intervals, mean gate triple per
// (interval, block, head), dominant branch of the mean with its value.
struct HeatmapCell {
    int interval = 0;
    int block = 0;
    int head = 0;
    Branch dominant = Branch::Full;
    double confidence = 0.0;
    std::array<double, 3> mean_alpha = {0.0, 0.0, 0.0};
};

std::vector<HeatmapCell> export_gate_heatmap(const std::vector<GateDumpRow>& dump,
                                             int num_intervals);

void write_heatmap_csv(const std::filesystem::path& path, const std::vector<HeatmapCell>& cells);

}  // namespace vrta
