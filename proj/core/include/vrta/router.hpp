#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vrta/coreset.hpp"
#include "vrta/sequence.hpp"
#include "vrta/sliding_tile.hpp"

namespace vrta {

enum class Branch : int { Full = 0, Sliding = 1, Coreset = 2 };

const char* branch_name(Branch b);
Branch branch_from_name(const std::string& name);

// Per-block router projection: width d x (3 * heads), one 3-logit group
// per head.
struct RouterWeights {
    std::vector<Matrix> per_block;

    int blocks() const { return static_cast<int>(per_block.size()); }
    int heads() const { return per_block.empty() ? 0 : per_block[0].cols() / 3; }
};

// Softmax gate triples, one per (block, head). Each triple is non-negative
// and sums to 1.
struct GateValues {
    std::vector<Matrix> per_block;  // heads x 3

    int blocks() const { return static_cast<int>(per_block.size()); }
    int heads() const { return per_block.empty() ? 0 : per_block[0].rows(); }
    std::array<double, 3> triple(int block, int head) const;
};

// Gates for one block: softmax over each head's 3 logits of temb * w.
Matrix compute_block_gates(const std::vector<double>& temb, const Matrix& block_weights);
GateValues compute_gates(const std::vector<double>& temb, const RouterWeights& w);

// Hard selection: Sliding or Coreset only on a strictly largest gate,
// Full otherwise (all ties included).
Branch route_hard(const std::array<double, 3>& alpha);

struct BranchTally {
    std::array<std::int64_t, 3> count = {0, 0, 0};
    void add(Branch b) { ++count[static_cast<int>(b)]; }
};

// One multi-head attention block where every head runs only its chosen
// branch; head outputs are concatenated in head order.
FeatureSequence routed_block_forward_hard(const FeatureSequence& h, const ProjectionSet& p,
                                          const TileGeometry& tile, const BucketGeometry& bucket,
                                          const std::vector<Branch>& choice_per_head,
                                          bool scale_qk = true, BranchTally* tally = nullptr);

// Soft mixture: per head, alpha_full * full + alpha_sliding * sliding +
// alpha_coreset * coreset. `gates` is heads x 3.
FeatureSequence routed_block_forward_soft(const FeatureSequence& h, const ProjectionSet& p,
                                          const TileGeometry& tile, const BucketGeometry& bucket,
                                          const Matrix& gates, bool scale_qk = true);

// Gate dump rows, CSV header `step,block,head,alpha_full,alpha_sliding,alpha_coreset,choice`.
struct GateDumpRow {
    int step = 0;
    int block = 0;
    int head = 0;
    std::array<double, 3> alpha = {0.0, 0.0, 0.0};
    Branch choice = Branch::Full;
};

void write_gate_dump_csv(const std::filesystem::path& path,
                         const std::vector<GateDumpRow>& rows);
std::vector<GateDumpRow> read_gate_dump_csv(const std::filesystem::path& path);

}  // namespace vrta
