#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vrta/sequence.hpp"

namespace vrta {

// Boolean L x L attention mask, true = attend. The oracle rejects masks
// with a fully false row.
struct AttentionMask {
    int size = 0;
    std::vector<std::uint8_t> bits;  // row-major, size*size

    AttentionMask() = default;
    explicit AttentionMask(int size);
    static AttentionMask all_true(int size);

    bool at(int i, int j) const { return bits[static_cast<std::size_t>(i) * size + j] != 0; }
    void set(int i, int j, bool v) {
        bits[static_cast<std::size_t>(i) * size + j] = v ? 1 : 0;
    }

    bool rows_nonempty() const;
    Matrix to_matrix() const;  // 0/1 payload, for tensor export
};

// One recall curve: attention mass captured by the k spatially nearest keys,
// mean over queries, for each probed k.
struct RecallPoint {
    int k = 0;
    double recall = 0.0;
};
using RecallCurve = std::vector<RecallPoint>;

// Dense reference attention, softmax((H Wq)(H Wk)^T * s)(H Wv) with
// s = 1/sqrt(d) when scale_qk is set and s = 1 otherwise. Deliberately
// plain O(L^2 d) loops: this is the trusted oracle.
FeatureSequence full_attention(const FeatureSequence& h, const ProjectionSet& p, bool scale_qk);

// Same, restricted per query to the unmasked keys.
FeatureSequence masked_attention(const FeatureSequence& h, const ProjectionSet& p,
                                 const AttentionMask& m, bool scale_qk);

// Debug accessor: the post-softmax weight matrix (rows sum to 1 over the
// allowed keys). Pass nullptr for the dense case.
Matrix attention_probs(const FeatureSequence& h, const ProjectionSet& p,
                       const AttentionMask* m, bool scale_qk);

// Mean over queries of the attention mass on the k nearest keys (Euclidean
// grid distance, ties broken by lower token index). k in [1, L].
double recall_by_nearest(const FeatureSequence& h, const ProjectionSet& p, int k);
double recall_from_probs(const Matrix& probs, const VideoGrid& grid, int k);

// CSV export with header `head,k,recall`.
void write_recall_csv(const std::filesystem::path& path,
                      const std::vector<RecallCurve>& per_head);

}  // namespace vrta
