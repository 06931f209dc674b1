#pragma once

#include <cstdint>
#include <vector>

#include "vrta/matrix.hpp"
#include "vrta/sliding_tile.hpp"

namespace vrta {

// Multiply-accumulate counters kept by the fast executors. Incremented
// analytically at each kernel call site so totals are integer exact.
struct ExecCounters {
    std::uint64_t attention_macs = 0;
    std::uint64_t aux_macs = 0;
};

// softmax(q k^T * scale) v on already projected inputs, BLAS backed.
// q is Lq x d, k and v are Lk x d.
Matrix attend_full(const Matrix& q, const Matrix& k, const Matrix& v, double scale,
                   ExecCounters* counters = nullptr);

// Same semantics restricted to the active blocks of a tile mask; skips
// fully masked tile blocks entirely. q, k, v are L x d on the mask's grid.
Matrix attend_block_sparse(const Matrix& q, const Matrix& k, const Matrix& v,
                           const TileMask& mask, double scale,
                           ExecCounters* counters = nullptr);

// Float32 twins used by the benchmarking paths only.
struct BufF32 {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;
};

BufF32 to_f32(const Matrix& m);
BufF32 attend_full_f32(const BufF32& q, const BufF32& k, const BufF32& v, float scale);
BufF32 attend_block_sparse_f32(const BufF32& q, const BufF32& k, const BufF32& v,
                               const TileMask& mask, float scale);

}  // namespace vrta
