#include "vrta/attention_exec.hpp"

#include <cmath>
#include <limits>

#include "vrta/error.hpp"

namespace vrta {

Matrix attend_full(const Matrix& q, const Matrix& k, const Matrix& v, double scale,
                   ExecCounters* counters) {
    const int lq = q.rows();
    const int lk = k.rows();
    const int d = q.cols();
    if (k.cols() != d || v.cols() != d || v.rows() != lk) {
        throw ContractError("attend_full: shape mismatch");
    }
    Matrix scores(lq, lk);
    gemm(q, false, k, true, scores, scale);
    for (int i = 0; i < lq; ++i) {
        double* row = scores.row(i);
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < lk; ++j) {
            m = std::max(m, row[j]);
        }
        double denom = 0.0;
        for (int j = 0; j < lk; ++j) {
            row[j] = std::exp(row[j] - m);
            denom += row[j];
        }
        const double inv = 1.0 / denom;
        for (int j = 0; j < lk; ++j) {
            row[j] *= inv;
        }
    }
    Matrix out(lq, d);
    gemm(scores, false, v, false, out);
    if (counters != nullptr) {
        counters->attention_macs += 2ull * static_cast<std::uint64_t>(lq) * lk * d;
    }
    return out;
}

Matrix attend_block_sparse(const Matrix& q, const Matrix& k, const Matrix& v,
                           const TileMask& mask, double scale, ExecCounters* counters) {
    const int l = mask.grid().tokens();
    const int d = q.cols();
    if (q.rows() != l || k.rows() != l || v.rows() != l || k.cols() != d || v.cols() != d) {
        throw ContractError("attend_block_sparse: shape mismatch with mask grid");
    }
    const int tiles = mask.num_tiles();
    const int tv = mask.tile_volume();

    Matrix out(l, d);
    Matrix qg(tv, d);
    for (int qt = 0; qt < tiles; ++qt) {
        const std::vector<int>& qtok = mask.tile_token_indices(qt);
        for (int r = 0; r < tv; ++r) {
            const double* src = q.row(qtok[r]);
            double* dst = qg.row(r);
            for (int c = 0; c < d; ++c) {
                dst[c] = src[c];
            }
        }
        // Gather the keys/values of every active block for this query tile.
        std::vector<int> keys;
        keys.reserve(static_cast<std::size_t>(tv) * 8);
        int active = 0;
        for (int kt = 0; kt < tiles; ++kt) {
            if (!mask.block_active(qt, kt)) {
                continue;
            }
            ++active;
            const std::vector<int>& ktok = mask.tile_token_indices(kt);
            keys.insert(keys.end(), ktok.begin(), ktok.end());
        }
        const int nk = static_cast<int>(keys.size());
        Matrix kg(nk, d);
        Matrix vg(nk, d);
        for (int r = 0; r < nk; ++r) {
            const double* ks = k.row(keys[r]);
            const double* vs = v.row(keys[r]);
            for (int c = 0; c < d; ++c) {
                kg(r, c) = ks[c];
                vg(r, c) = vs[c];
            }
        }
        Matrix scores(tv, nk);
        gemm(qg, false, kg, true, scores, scale);
        for (int i = 0; i < tv; ++i) {
            double* row = scores.row(i);
            double m = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < nk; ++j) {
                m = std::max(m, row[j]);
            }
            double denom = 0.0;
            for (int j = 0; j < nk; ++j) {
                row[j] = std::exp(row[j] - m);
                denom += row[j];
            }
            const double inv = 1.0 / denom;
            for (int j = 0; j < nk; ++j) {
                row[j] *= inv;
            }
        }
        Matrix og(tv, d);
        gemm(scores, false, vg, false, og);
        for (int r = 0; r < tv; ++r) {
            const double* src = og.row(r);
            double* dst = out.row(qtok[r]);
            for (int c = 0; c < d; ++c) {
                dst[c] = src[c];
            }
        }
        if (counters != nullptr) {
            counters->attention_macs += 2ull * static_cast<std::uint64_t>(tv) * nk * d;
        }
    }
    return out;
}

BufF32 to_f32(const Matrix& m) {
    BufF32 b;
    b.rows = m.rows();
    b.cols = m.cols();
    b.data.resize(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        b.data[i] = static_cast<float>(m.data()[i]);
    }
    return b;
}

BufF32 attend_full_f32(const BufF32& q, const BufF32& k, const BufF32& v, float scale) {
    const int lq = q.rows;
    const int lk = k.rows;
    const int d = q.cols;
    BufF32 scores{lq, lk, std::vector<float>(static_cast<std::size_t>(lq) * lk)};
    gemm_f32(lq, lk, d, q.data.data(), d, false, k.data.data(), d, true, scores.data.data(), lk,
             scale);
    for (int i = 0; i < lq; ++i) {
        float* row = scores.data.data() + static_cast<std::size_t>(i) * lk;
        float m = -std::numeric_limits<float>::infinity();
        for (int j = 0; j < lk; ++j) {
            m = std::max(m, row[j]);
        }
        float denom = 0.0f;
        for (int j = 0; j < lk; ++j) {
            row[j] = std::exp(row[j] - m);
            denom += row[j];
        }
        const float inv = 1.0f / denom;
        for (int j = 0; j < lk; ++j) {
            row[j] *= inv;
        }
    }
    BufF32 out{lq, d, std::vector<float>(static_cast<std::size_t>(lq) * d)};
    gemm_f32(lq, d, lk, scores.data.data(), lk, false, v.data.data(), d, false, out.data.data(),
             d);
    return out;
}

BufF32 attend_block_sparse_f32(const BufF32& q, const BufF32& k, const BufF32& v,
                               const TileMask& mask, float scale) {
    const int l = mask.grid().tokens();
    const int d = q.cols;
    const int tiles = mask.num_tiles();
    const int tv = mask.tile_volume();
    BufF32 out{l, d, std::vector<float>(static_cast<std::size_t>(l) * d)};
    std::vector<float> qg(static_cast<std::size_t>(tv) * d);
    for (int qt = 0; qt < tiles; ++qt) {
        const std::vector<int>& qtok = mask.tile_token_indices(qt);
        for (int r = 0; r < tv; ++r) {
            const float* src = q.data.data() + static_cast<std::size_t>(qtok[r]) * d;
            std::copy(src, src + d, qg.data() + static_cast<std::size_t>(r) * d);
        }
        std::vector<int> keys;
        for (int kt = 0; kt < tiles; ++kt) {
            if (mask.block_active(qt, kt)) {
                const std::vector<int>& ktok = mask.tile_token_indices(kt);
                keys.insert(keys.end(), ktok.begin(), ktok.end());
            }
        }
        const int nk = static_cast<int>(keys.size());
        std::vector<float> kg(static_cast<std::size_t>(nk) * d);
        std::vector<float> vg(static_cast<std::size_t>(nk) * d);
        for (int r = 0; r < nk; ++r) {
            const float* ks = k.data.data() + static_cast<std::size_t>(keys[r]) * d;
            const float* vs = v.data.data() + static_cast<std::size_t>(keys[r]) * d;
            std::copy(ks, ks + d, kg.data() + static_cast<std::size_t>(r) * d);
            std::copy(vs, vs + d, vg.data() + static_cast<std::size_t>(r) * d);
        }
        std::vector<float> scores(static_cast<std::size_t>(tv) * nk);
        gemm_f32(tv, nk, d, qg.data(), d, false, kg.data(), d, true, scores.data(), nk, scale);
        for (int i = 0; i < tv; ++i) {
            float* row = scores.data() + static_cast<std::size_t>(i) * nk;
            float m = -std::numeric_limits<float>::infinity();
            for (int j = 0; j < nk; ++j) {
                m = std::max(m, row[j]);
            }
            float denom = 0.0f;
            for (int j = 0; j < nk; ++j) {
                row[j] = std::exp(row[j] - m);
                denom += row[j];
            }
            const float inv = 1.0f / denom;
            for (int j = 0; j < nk; ++j) {
                row[j] *= inv;
            }
        }
        std::vector<float> og(static_cast<std::size_t>(tv) * d);
        gemm_f32(tv, d, nk, scores.data(), nk, false, vg.data(), d, false, og.data(), d);
        for (int r = 0; r < tv; ++r) {
            const float* src = og.data() + static_cast<std::size_t>(r) * d;
            std::copy(src, src + d, out.data.data() + static_cast<std::size_t>(qtok[r]) * d);
        }
    }
    return out;
}

}  // namespace vrta
