#include "vrta/attention.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "vrta/error.hpp"

namespace vrta {

namespace {

// Loop matmul, kept independent of the BLAS-backed executors so the oracle
// is a genuinely separate computation route.
Matrix slow_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) {
                continue;
            }
            for (int j = 0; j < b.cols(); ++j) {
                c(i, j) += aik * b(k, j);
            }
        }
    }
    return c;
}

void require_finite(const Matrix& m, const char* stage) {
    if (!m.all_finite()) {
        throw NumericError(std::string("attention: non-finite value at stage '") + stage + "'");
    }
}

void check_inputs(const FeatureSequence& h, const ProjectionSet& p) {
    h.require_finite("attention input");
    if (p.width() != h.width()) {
        throw ContractError("attention: projection width does not match feature width");
    }
    if (!p.wq.all_finite() || !p.wk.all_finite() || !p.wv.all_finite()) {
        throw NumericError("attention: non-finite value at stage 'projection weights'");
    }
}

}  // namespace

AttentionMask::AttentionMask(int n) : size(n) {
    if (n < 1) {
        throw ContractError("AttentionMask: size must be positive");
    }
    bits.assign(static_cast<std::size_t>(n) * n, 0);
}

AttentionMask AttentionMask::all_true(int n) {
    AttentionMask m(n);
    std::fill(m.bits.begin(), m.bits.end(), std::uint8_t{1});
    return m;
}

bool AttentionMask::rows_nonempty() const {
    for (int i = 0; i < size; ++i) {
        bool any = false;
        for (int j = 0; j < size; ++j) {
            if (at(i, j)) {
                any = true;
                break;
            }
        }
        if (!any) {
            return false;
        }
    }
    return true;
}

Matrix AttentionMask::to_matrix() const {
    Matrix m(size, size);
    for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
            m(i, j) = at(i, j) ? 1.0 : 0.0;
        }
    }
    return m;
}

Matrix attention_probs(const FeatureSequence& h, const ProjectionSet& p, const AttentionMask* m,
                       bool scale_qk) {
    check_inputs(h, p);
    const int L = h.tokens();
    const int d = h.width();
    if (m != nullptr && m->size != L) {
        throw ContractError("attention: mask size does not match sequence length");
    }

    const Matrix q = slow_matmul(h.data, p.wq);
    const Matrix k = slow_matmul(h.data, p.wk);
    require_finite(q, "q projection");
    require_finite(k, "k projection");

    const double s = scale_qk ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0;
    Matrix probs(L, L);
    std::vector<double> logits(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i) {
        double max_logit = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < L; ++j) {
            if (m != nullptr && !m->at(i, j)) {
                continue;
            }
            double dot = 0.0;
            for (int c = 0; c < d; ++c) {
                dot += q(i, c) * k(j, c);
            }
            const double l = dot * s;
            if (!std::isfinite(l)) {
                throw NumericError("attention: non-finite value at stage 'logits'");
            }
            logits[j] = l;
            max_logit = std::max(max_logit, l);
        }
        if (max_logit == -std::numeric_limits<double>::infinity()) {
            throw ContractError("masked_attention: fully masked query row " + std::to_string(i));
        }
        double denom = 0.0;
        for (int j = 0; j < L; ++j) {
            if (m != nullptr && !m->at(i, j)) {
                continue;
            }
            const double w = std::exp(logits[j] - max_logit);
            probs(i, j) = w;
            denom += w;
        }
        if (!(denom > 0.0) || !std::isfinite(denom)) {
            throw NumericError("attention: non-finite value at stage 'softmax'");
        }
        for (int j = 0; j < L; ++j) {
            probs(i, j) /= denom;
        }
    }
    return probs;
}

namespace {

FeatureSequence attend(const FeatureSequence& h, const ProjectionSet& p, const AttentionMask* m,
                       bool scale_qk) {
    const Matrix probs = attention_probs(h, p, m, scale_qk);
    const Matrix v = slow_matmul(h.data, p.wv);
    require_finite(v, "v projection");
    Matrix out = slow_matmul(probs, v);
    require_finite(out, "output");
    return FeatureSequence(h.grid, std::move(out));
}

}  // namespace

FeatureSequence full_attention(const FeatureSequence& h, const ProjectionSet& p, bool scale_qk) {
    return attend(h, p, nullptr, scale_qk);
}

FeatureSequence masked_attention(const FeatureSequence& h, const ProjectionSet& p,
                                 const AttentionMask& m, bool scale_qk) {
    if (m.size != h.tokens()) {
        throw ContractError("masked_attention: mask size does not match sequence length");
    }
    return attend(h, p, &m, scale_qk);
}

double recall_from_probs(const Matrix& probs, const VideoGrid& grid, int k) {
    const int L = grid.tokens();
    if (probs.rows() != L || probs.cols() != L) {
        throw ContractError("recall_from_probs: probability matrix does not match grid");
    }
    if (k < 1 || k > L) {
        throw ContractError("recall: k out of range [1, L]");
    }
    std::vector<int> order(static_cast<std::size_t>(L));
    std::vector<double> dist(static_cast<std::size_t>(L));
    double total = 0.0;
    for (int i = 0; i < L; ++i) {
        for (int j = 0; j < L; ++j) {
            dist[j] = spatial_distance(i, j, grid);
        }
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (dist[a] != dist[b]) {
                return dist[a] < dist[b];
            }
            return a < b;
        });
        double mass = 0.0;
        for (int r = 0; r < k; ++r) {
            mass += probs(i, order[r]);
        }
        total += mass;
    }
    return total / L;
}

double recall_by_nearest(const FeatureSequence& h, const ProjectionSet& p, int k) {
    const Matrix probs = attention_probs(h, p, nullptr, true);
    return recall_from_probs(probs, h.grid, k);
}

void write_recall_csv(const std::filesystem::path& path,
                      const std::vector<RecallCurve>& per_head) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << "head,k,recall\n";
    char buf[64];
    for (std::size_t head = 0; head < per_head.size(); ++head) {
        for (const RecallPoint& pt : per_head[head]) {
            std::snprintf(buf, sizeof(buf), "%.17g", pt.recall);
            out << head << ',' << pt.k << ',' << buf << '\n';
        }
    }
}

}  // namespace vrta
