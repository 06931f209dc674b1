#include "vrta/tape.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>

#include "vrta/error.hpp"

namespace vrta {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gauss_cdf(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2));
}
double gauss_pdf(double x) {
    return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}
}  // namespace

Tape::Id Tape::push(Matrix val, std::vector<Id> inputs, std::function<void(Tape&)> back) {
    Node n;
    n.val = std::move(val);
    n.inputs = std::move(inputs);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
}

Tape::Id Tape::leaf(Matrix v) {
    return push(std::move(v), {}, nullptr);
}

Tape::Id Tape::add(Id a, Id b) {
    const Id y = push(vrta::add(val(a), val(b)), {a, b}, nullptr);
    nodes_[y].back = [y, a, b](Tape& t) {
        axpy(t.grad_mut(a), t.grad(y), 1.0);
        axpy(t.grad_mut(b), t.grad(y), 1.0);
    };
    return y;
}

Tape::Id Tape::sub(Id a, Id b) {
    const Id y = push(vrta::sub(val(a), val(b)), {a, b}, nullptr);
    nodes_[y].back = [y, a, b](Tape& t) {
        axpy(t.grad_mut(a), t.grad(y), 1.0);
        axpy(t.grad_mut(b), t.grad(y), -1.0);
    };
    return y;
}

Tape::Id Tape::scale(Id a, double c) {
    Matrix v = val(a);
    v.scale_inplace(c);
    const Id y = push(std::move(v), {a}, nullptr);
    nodes_[y].back = [y, a, c](Tape& t) { axpy(t.grad_mut(a), t.grad(y), c); };
    return y;
}

Tape::Id Tape::matmul(Id a, Id b) {
    const Id y = push(vrta::matmul(val(a), val(b)), {a, b}, nullptr);
    nodes_[y].back = [y, a, b](Tape& t) {
        const Matrix& g = t.grad(y);
        gemm(g, false, t.val(b), true, t.grad_mut(a), 1.0, 1.0);  // da += g b^T
        gemm(t.val(a), true, g, false, t.grad_mut(b), 1.0, 1.0);  // db += a^T g
    };
    return y;
}

Tape::Id Tape::matmul_nt(Id a, Id b) {
    const Id y = push(vrta::matmul_nt(val(a), val(b)), {a, b}, nullptr);
    nodes_[y].back = [y, a, b](Tape& t) {
        const Matrix& g = t.grad(y);
        gemm(g, false, t.val(b), false, t.grad_mut(a), 1.0, 1.0);  // da += g b
        gemm(g, true, t.val(a), false, t.grad_mut(b), 1.0, 1.0);   // db += g^T a
    };
    return y;
}

Tape::Id Tape::add_row_broadcast(Id a, Id r) {
    const Matrix& av = val(a);
    const Matrix& rv = val(r);
    if (rv.rows() != 1 || rv.cols() != av.cols()) {
        throw ContractError("add_row_broadcast: r must be 1 x cols(a)");
    }
    Matrix out = av;
    for (int i = 0; i < out.rows(); ++i) {
        double* row = out.row(i);
        for (int c = 0; c < out.cols(); ++c) {
            row[c] += rv(0, c);
        }
    }
    const Id y = push(std::move(out), {a, r}, nullptr);
    nodes_[y].back = [y, a, r](Tape& t) {
        const Matrix& g = t.grad(y);
        axpy(t.grad_mut(a), g, 1.0);
        Matrix& rg = t.grad_mut(r);
        for (int i = 0; i < g.rows(); ++i) {
            const double* row = g.row(i);
            for (int c = 0; c < g.cols(); ++c) {
                rg(0, c) += row[c];
            }
        }
    };
    return y;
}

Tape::Id Tape::layer_norm(Id x, Id gamma, Id beta, double eps) {
    const Matrix& xv = val(x);
    const Matrix& gv = val(gamma);
    const Matrix& bv = val(beta);
    const int rows = xv.rows();
    const int d = xv.cols();
    if (gv.rows() != 1 || gv.cols() != d || bv.rows() != 1 || bv.cols() != d) {
        throw ContractError("layer_norm: gamma/beta must be 1 x d");
    }
    auto xhat = std::make_shared<Matrix>(rows, d);
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    Matrix out(rows, d);
    for (int i = 0; i < rows; ++i) {
        const double* row = xv.row(i);
        double mu = 0.0;
        for (int c = 0; c < d; ++c) {
            mu += row[c];
        }
        mu /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) {
            const double dx = row[c] - mu;
            var += dx * dx;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (int c = 0; c < d; ++c) {
            const double xh = (row[c] - mu) * is;
            (*xhat)(i, c) = xh;
            out(i, c) = xh * gv(0, c) + bv(0, c);
        }
    }
    const Id y = push(std::move(out), {x, gamma, beta}, nullptr);
    nodes_[y].back = [y, x, gamma, beta, xhat, inv_std](Tape& t) {
        const Matrix& g = t.grad(y);
        const Matrix& gv = t.val(gamma);
        const Matrix& xh = *xhat;
        const int rows = g.rows();
        const int d = g.cols();
        Matrix& dx = t.grad_mut(x);
        Matrix& dgamma = t.grad_mut(gamma);
        Matrix& dbeta = t.grad_mut(beta);
        for (int i = 0; i < rows; ++i) {
            const double* gr = g.row(i);
            const double* xr = xh.row(i);
            double m1 = 0.0;
            double m2 = 0.0;
            for (int c = 0; c < d; ++c) {
                const double gg = gr[c] * gv(0, c);
                m1 += gg;
                m2 += gg * xr[c];
            }
            m1 /= d;
            m2 /= d;
            const double is = (*inv_std)[i];
            double* dxr = dx.row(i);
            for (int c = 0; c < d; ++c) {
                const double gg = gr[c] * gv(0, c);
                dxr[c] += (gg - m1 - xr[c] * m2) * is;
                dgamma(0, c) += gr[c] * xr[c];
                dbeta(0, c) += gr[c];
            }
        }
    };
    return y;
}

Tape::Id Tape::gelu(Id x) {
    const Matrix& xv = val(x);
    Matrix out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xv.data()[i];
        out.data()[i] = v * gauss_cdf(v);
    }
    const Id y = push(std::move(out), {x}, nullptr);
    nodes_[y].back = [y, x](Tape& t) {
        const Matrix& g = t.grad(y);
        const Matrix& xv = t.val(x);
        Matrix& dx = t.grad_mut(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xv.data()[i];
            dx.data()[i] += g.data()[i] * (gauss_cdf(v) + v * gauss_pdf(v));
        }
    };
    return y;
}

Tape::Id Tape::slice_cols(Id a, int c0, int width) {
    const Matrix& av = val(a);
    if (c0 < 0 || width < 1 || c0 + width > av.cols()) {
        throw ContractError("slice_cols: range out of bounds");
    }
    Matrix out(av.rows(), width);
    for (int i = 0; i < av.rows(); ++i) {
        const double* src = av.row(i) + c0;
        std::copy(src, src + width, out.row(i));
    }
    const Id y = push(std::move(out), {a}, nullptr);
    nodes_[y].back = [y, a, c0, width](Tape& t) {
        const Matrix& g = t.grad(y);
        Matrix& da = t.grad_mut(a);
        for (int i = 0; i < g.rows(); ++i) {
            const double* src = g.row(i);
            double* dst = da.row(i) + c0;
            for (int c = 0; c < width; ++c) {
                dst[c] += src[c];
            }
        }
    };
    return y;
}

Tape::Id Tape::concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) {
        throw ContractError("concat_cols: no parts");
    }
    const int rows = val(parts[0]).rows();
    int total = 0;
    for (Id p : parts) {
        if (val(p).rows() != rows) {
            throw ContractError("concat_cols: row mismatch");
        }
        total += val(p).cols();
    }
    Matrix out(rows, total);
    int at = 0;
    for (Id p : parts) {
        const Matrix& pv = val(p);
        for (int i = 0; i < rows; ++i) {
            std::copy(pv.row(i), pv.row(i) + pv.cols(), out.row(i) + at);
        }
        at += pv.cols();
    }
    const Id y = push(std::move(out), parts, nullptr);
    auto keep = parts;
    nodes_[y].back = [y, keep](Tape& t) {
        const Matrix& g = t.grad(y);
        int at = 0;
        for (Id p : keep) {
            Matrix& dp = t.grad_mut(p);
            for (int i = 0; i < g.rows(); ++i) {
                const double* src = g.row(i) + at;
                double* dst = dp.row(i);
                for (int c = 0; c < dp.cols(); ++c) {
                    dst[c] += src[c];
                }
            }
            at += dp.cols();
        }
    };
    return y;
}

Tape::Id Tape::reshape(Id a, int rows, int cols) {
    const Matrix& av = val(a);
    if (static_cast<std::size_t>(rows) * cols != av.size()) {
        throw ContractError("reshape: element count mismatch");
    }
    Matrix out(rows, cols);
    std::copy(av.data(), av.data() + av.size(), out.data());
    const Id y = push(std::move(out), {a}, nullptr);
    nodes_[y].back = [y, a](Tape& t) {
        const Matrix& g = t.grad(y);
        Matrix& da = t.grad_mut(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            da.data()[i] += g.data()[i];
        }
    };
    return y;
}

Tape::Id Tape::softmax_rows(Id logits) {
    const Matrix& z = val(logits);
    Matrix p(z.rows(), z.cols());
    for (int i = 0; i < z.rows(); ++i) {
        const double* zr = z.row(i);
        double m = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < z.cols(); ++c) {
            m = std::max(m, zr[c]);
        }
        double denom = 0.0;
        double* pr = p.row(i);
        for (int c = 0; c < z.cols(); ++c) {
            pr[c] = std::exp(zr[c] - m);
            denom += pr[c];
        }
        for (int c = 0; c < z.cols(); ++c) {
            pr[c] /= denom;
        }
    }
    const Id y = push(std::move(p), {logits}, nullptr);
    nodes_[y].back = [y, logits](Tape& t) {
        const Matrix& g = t.grad(y);
        const Matrix& p = t.val(y);
        Matrix& dz = t.grad_mut(logits);
        for (int i = 0; i < g.rows(); ++i) {
            const double* gr = g.row(i);
            const double* pr = p.row(i);
            double dot = 0.0;
            for (int c = 0; c < g.cols(); ++c) {
                dot += gr[c] * pr[c];
            }
            double* dzr = dz.row(i);
            for (int c = 0; c < g.cols(); ++c) {
                dzr[c] += pr[c] * (gr[c] - dot);
            }
        }
    };
    return y;
}

Tape::Id Tape::attn_probs(Id q, Id k, double scale, const AttentionMask* mask) {
    const Matrix& qv = val(q);
    const Matrix& kv = val(k);
    if (qv.cols() != kv.cols()) {
        throw ContractError("attn_probs: width mismatch");
    }
    if (mask != nullptr && (mask->size != qv.rows() || mask->size != kv.rows())) {
        throw ContractError("attn_probs: mask size mismatch");
    }
    Matrix p(qv.rows(), kv.rows());
    gemm(qv, false, kv, true, p, scale);
    for (int i = 0; i < p.rows(); ++i) {
        double* row = p.row(i);
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < p.cols(); ++j) {
            if (mask != nullptr && !mask->at(i, j)) {
                continue;
            }
            m = std::max(m, row[j]);
        }
        if (m == -std::numeric_limits<double>::infinity()) {
            throw ContractError("attn_probs: fully masked query row " + std::to_string(i));
        }
        double denom = 0.0;
        for (int j = 0; j < p.cols(); ++j) {
            if (mask != nullptr && !mask->at(i, j)) {
                row[j] = 0.0;
                continue;
            }
            row[j] = std::exp(row[j] - m);
            denom += row[j];
        }
        const double inv = 1.0 / denom;
        for (int j = 0; j < p.cols(); ++j) {
            row[j] *= inv;
        }
    }
    const Id y = push(std::move(p), {q, k}, nullptr);
    nodes_[y].back = [y, q, k, scale](Tape& t) {
        const Matrix& g = t.grad(y);
        const Matrix& p = t.val(y);
        // ds = p . (g - rowdot(g, p)); masked entries have p = 0, so ds = 0 there.
        Matrix ds(p.rows(), p.cols());
        for (int i = 0; i < p.rows(); ++i) {
            const double* gr = g.row(i);
            const double* pr = p.row(i);
            double dot = 0.0;
            for (int j = 0; j < p.cols(); ++j) {
                dot += gr[j] * pr[j];
            }
            double* dsr = ds.row(i);
            for (int j = 0; j < p.cols(); ++j) {
                dsr[j] = pr[j] * (gr[j] - dot);
            }
        }
        gemm(ds, false, t.val(k), false, t.grad_mut(q), scale, 1.0);  // dq += s ds k
        gemm(ds, true, t.val(q), false, t.grad_mut(k), scale, 1.0);   // dk += s ds^T q
    };
    return y;
}

Tape::Id Tape::gather_rows(Id a, std::vector<int> idx) {
    const Matrix& av = val(a);
    Matrix out(static_cast<int>(idx.size()), av.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= av.rows()) {
            throw ContractError("gather_rows: index out of range");
        }
        std::copy(av.row(idx[r]), av.row(idx[r]) + av.cols(), out.row(static_cast<int>(r)));
    }
    auto keep = std::make_shared<std::vector<int>>(std::move(idx));
    const Id y = push(std::move(out), {a}, nullptr);
    nodes_[y].back = [y, a, keep](Tape& t) {
        const Matrix& g = t.grad(y);
        Matrix& da = t.grad_mut(a);
        for (std::size_t r = 0; r < keep->size(); ++r) {
            const double* src = g.row(static_cast<int>(r));
            double* dst = da.row((*keep)[r]);
            for (int c = 0; c < g.cols(); ++c) {
                dst[c] += src[c];
            }
        }
    };
    return y;
}

Tape::Id Tape::scale_by_entry(Id a, Id s, int si, int sj) {
    const double sv = val(s)(si, sj);
    Matrix out = val(a);
    out.scale_inplace(sv);
    const Id y = push(std::move(out), {a, s}, nullptr);
    nodes_[y].back = [y, a, s, si, sj, sv](Tape& t) {
        const Matrix& g = t.grad(y);
        axpy(t.grad_mut(a), g, sv);
        const Matrix& av = t.val(a);
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            dot += g.data()[i] * av.data()[i];
        }
        t.grad_mut(s)(si, sj) += dot;
    };
    return y;
}

Tape::Id Tape::mse(Id a, Id b) {
    const Matrix& av = val(a);
    const Matrix& bv = val(b);
    if (!av.same_shape(bv)) {
        throw ContractError("mse: shape mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av.data()[i] - bv.data()[i];
        s += d * d;
    }
    Matrix out(1, 1);
    out(0, 0) = s / static_cast<double>(av.size());
    const Id y = push(std::move(out), {a, b}, nullptr);
    nodes_[y].back = [y, a, b](Tape& t) {
        const double g = t.grad(y)(0, 0);
        const Matrix& av = t.val(a);
        const Matrix& bv = t.val(b);
        Matrix& da = t.grad_mut(a);
        Matrix& db = t.grad_mut(b);
        const double c = 2.0 * g / static_cast<double>(av.size());
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double d = c * (av.data()[i] - bv.data()[i]);
            da.data()[i] += d;
            db.data()[i] -= d;
        }
    };
    return y;
}

Tape::Id Tape::sumsq_col(Id a, int col) {
    const Matrix& av = val(a);
    if (col < 0 || col >= av.cols()) {
        throw ContractError("sumsq_col: column out of range");
    }
    double s = 0.0;
    for (int i = 0; i < av.rows(); ++i) {
        s += av(i, col) * av(i, col);
    }
    Matrix out(1, 1);
    out(0, 0) = s;
    const Id y = push(std::move(out), {a}, nullptr);
    nodes_[y].back = [y, a, col](Tape& t) {
        const double g = t.grad(y)(0, 0);
        const Matrix& av = t.val(a);
        Matrix& da = t.grad_mut(a);
        for (int i = 0; i < av.rows(); ++i) {
            da(i, col) += 2.0 * g * av(i, col);
        }
    };
    return y;
}

void Tape::backward(Id root) {
    if (val(root).rows() != 1 || val(root).cols() != 1) {
        throw ContractError("backward: root must be a 1x1 scalar");
    }
    std::vector<char> reachable(nodes_.size(), 0);
    reachable[root] = 1;
    for (Id i = root; i >= 0; --i) {
        if (!reachable[i]) {
            continue;
        }
        for (Id in : nodes_[i].inputs) {
            reachable[in] = 1;
        }
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (reachable[i]) {
            nodes_[i].grad = Matrix(nodes_[i].val.rows(), nodes_[i].val.cols());
        }
    }
    nodes_[root].grad(0, 0) = 1.0;
    for (Id i = root; i >= 0; --i) {
        if (reachable[i] && nodes_[i].back) {
            nodes_[i].back(*this);
        }
    }
}

}  // namespace vrta
