#include "vrta/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <string>

#if __has_include(<cblas-openblas.h>)
#include <cblas-openblas.h>
#define VRTA_HAVE_OPENBLAS 1
#else
#include <cblas.h>
#endif

#include "vrta/error.hpp"

namespace vrta {

namespace {

std::once_flag g_blas_init;

void ensure_blas_single_thread() {
    std::call_once(g_blas_init, [] { set_blas_threads(1); });
}

}  // namespace

void set_blas_threads(int n) {
#ifdef VRTA_HAVE_OPENBLAS
    openblas_set_num_threads(n < 1 ? 1 : n);
#else
    (void)n;
#endif
}

Matrix::Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) {
        throw ContractError("Matrix: negative dimension");
    }
    data_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
}

Matrix Matrix::filled(int rows, int cols, double v) {
    Matrix m(rows, cols);
    m.fill(v);
    return m;
}

Matrix Matrix::randn(int rows, int cols, Rng& rng, double stddev) {
    Matrix m(rows, cols);
    for (double& x : m.data_) {
        x = stddev * rng.next_gaussian();
    }
    return m;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

void Matrix::fill(double v) {
    std::fill(data_.begin(), data_.end(), v);
}

void Matrix::scale_inplace(double a) {
    for (double& x : data_) {
        x *= a;
    }
}

void gemm(const Matrix& a, bool trans_a, const Matrix& b, bool trans_b, Matrix& c, double alpha,
          double beta) {
    ensure_blas_single_thread();
    const int m = trans_a ? a.cols() : a.rows();
    const int k = trans_a ? a.rows() : a.cols();
    const int kb = trans_b ? b.cols() : b.rows();
    const int n = trans_b ? b.rows() : b.cols();
    if (k != kb || c.rows() != m || c.cols() != n) {
        throw ContractError("gemm: shape mismatch (" + std::to_string(m) + "x" +
                            std::to_string(k) + ") * (" + std::to_string(kb) + "x" +
                            std::to_string(n) + ") -> (" + std::to_string(c.rows()) + "x" +
                            std::to_string(c.cols()) + ")");
    }
    if (m == 0 || n == 0) {
        return;
    }
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a.data(),
                a.cols() > 0 ? a.cols() : 1, b.data(), b.cols() > 0 ? b.cols() : 1, beta,
                c.data(), n);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    gemm(a, false, b, false, c);
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.rows());
    gemm(a, false, b, true, c);
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    Matrix c(a.cols(), b.cols());
    gemm(a, true, b, false, c);
    return c;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ContractError("add: shape mismatch");
    }
    Matrix c = a;
    axpy(c, b, 1.0);
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ContractError("sub: shape mismatch");
    }
    Matrix c = a;
    axpy(c, b, -1.0);
    return c;
}

void axpy(Matrix& y, const Matrix& x, double alpha) {
    if (!y.same_shape(x)) {
        throw ContractError("axpy: shape mismatch");
    }
    double* yd = y.data();
    const double* xd = x.data();
    const std::size_t n = y.size();
    for (std::size_t i = 0; i < n; ++i) {
        yd[i] += alpha * xd[i];
    }
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ContractError("max_abs_diff: shape mismatch");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    }
    return m;
}

double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a.data()[i] * a.data()[i];
    }
    return std::sqrt(s);
}

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::fabs(a.data()[i]));
    }
    return m;
}

void gemm_f32(int m, int n, int k, const float* a, int lda, bool trans_a, const float* b,
              int ldb, bool trans_b, float* c, int ldc, float alpha, float beta) {
    ensure_blas_single_thread();
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c,
                ldc);
}

}  // namespace vrta
