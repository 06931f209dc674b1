#pragma once

#include <cstddef>
#include <vector>

#include "vrta/rng.hpp"

namespace vrta {

// Dense row-major matrix of 64-bit floats. Small value type; all heavy
// products go through the BLAS-backed gemm() below.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols);  // zero-initialized

    static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }
    static Matrix filled(int rows, int cols, double v);
    static Matrix randn(int rows, int cols, Rng& rng, double stddev = 1.0);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const {
        return data_[static_cast<std::size_t>(r) * cols_ + c];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
    const double* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool all_finite() const;

    void fill(double v);
    void scale_inplace(double a);

    bool operator==(const Matrix& o) const = default;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// c = alpha * op(a) * op(b) + beta * c, shapes checked.
void gemm(const Matrix& a, bool trans_a, const Matrix& b, bool trans_b, Matrix& c,
          double alpha = 1.0, double beta = 0.0);

Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
void axpy(Matrix& y, const Matrix& x, double alpha);  // y += alpha * x

double max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);

// Pins the BLAS thread count. The library defaults to one thread so every
// reduction has a fixed order; benchmarks may opt in to more.
void set_blas_threads(int n);

// Float32 gemm used only by the benchmarking paths.
void gemm_f32(int m, int n, int k, const float* a, int lda, bool trans_a, const float* b,
              int ldb, bool trans_b, float* c, int ldc, float alpha = 1.0f, float beta = 0.0f);

}  // namespace vrta
