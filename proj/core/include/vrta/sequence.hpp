#pragma once

#include "vrta/grid.hpp"
#include "vrta/matrix.hpp"

namespace vrta {

// A token feature matrix (one row per token) tied to its grid geometry.
struct FeatureSequence {
    VideoGrid grid;
    Matrix data;  // tokens x width

    FeatureSequence() = default;
    FeatureSequence(VideoGrid grid, Matrix data);

    int tokens() const { return data.rows(); }
    int width() const { return data.cols(); }

    // Throws NumericError if any entry is NaN/Inf.
    void require_finite(const char* who) const;
};

// Query/key/value projections, all width x width.
struct ProjectionSet {
    Matrix wq;
    Matrix wk;
    Matrix wv;

    ProjectionSet() = default;
    ProjectionSet(Matrix wq, Matrix wk, Matrix wv);

    static ProjectionSet randn(int d, Rng& rng, double stddev);

    int width() const { return wq.rows(); }
};

}  // namespace vrta
