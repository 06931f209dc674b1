#include "vrta/sequence.hpp"

#include <string>
#include <utility>

#include "vrta/error.hpp"

namespace vrta {

FeatureSequence::FeatureSequence(VideoGrid g, Matrix d) : grid(g), data(std::move(d)) {
    if (data.rows() != grid.tokens()) {
        throw ContractError("FeatureSequence: row count " + std::to_string(data.rows()) +
                            " does not match grid length " + std::to_string(grid.tokens()));
    }
}

void FeatureSequence::require_finite(const char* who) const {
    if (!data.all_finite()) {
        throw NumericError(std::string(who) + ": non-finite feature entry");
    }
}

ProjectionSet::ProjectionSet(Matrix q, Matrix k, Matrix v)
    : wq(std::move(q)), wk(std::move(k)), wv(std::move(v)) {
    const int d = wq.rows();
    auto square = [d](const Matrix& m) { return m.rows() == d && m.cols() == d; };
    if (!square(wq) || !square(wk) || !square(wv)) {
        throw ContractError("ProjectionSet: matrices must all be d x d");
    }
}

ProjectionSet ProjectionSet::randn(int d, Rng& rng, double stddev) {
    Matrix q = Matrix::randn(d, d, rng, stddev);
    Matrix k = Matrix::randn(d, d, rng, stddev);
    Matrix v = Matrix::randn(d, d, rng, stddev);
    return ProjectionSet(std::move(q), std::move(k), std::move(v));
}

}  // namespace vrta
