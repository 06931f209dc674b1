#pragma once

#include <functional>
#include <vector>

#include "vrta/attention.hpp"
#include "vrta/matrix.hpp"

namespace vrta {

// Small eager reverse-mode tape over matrices. Ops compute their value on
// construction and register a pullback; backward() runs the pullbacks in
// reverse creation order for every node that can reach the root.
//
// Masks passed to attn_probs are captured by pointer and must outlive the
// tape.
class Tape {
public:
    using Id = int;

    Id leaf(Matrix v);

    const Matrix& val(Id id) const { return nodes_[id].val; }
    const Matrix& grad(Id id) const { return nodes_[id].grad; }

    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id scale(Id a, double c);
    Id matmul(Id a, Id b);     // a * b
    Id matmul_nt(Id a, Id b);  // a * b^T

    // y(i,:) = a(i,:) + r(0,:)
    Id add_row_broadcast(Id a, Id r);

    // Row-wise layer normalization with learned gain/shift (both 1 x d).
    Id layer_norm(Id x, Id gamma, Id beta, double eps = 1e-5);

    // Exact gaussian GELU, x * Phi(x).
    Id gelu(Id x);

    Id slice_cols(Id a, int c0, int width);
    Id concat_cols(const std::vector<Id>& parts);
    Id reshape(Id a, int rows, int cols);

    // Plain row softmax (used for gate triples).
    Id softmax_rows(Id logits);

    // p = softmax over allowed keys of scale * q k^T; stores only the
    // probabilities. mask == nullptr means dense.
    Id attn_probs(Id q, Id k, double scale, const AttentionMask* mask);

    // y_r = a[idx[r], :]; repeated indices accumulate on the way back.
    Id gather_rows(Id a, std::vector<int> idx);

    // y = a * s(si, sj), the scalar drawn from another node.
    Id scale_by_entry(Id a, Id s, int si, int sj);

    // Scalar outputs (1 x 1 values).
    Id mse(Id a, Id b);
    Id sumsq_col(Id a, int col);

    // Accumulates gradients of a scalar root into every reachable node.
    void backward(Id root);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Matrix val;
        Matrix grad;
        std::vector<Id> inputs;
        std::function<void(Tape&)> back;
    };

    Id push(Matrix val, std::vector<Id> inputs, std::function<void(Tape&)> back);
    Matrix& grad_mut(Id id) { return nodes_[id].grad; }

    std::vector<Node> nodes_;
};

}  // namespace vrta
