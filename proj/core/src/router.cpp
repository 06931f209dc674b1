#include "vrta/router.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "vrta/attention_exec.hpp"
#include "vrta/error.hpp"

namespace vrta {

const char* branch_name(Branch b) {
    switch (b) {
        case Branch::Full:
            return "full";
        case Branch::Sliding:
            return "sliding";
        case Branch::Coreset:
            return "coreset";
    }
    return "?";
}

Branch branch_from_name(const std::string& name) {
    if (name == "full") {
        return Branch::Full;
    }
    if (name == "sliding") {
        return Branch::Sliding;
    }
    if (name == "coreset") {
        return Branch::Coreset;
    }
    throw ContractError("unknown branch name: " + name);
}

std::array<double, 3> GateValues::triple(int block, int head) const {
    const Matrix& m = per_block[block];
    return {m(head, 0), m(head, 1), m(head, 2)};
}

Matrix compute_block_gates(const std::vector<double>& temb, const Matrix& block_weights) {
    const int d = static_cast<int>(temb.size());
    if (block_weights.rows() != d || block_weights.cols() % 3 != 0) {
        throw ContractError("compute_block_gates: weights must be d x (3*heads)");
    }
    for (double x : temb) {
        if (!std::isfinite(x)) {
            throw ContractError("compute_block_gates: non-finite timestep embedding");
        }
    }
    const int heads = block_weights.cols() / 3;
    Matrix gates(heads, 3);
    for (int h = 0; h < heads; ++h) {
        double logits[3];
        for (int b = 0; b < 3; ++b) {
            double dot = 0.0;
            for (int c = 0; c < d; ++c) {
                dot += temb[c] * block_weights(c, 3 * h + b);
            }
            logits[b] = dot;
        }
        const double m = std::max(logits[0], std::max(logits[1], logits[2]));
        double denom = 0.0;
        for (double& l : logits) {
            l = std::exp(l - m);
            denom += l;
        }
        for (int b = 0; b < 3; ++b) {
            gates(h, b) = logits[b] / denom;
        }
    }
    return gates;
}

GateValues compute_gates(const std::vector<double>& temb, const RouterWeights& w) {
    GateValues g;
    g.per_block.reserve(w.per_block.size());
    for (const Matrix& bw : w.per_block) {
        g.per_block.push_back(compute_block_gates(temb, bw));
    }
    return g;
}

Branch route_hard(const std::array<double, 3>& a) {
    if (a[1] > a[0] && a[1] > a[2]) {
        return Branch::Sliding;
    }
    if (a[2] > a[0] && a[2] > a[1]) {
        return Branch::Coreset;
    }
    return Branch::Full;
}

namespace {

struct HeadSlices {
    Matrix q, k, v;  // L x d, full width; heads slice columns
};

Matrix slice_cols(const Matrix& m, int c0, int width) {
    Matrix s(m.rows(), width);
    for (int r = 0; r < m.rows(); ++r) {
        const double* src = m.row(r) + c0;
        std::copy(src, src + width, s.row(r));
    }
    return s;
}

void paste_cols(Matrix& dst, const Matrix& src, int c0) {
    for (int r = 0; r < dst.rows(); ++r) {
        std::copy(src.row(r), src.row(r) + src.cols(), dst.row(r) + c0);
    }
}

// Shared setup for the two routed forwards. The coreset plan is computed
// once per call from the raw input features and shared across heads.
struct RoutedContext {
    HeadSlices proj;
    TileMask tile_mask;
    BucketPlan plan;
    std::vector<int> pool_rows;  // pooled_rows copy for gathers
    int head_width;
    double scale;

    RoutedContext(const FeatureSequence& h, const ProjectionSet& p, const TileGeometry& tile,
                  const BucketGeometry& bucket, int heads, bool scale_qk)
        : tile_mask(h.grid, tile), plan(bcs_plan(h, bucket)) {
        if (heads < 1 || h.width() % heads != 0) {
            throw ContractError("routed forward: head count must divide the feature width");
        }
        head_width = h.width() / heads;
        scale = scale_qk ? 1.0 / std::sqrt(static_cast<double>(head_width)) : 1.0;
        proj.q = matmul(h.data, p.wq);
        proj.k = matmul(h.data, p.wk);
        proj.v = matmul(h.data, p.wv);
        pool_rows = plan.pooled_rows;
    }

    Matrix head_branch(int head, Branch b) const {
        const int c0 = head * head_width;
        const Matrix q = slice_cols(proj.q, c0, head_width);
        const Matrix k = slice_cols(proj.k, c0, head_width);
        const Matrix v = slice_cols(proj.v, c0, head_width);
        switch (b) {
            case Branch::Full:
                return attend_full(q, k, v, scale);
            case Branch::Sliding:
                return attend_block_sparse(q, k, v, tile_mask, scale);
            case Branch::Coreset: {
                Matrix qc(plan.pooled_length(), head_width);
                Matrix kc(plan.pooled_length(), head_width);
                Matrix vc(plan.pooled_length(), head_width);
                for (int r = 0; r < plan.pooled_length(); ++r) {
                    const int src = pool_rows[r];
                    std::copy(q.row(src), q.row(src) + head_width, qc.row(r));
                    std::copy(k.row(src), k.row(src) + head_width, kc.row(r));
                    std::copy(v.row(src), v.row(src) + head_width, vc.row(r));
                }
                const Matrix core = attend_full(qc, kc, vc, scale);
                Matrix out(plan.grid.tokens(), head_width);
                for (int i = 0; i < plan.grid.tokens(); ++i) {
                    const double* s = core.row(plan.source_row[i]);
                    std::copy(s, s + head_width, out.row(i));
                }
                return out;
            }
        }
        throw ContractError("routed forward: invalid branch");
    }
};

}  // namespace

FeatureSequence routed_block_forward_hard(const FeatureSequence& h, const ProjectionSet& p,
                                          const TileGeometry& tile, const BucketGeometry& bucket,
                                          const std::vector<Branch>& choice_per_head,
                                          bool scale_qk, BranchTally* tally) {
    const int heads = static_cast<int>(choice_per_head.size());
    RoutedContext ctx(h, p, tile, bucket, heads, scale_qk);
    Matrix out(h.tokens(), h.width());
    for (int head = 0; head < heads; ++head) {
        const Branch b = choice_per_head[head];
        if (tally != nullptr) {
            tally->add(b);
        }
        paste_cols(out, ctx.head_branch(head, b), head * ctx.head_width);
    }
    return FeatureSequence(h.grid, std::move(out));
}

FeatureSequence routed_block_forward_soft(const FeatureSequence& h, const ProjectionSet& p,
                                          const TileGeometry& tile, const BucketGeometry& bucket,
                                          const Matrix& gates, bool scale_qk) {
    if (gates.cols() != 3 || gates.rows() < 1) {
        throw ContractError("routed_block_forward_soft: gates must be heads x 3");
    }
    const int heads = gates.rows();
    RoutedContext ctx(h, p, tile, bucket, heads, scale_qk);
    Matrix out(h.tokens(), h.width());
    for (int head = 0; head < heads; ++head) {
        Matrix mixed(h.tokens(), ctx.head_width);
        for (int b = 0; b < 3; ++b) {
            const double a = gates(head, b);
            if (a == 0.0) {
                continue;  // exact convex-combination endpoints
            }
            axpy(mixed, ctx.head_branch(head, static_cast<Branch>(b)), a);
        }
        paste_cols(out, mixed, head * ctx.head_width);
    }
    return FeatureSequence(h.grid, std::move(out));
}

void write_gate_dump_csv(const std::filesystem::path& path,
                         const std::vector<GateDumpRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << "step,block,head,alpha_full,alpha_sliding,alpha_coreset,choice\n";
    char buf[3][64];
    for (const GateDumpRow& r : rows) {
        for (int i = 0; i < 3; ++i) {
            std::snprintf(buf[i], sizeof(buf[i]), "%.17g", r.alpha[i]);
        }
        out << r.step << ',' << r.block << ',' << r.head << ',' << buf[0] << ',' << buf[1]
            << ',' << buf[2] << ',' << branch_name(r.choice) << '\n';
    }
}

std::vector<GateDumpRow> read_gate_dump_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open for reading: " + path.string());
    }
    std::vector<GateDumpRow> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1) {
            if (line != "step,block,head,alpha_full,alpha_sliding,alpha_coreset,choice") {
                throw IoError("gate dump parse error at line 1: unexpected header");
            }
            continue;
        }
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        GateDumpRow r;
        std::string field;
        try {
            auto next = [&]() {
                if (!std::getline(ss, field, ',')) {
                    throw IoError("missing field");
                }
                return field;
            };
            r.step = std::stoi(next());
            r.block = std::stoi(next());
            r.head = std::stoi(next());
            for (int i = 0; i < 3; ++i) {
                r.alpha[i] = std::stod(next());
            }
            r.choice = branch_from_name(next());
        } catch (const std::exception&) {
            throw IoError("gate dump parse error at line " + std::to_string(line_no) + " in " +
                          path.string());
        }
        rows.push_back(r);
    }
    return rows;
}

}  // namespace vrta
