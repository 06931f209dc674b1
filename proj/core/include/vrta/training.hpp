#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vrta/model.hpp"

namespace vrta {

struct LossBreakdown {
    double cfm = 0.0;
    double distill = 0.0;
    double reg = 0.0;
    double total = 0.0;
    double lambda_distill = 20.0;
    double lambda_reg = 0.02;
};

struct TrainConfig {
    int steps = 100;
    double lr = 1e-2;
    int batch = 4;
    std::uint64_t seed = 0;
    double lambda_distill = 20.0;
    double lambda_reg = 0.02;

    void validate() const;
};

// Standalone loss terms.
double cfm_loss(const Matrix& v_pred, const Matrix& x0, const Matrix& x1);
double distill_loss(const Matrix& routed_final, const Matrix& dense_final);
double reg_loss(const GateValues& gates);  // sum over blocks and heads of alpha_full^2

struct BatchSample {
    Matrix x0;
    Matrix x1;
    double t = 0.0;
};

// One (t, x0, x1) draw per slot from the given stream and dataset.
std::vector<BatchSample> draw_batch(const std::vector<Matrix>& dataset, int batch,
                                    const VideoGrid& grid, int width, Rng stream);

enum class ParamGroup { All, RouterOnly };

struct GradientResult {
    LossBreakdown loss;
    std::vector<Matrix> grads;       // aligned with param_refs(state)
    std::vector<Matrix> mean_gates;  // per block, heads x 3, batch mean
};

// Mean Eq-style total loss over a batch: one dense forward (the
// distillation target) plus one soft-routed forward per sample, with exact
// tape gradients.
GradientResult total_loss_and_grad(const ModelState& state,
                                   const std::vector<BatchSample>& batch, double lambda_distill,
                                   double lambda_reg, bool want_grads);

LossBreakdown total_loss(const ModelState& state, const std::vector<BatchSample>& batch,
                         double lambda_distill, double lambda_reg);

// Gradients restricted to a parameter group; order and zero padding follow
// param_refs (non-group entries are zero matrices).
std::vector<Matrix> gradient(const ModelState& state, const std::vector<BatchSample>& batch,
                             double lambda_distill, double lambda_reg, ParamGroup group);

struct PretrainLog {
    std::vector<double> loss_per_step;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    bool improved = false;  // final < initial
};

// Plain gradient descent on the flow-matching loss in dense mode; the
// router stays zero and frozen. Returns the freshly initialized and
// trained state.
ModelState pretrain_base(const ToyModelConfig& model_cfg, const TrainConfig& cfg,
                         const std::vector<Matrix>& dataset, PretrainLog* log = nullptr);

struct RouterTrainRow {
    int step = 0;
    LossBreakdown loss;
    double mean_alpha[3] = {0.0, 0.0, 0.0};  // batch mean per branch
};

struct RouterTrainLog {
    std::vector<RouterTrainRow> rows;
    std::vector<GateDumpRow> gate_snapshots;  // batch-mean gates per step
};

// Gradient descent on the total loss w.r.t. the router group only. Base
// parameters are checksummed every step; any change is a hard failure.
RouterTrainLog train_router(ModelState& state, const TrainConfig& cfg,
                            const std::vector<Matrix>& dataset);

void write_pretrain_log_csv(const std::filesystem::path& path, const PretrainLog& log);
void write_router_log_csv(const std::filesystem::path& path, const RouterTrainLog& log);

}  // namespace vrta
