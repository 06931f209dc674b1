#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vrta/coreset.hpp"
#include "vrta/router.hpp"
#include "vrta/sliding_tile.hpp"
#include "vrta/tape.hpp"

namespace vrta {

enum class ForwardMode { Dense, SoftRouted, HardRouted };

struct ToyModelConfig {
    int blocks = 4;
    int heads = 4;
    int width = 64;
    int ffn_hidden = 256;
    VideoGrid grid{4, 12, 8};
    TileGeometry tile{2, 3, 2, 2, 3, 2};
    BucketGeometry bucket{2, 3, 2, 0.5};
    bool scale_qk = true;

    int head_width() const { return width / heads; }
    void validate() const;

    bool operator==(const ToyModelConfig&) const = default;
};

struct BlockParams {
    Matrix wq, wk, wv, wo;          // width x width
    Matrix ln1_gamma, ln1_beta;     // 1 x width
    Matrix ln2_gamma, ln2_beta;     // 1 x width
    Matrix ffn_w1, ffn_b1;          // width x hidden, 1 x hidden
    Matrix ffn_w2, ffn_b2;          // hidden x width, 1 x width
    Matrix router;                  // width x (3 * heads)
};

// Pre-norm residual transformer over flattened video tokens. The router
// weights form their own parameter group; everything else is "base".
struct ModelState {
    ToyModelConfig config;
    Matrix time_w;  // width x width, timestep conditioning projection
    Matrix time_b;  // 1 x width
    Matrix out_w;   // width x width, velocity head
    std::vector<BlockParams> blocks;
    bool base_frozen = false;
    bool router_frozen = true;

    static ModelState init(const ToyModelConfig& cfg, std::uint64_t seed);

    RouterWeights router_weights() const;
};

// Stable enumeration of every parameter tensor, used by the optimizer,
// gradient checks and checkpoints.
struct ParamRef {
    std::string name;
    Matrix* tensor;
    bool router;
};
std::vector<ParamRef> param_refs(ModelState& state);
std::vector<ParamRef> param_refs_const(const ModelState& state);  // safe to read only

std::uint64_t group_checksum(const ModelState& state, bool router_group);

// Tape ids mirroring ModelState.
struct BlockParamIds {
    Tape::Id wq, wk, wv, wo;
    Tape::Id ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    Tape::Id ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    Tape::Id router;
};
struct ParamTapeIds {
    Tape::Id time_w, time_b, out_w;
    std::vector<BlockParamIds> blocks;
};
ParamTapeIds register_params(Tape& tape, const ModelState& state);

// Collects tape gradients in param_refs order after backward().
std::vector<Matrix> collect_param_grads(const Tape& tape, const ParamTapeIds& ids);

struct ForwardBuild {
    Tape::Id velocity = -1;
    Tape::Id final_features = -1;
    std::vector<Tape::Id> gate_ids;               // per block, SoftRouted only
    std::vector<Matrix> gates;                    // per block (heads x 3), routed modes
    std::vector<std::vector<Branch>> choices;     // per block per head, HardRouted
    std::vector<std::vector<Tape::Id>> head_probs;  // per block per head, Dense mode
};

// Builds one forward pass on the tape. `tile_mask_dense` must be the dense
// view of the config's tile mask and must outlive the tape.
ForwardBuild build_forward(Tape& tape, const ModelState& state, const ParamTapeIds& ids,
                           const Matrix& x_t, double t, ForwardMode mode,
                           const AttentionMask& tile_mask_dense);

struct ForwardResult {
    Matrix velocity;
    Matrix final_features;
    std::vector<Matrix> gates;
    std::vector<std::vector<Branch>> choices;
};

ForwardResult model_forward(const ModelState& state, const Matrix& x_t, double t,
                            ForwardMode mode);

// Per (block, head) dense attention probabilities at (x_t, t); feeds the
// recall sweeps.
std::vector<std::vector<Matrix>> dense_attention_probs(const ModelState& state,
                                                       const Matrix& x_t, double t);

// Linear interpolant between a noise draw and a data sample.
struct FlowSample {
    Matrix x0;
    Matrix x1;
    double t = 0.0;
    Matrix x_t;
};
FlowSample flow_interpolate(Matrix x0, Matrix x1, double t);

// Deterministic synthetic videos: a bright square translating at constant
// velocity, embedded per token through a fixed random linear code.
std::vector<Matrix> synth_dataset(int count, const VideoGrid& grid, int width,
                                  std::uint64_t seed);

struct SampleResult {
    Matrix x;
    std::vector<GateDumpRow> gate_rows;  // per (step, block, head), routed modes only
};

// Euler integration of the learned velocity field from seeded unit noise:
// x <- x + (1/steps) * v(x, k/steps).
SampleResult euler_sample(const ModelState& state, int steps, std::uint64_t seed,
                          ForwardMode mode);

// Attention MACs of one head executing a branch, for the config's geometry.
std::uint64_t branch_attention_macs(const ToyModelConfig& cfg, Branch b);

// Checkpoint directory: manifest.json plus one tensor container per
// parameter.
void save_checkpoint(const std::filesystem::path& dir, const ModelState& state);
ModelState load_checkpoint(const std::filesystem::path& dir);

}  // namespace vrta
