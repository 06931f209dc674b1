#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "vrta/model.hpp"
#include "vrta/profiler.hpp"
#include "vrta/training.hpp"

namespace vrta {

// Whole-run configuration, parsed from line-oriented `key = value` text
// with dotted section keys. Unknown keys are hard errors; `#` starts a
// comment. Validation is total before any command does work.
struct RunConfig {
    ToyModelConfig model;

    TrainConfig pretrain{2000, 1e-2, 4, 0, 20.0, 0.02};
    TrainConfig router{100, 1e-2, 4, 0, 20.0, 0.02};
    int data_count = 32;

    int sample_steps = 50;
    std::string sample_mode = "hard";  // dense | soft | hard

    BenchDims bench_dims;
    TileGeometry bench_tile{4, 4, 4, 4, 4, 2};
    BucketGeometry bench_bucket{4, 4, 4, 0.5};
    int bench_reps = 5;
    std::string bench_dtype = "f64";  // f64 | f32
    int bench_threads = 1;

    int profile_intervals = 5;
    std::string profile_k_grid = "1,8,32,128,384";

    std::uint64_t seed = 42;
    std::string out_dir = "out";

    static RunConfig defaults();
    static RunConfig parse_text(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);

    std::vector<int> k_grid() const;
    ForwardMode sample_forward_mode() const;
    void validate() const;
    std::string to_text() const;
};

}  // namespace vrta
