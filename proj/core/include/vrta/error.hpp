#pragma once

#include <stdexcept>

namespace vrta {

// Geometry that does not fit the grid (non-dividing tiles, bad coreset ratio).
struct GeometryError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Caller broke an API contract (shape mismatch, out-of-range index, empty mask row).
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid run configuration (unknown key, odd embedding width, bad value).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf detected in a numeric intermediate; message names the stage.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training diverged or a frozen parameter group was mutated.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Unreadable path or malformed file contents.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Timer resolution too coarse for the requested benchmark dims.
struct MeasurementError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace vrta
