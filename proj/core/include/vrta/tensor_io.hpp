#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vrta/matrix.hpp"

namespace vrta {

// Shared on-disk tensor container:
//   magic "VRTA"
//   format version, 32-bit little-endian unsigned (currently 1)
//   dtype code, 32-bit little-endian unsigned (1 = float64, 2 = float32)
//   rank, 32-bit little-endian unsigned
//   rank x 64-bit little-endian unsigned dimensions
//   row-major little-endian payload
// Readers reject unknown magic, version, or dtype.
enum class TensorDtype : std::uint32_t { Float64 = 1, Float32 = 2 };

struct TensorFile {
    TensorDtype dtype = TensorDtype::Float64;
    std::vector<std::uint64_t> dims;
    std::vector<double> values;  // always widened to double in memory

    std::uint64_t element_count() const;
};

void write_tensor(const std::filesystem::path& path, const TensorFile& t);
TensorFile read_tensor(const std::filesystem::path& path);

// Rank-2 convenience wrappers.
void write_matrix(const std::filesystem::path& path, const Matrix& m,
                  TensorDtype dtype = TensorDtype::Float64);
Matrix read_matrix(const std::filesystem::path& path);

}  // namespace vrta
