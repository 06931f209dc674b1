#include "vrta/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "vrta/error.hpp"

namespace vrta {

namespace {

constexpr std::array<char, 4> kMagic = {'V', 'R', 'T', 'A'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in, const std::filesystem::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) {
        throw IoError("tensor file truncated: " + path.string());
    }
    return v;
}

}  // namespace

std::uint64_t TensorFile::element_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) {
        n *= d;
    }
    return dims.empty() ? 0 : n;
}

void write_tensor(const std::filesystem::path& path, const TensorFile& t) {
    if (t.values.size() != t.element_count()) {
        throw ContractError("write_tensor: payload size does not match dims");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out.write(kMagic.data(), kMagic.size());
    write_raw(out, kVersion);
    write_raw(out, static_cast<std::uint32_t>(t.dtype));
    write_raw(out, static_cast<std::uint32_t>(t.dims.size()));
    for (std::uint64_t d : t.dims) {
        write_raw(out, d);
    }
    if (t.dtype == TensorDtype::Float64) {
        out.write(reinterpret_cast<const char*>(t.values.data()),
                  static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    } else {
        for (double v : t.values) {
            const float f = static_cast<float>(v);
            write_raw(out, f);
        }
    }
    if (!out) {
        throw IoError("short write: " + path.string());
    }
}

TensorFile read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open for reading: " + path.string());
    }
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) {
        throw IoError("bad tensor magic in " + path.string());
    }
    const auto version = read_raw<std::uint32_t>(in, path);
    if (version != kVersion) {
        throw IoError("unsupported tensor format version " + std::to_string(version) + " in " +
                      path.string());
    }
    const auto dtype = read_raw<std::uint32_t>(in, path);
    if (dtype != static_cast<std::uint32_t>(TensorDtype::Float64) &&
        dtype != static_cast<std::uint32_t>(TensorDtype::Float32)) {
        throw IoError("unsupported tensor dtype code " + std::to_string(dtype) + " in " +
                      path.string());
    }
    const auto rank = read_raw<std::uint32_t>(in, path);

    TensorFile t;
    t.dtype = static_cast<TensorDtype>(dtype);
    t.dims.resize(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
        t.dims[i] = read_raw<std::uint64_t>(in, path);
    }
    const std::uint64_t n = t.element_count();
    t.values.resize(n);
    if (t.dtype == TensorDtype::Float64) {
        in.read(reinterpret_cast<char*>(t.values.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!in) {
            throw IoError("tensor payload truncated: " + path.string());
        }
    } else {
        for (std::uint64_t i = 0; i < n; ++i) {
            t.values[i] = read_raw<float>(in, path);
        }
    }
    return t;
}

void write_matrix(const std::filesystem::path& path, const Matrix& m, TensorDtype dtype) {
    TensorFile t;
    t.dtype = dtype;
    t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    t.values.assign(m.data(), m.data() + m.size());
    write_tensor(path, t);
}

Matrix read_matrix(const std::filesystem::path& path) {
    const TensorFile t = read_tensor(path);
    if (t.dims.size() != 2) {
        throw IoError("expected rank-2 tensor in " + path.string());
    }
    Matrix m(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]));
    std::memcpy(m.data(), t.values.data(), t.values.size() * sizeof(double));
    return m;
}

}  // namespace vrta
