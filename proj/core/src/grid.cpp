#include "vrta/grid.hpp"

#include <cmath>
#include <string>

#include "vrta/error.hpp"

namespace vrta {

VideoGrid::VideoGrid(int frames, int height, int width)
    : frames(frames), height(height), width(width) {
    if (frames < 1 || height < 1 || width < 1) {
        throw GeometryError("VideoGrid: all dimensions must be positive, got (" +
                            std::to_string(frames) + "," + std::to_string(height) + "," +
                            std::to_string(width) + ")");
    }
}

int flatten_index(int f, int h, int w, const VideoGrid& grid) {
    if (f < 0 || f >= grid.frames || h < 0 || h >= grid.height || w < 0 || w >= grid.width) {
        throw ContractError("flatten_index: coordinate out of bounds");
    }
    return (f * grid.height + h) * grid.width + w;
}

Coord3 unflatten_index(int i, const VideoGrid& grid) {
    if (i < 0 || i >= grid.tokens()) {
        throw ContractError("unflatten_index: token index out of bounds");
    }
    Coord3 c;
    c.w = i % grid.width;
    c.h = (i / grid.width) % grid.height;
    c.f = i / (grid.width * grid.height);
    return c;
}

double spatial_distance(int i, int j, const VideoGrid& grid) {
    const Coord3 a = unflatten_index(i, grid);
    const Coord3 b = unflatten_index(j, grid);
    const double df = a.f - b.f;
    const double dh = a.h - b.h;
    const double dw = a.w - b.w;
    return std::sqrt(df * df + dh * dh + dw * dw);
}

std::vector<double> timestep_embedding(double t, int d) {
    if (d <= 0 || d % 2 != 0) {
        throw ConfigError("timestep_embedding: width must be positive and even, got " +
                          std::to_string(d));
    }
    if (t < 0.0 || t > 1.0) {
        throw ContractError("timestep_embedding: t must lie in [0, 1]");
    }
    std::vector<double> e(static_cast<std::size_t>(d));
    for (int j = 0; j < d / 2; ++j) {
        const double omega = std::pow(10000.0, -2.0 * j / d);
        e[2 * j] = std::sin(t * omega);
        e[2 * j + 1] = std::cos(t * omega);
    }
    return e;
}

}  // namespace vrta
