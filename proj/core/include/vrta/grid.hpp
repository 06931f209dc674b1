#pragma once

#include <vector>

namespace vrta {

// Integer coordinate in (frame, height, width) order.
struct Coord3 {
    int f = 0;
    int h = 0;
    int w = 0;

    bool operator==(const Coord3&) const = default;
};

// Token-grid geometry of a flattened video sequence of length
// L = frames * height * width. Flattening is row-major with the frame
// axis outermost and the width axis innermost.
struct VideoGrid {
    int frames = 1;
    int height = 1;
    int width = 1;

    VideoGrid() = default;
    VideoGrid(int frames, int height, int width);

    int tokens() const { return frames * height * width; }

    bool operator==(const VideoGrid&) const = default;
};

int flatten_index(int f, int h, int w, const VideoGrid& grid);
Coord3 unflatten_index(int i, const VideoGrid& grid);

// Euclidean distance between the unflattened coordinates of two tokens.
double spatial_distance(int i, int j, const VideoGrid& grid);

// Sinusoidal embedding of a diffusion timestep t in [0, 1]:
// entry 2j = sin(t * omega_j), entry 2j+1 = cos(t * omega_j),
// omega_j = 10000^(-2j/d). Width d must be even.
std::vector<double> timestep_embedding(double t, int d);

}  // namespace vrta
