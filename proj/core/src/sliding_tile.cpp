#include "vrta/sliding_tile.hpp"

#include <cmath>
#include <string>

#include "vrta/attention_exec.hpp"
#include "vrta/error.hpp"

namespace vrta {

int tile_center_1d(int i, int t) {
    if (i < 0 || t < 1) {
        throw ContractError("tile_center_1d: need i >= 0 and t >= 1");
    }
    return (i / t) * t + (t + 1) / 2;
}

AttentionMask sliding_tile_mask_1d(int length, int tile, int window) {
    if (tile < 1 || length < 1 || length % tile != 0) {
        throw GeometryError("sliding_tile_mask_1d: tile size must divide the length");
    }
    if (window < 1) {
        throw GeometryError("sliding_tile_mask_1d: window must be >= 1 token");
    }
    AttentionMask m(length);
    for (int i = 0; i < length; ++i) {
        const int c = tile_center_1d(i, tile);
        const int lo = std::max(0, c - window + 1);
        const int hi = std::min(length - 1, c + window);
        for (int j = lo; j <= hi; ++j) {
            m.set(i, j, true);
        }
    }
    return m;
}

TileMask::TileMask(const VideoGrid& grid, const TileGeometry& geom) : grid_(grid), geom_(geom) {
    if (geom.tile_f < 1 || geom.tile_h < 1 || geom.tile_w < 1) {
        throw GeometryError("TileMask: tile sizes must be positive");
    }
    if (geom.win_f < 0 || geom.win_h < 0 || geom.win_w < 0) {
        throw GeometryError("TileMask: window sizes must be non-negative");
    }
    if (grid.frames % geom.tile_f != 0 || grid.height % geom.tile_h != 0 ||
        grid.width % geom.tile_w != 0) {
        throw GeometryError("TileMask: tile sizes must divide the grid dimensions");
    }
    tiles_f_ = grid.frames / geom.tile_f;
    tiles_h_ = grid.height / geom.tile_h;
    tiles_w_ = grid.width / geom.tile_w;

    const int tiles = num_tiles();
    blocks_.assign(static_cast<std::size_t>(tiles) * tiles, 0);
    const int rf = geom.win_f / 2;
    const int rh = geom.win_h / 2;
    const int rw = geom.win_w / 2;
    auto tile_coord = [this](int t) {
        const int w = t % tiles_w_;
        const int h = (t / tiles_w_) % tiles_h_;
        const int f = t / (tiles_w_ * tiles_h_);
        return Coord3{f, h, w};
    };
    for (int qt = 0; qt < tiles; ++qt) {
        const Coord3 qc = tile_coord(qt);
        for (int kt = 0; kt < tiles; ++kt) {
            const Coord3 kc = tile_coord(kt);
            const bool ok = std::abs(qc.f - kc.f) <= rf && std::abs(qc.h - kc.h) <= rh &&
                            std::abs(qc.w - kc.w) <= rw;
            if (ok) {
                blocks_[static_cast<std::size_t>(qt) * tiles + kt] = 1;
                ++active_blocks_;
            }
        }
    }

    tile_tokens_.resize(static_cast<std::size_t>(tiles));
    for (int i = 0; i < grid.tokens(); ++i) {
        tile_tokens_[static_cast<std::size_t>(tile_of_token(i))].push_back(i);
    }
}

int TileMask::tile_of_token(int token) const {
    const Coord3 c = unflatten_index(token, grid_);
    const int tf = c.f / geom_.tile_f;
    const int th = c.h / geom_.tile_h;
    const int tw = c.w / geom_.tile_w;
    return (tf * tiles_h_ + th) * tiles_w_ + tw;
}

AttentionMask TileMask::dense() const {
    const int l = grid_.tokens();
    AttentionMask m(l);
    std::vector<int> tile_of(static_cast<std::size_t>(l));
    for (int i = 0; i < l; ++i) {
        tile_of[i] = tile_of_token(i);
    }
    for (int i = 0; i < l; ++i) {
        for (int j = 0; j < l; ++j) {
            m.set(i, j, block_active(tile_of[i], tile_of[j]));
        }
    }
    return m;
}

TileMask sliding_tile_mask_3d(const VideoGrid& grid, const TileGeometry& geom) {
    return TileMask(grid, geom);
}

SlidingAttentionResult sliding_attention(const FeatureSequence& h, const ProjectionSet& p,
                                         const TileGeometry& geom, bool scale_qk) {
    h.require_finite("sliding_attention input");
    if (p.width() != h.width()) {
        throw ContractError("sliding_attention: projection width mismatch");
    }
    const TileMask mask(h.grid, geom);
    const int d = h.width();
    const double scale = scale_qk ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0;

    ExecCounters counters;
    const Matrix q = matmul(h.data, p.wq);
    const Matrix k = matmul(h.data, p.wk);
    const Matrix v = matmul(h.data, p.wv);
    Matrix out = attend_block_sparse(q, k, v, mask, scale, &counters);

    SlidingAttentionResult r{FeatureSequence(h.grid, std::move(out)), mask.active_fraction(),
                             counters.attention_macs};
    return r;
}

}  // namespace vrta
