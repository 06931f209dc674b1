#pragma once

#include <cstdint>
#include <vector>

#include "vrta/attention.hpp"
#include "vrta/sequence.hpp"

namespace vrta {

// Tile sizes in tokens per axis plus window sizes in tile units.
struct TileGeometry {
    int tile_f = 1;
    int tile_h = 1;
    int tile_w = 1;
    int win_f = 0;
    int win_h = 0;
    int win_w = 0;

    bool operator==(const TileGeometry&) const = default;
};

// tile_center(i) = floor(i/t) * t + ceil(t/2)
int tile_center_1d(int i, int t);

// 1D sliding tile mask: m[i][j] true iff tile_center(i) - w < j <= tile_center(i) + w,
// window w in tokens, intersected with [0, L). t must divide L.
AttentionMask sliding_tile_mask_1d(int length, int tile, int window);

// Block-structured 3D mask: a key tile is allowed for a query tile iff
// |q - k| <= floor(win/2) per axis, in tile units. Dense view is constant
// on every tile x tile block and always includes the self tile.
class TileMask {
public:
    TileMask(const VideoGrid& grid, const TileGeometry& geom);

    const VideoGrid& grid() const { return grid_; }
    const TileGeometry& geometry() const { return geom_; }

    int tiles_f() const { return tiles_f_; }
    int tiles_h() const { return tiles_h_; }
    int tiles_w() const { return tiles_w_; }
    int num_tiles() const { return tiles_f_ * tiles_h_ * tiles_w_; }
    int tile_volume() const { return geom_.tile_f * geom_.tile_h * geom_.tile_w; }

    bool block_active(int query_tile, int key_tile) const {
        return blocks_[static_cast<std::size_t>(query_tile) * num_tiles() + key_tile] != 0;
    }
    int tile_of_token(int token) const;
    const std::vector<int>& tile_token_indices(int tile) const { return tile_tokens_[tile]; }

    std::int64_t active_blocks() const { return active_blocks_; }
    std::int64_t total_blocks() const {
        return static_cast<std::int64_t>(num_tiles()) * num_tiles();
    }
    double active_fraction() const {
        return static_cast<double>(active_blocks_) / static_cast<double>(total_blocks());
    }

    AttentionMask dense() const;

private:
    VideoGrid grid_;
    TileGeometry geom_;
    int tiles_f_ = 0;
    int tiles_h_ = 0;
    int tiles_w_ = 0;
    std::vector<std::uint8_t> blocks_;           // num_tiles x num_tiles
    std::vector<std::vector<int>> tile_tokens_;  // token indices per tile
    std::int64_t active_blocks_ = 0;
};

TileMask sliding_tile_mask_3d(const VideoGrid& grid, const TileGeometry& geom);

struct SlidingAttentionResult {
    FeatureSequence out;
    double active_block_fraction = 0.0;
    std::uint64_t attention_macs = 0;  // counted by the block-sparse executor
};

// Block-sparse sliding tile attention: iterates only over active tile
// blocks. Matches masked_attention over the dense view of the mask.
SlidingAttentionResult sliding_attention(const FeatureSequence& h, const ProjectionSet& p,
                                         const TileGeometry& geom, bool scale_qk = true);

}  // namespace vrta
