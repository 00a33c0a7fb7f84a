#pragma once

#include <vector>

#include "image.hpp"

namespace fluoroforge {

/// One low-resolution tile rectangle. overlap records the nominal shared
/// band width used when the grid was built.
struct TileSpec {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;
    int overlap = 0;
};

namespace detail {

/// Tile start offsets along one axis: march by (tile - overlap) and clamp
/// the final tile to end exactly at the image edge. Interior neighbors
/// share `overlap` pixels; the clamped last pair may share more when the
/// stride does not divide evenly.
inline std::vector<int> tile_starts(int axis_len, int tile_len, int overlap) {
    std::vector<int> starts{0};
    const int stride = tile_len - overlap;
    for (int x = stride; x + tile_len < axis_len; x += stride) starts.push_back(x);
    const int last = axis_len - tile_len;
    if (last > starts.back()) starts.push_back(last);
    return starts;
}

/// Feathering profile along one axis of a tile, at high resolution: ramps
/// from 1/(band+1) up to band/(band+1) across interior overlap bands and is
/// 1 elsewhere. Complementary ramps of adjacent tiles sum to exactly 1.
inline std::vector<double> feather_profile(int length_hr, int band_hr, bool ramp_left,
                                           bool ramp_right) {
    std::vector<double> w(static_cast<std::size_t>(length_hr), 1.0);
    if (band_hr <= 0) return w;
    const double denom = band_hr + 1.0;
    if (ramp_left) {
        for (int i = 0; i < band_hr && i < length_hr; ++i) {
            w[static_cast<std::size_t>(i)] *= (i + 1) / denom;
        }
    }
    if (ramp_right) {
        for (int i = 0; i < band_hr && i < length_hr; ++i) {
            const int pos = length_hr - 1 - i;
            w[static_cast<std::size_t>(pos)] *= (i + 1) / denom;
        }
    }
    return w;
}

}  // namespace detail

/// Covers a width x height low-res image with tile_w x tile_h tiles whose
/// interior neighbors share `overlap` pixels. Tiles are emitted row-major.
inline std::vector<TileSpec> split_tiles(int width, int height, int tile_w, int tile_h,
                                         int overlap) {
    if (width <= 0 || height <= 0) throw DimensionError("image dimensions must be positive");
    if (tile_w <= 0 || tile_h <= 0) throw std::invalid_argument("tile dimensions must be positive");
    if (tile_w > width || tile_h > height) {
        throw DimensionError("tile dimensions must not exceed image dimensions");
    }
    if (overlap < 0 || overlap >= tile_w || overlap >= tile_h) {
        throw std::invalid_argument("overlap must satisfy 0 <= overlap < tile dimensions");
    }
    const std::vector<int> xs = detail::tile_starts(width, tile_w, overlap);
    const std::vector<int> ys = detail::tile_starts(height, tile_h, overlap);
    std::vector<TileSpec> tiles;
    tiles.reserve(xs.size() * ys.size());
    for (int y : ys) {
        for (int x : xs) {
            tiles.push_back(TileSpec{x, y, tile_w, tile_h, overlap});
        }
    }
    return tiles;
}

/// Per-pixel feather weights of one tile at high resolution. Ramps appear
/// only on edges that face another tile; edges flush with the image border
/// keep weight 1.
inline Image tile_weights(const TileSpec& tile, int scale, int lr_width, int lr_height) {
    const int W = tile.w * scale;
    const int H = tile.h * scale;
    const int band = tile.overlap * scale;
    const std::vector<double> wx = detail::feather_profile(
        W, band, tile.x > 0, tile.x + tile.w < lr_width);
    const std::vector<double> wy = detail::feather_profile(
        H, band, tile.y > 0, tile.y + tile.h < lr_height);
    Image weights(W, H);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            weights.at(x, y) = wx[static_cast<std::size_t>(x)] * wy[static_cast<std::size_t>(y)];
        }
    }
    return weights;
}

/// Blends per-tile high-resolution renders into one canvas by linear
/// feathering: weighted accumulation normalized by the local weight sum.
/// Pixels covered by a single tile are copied verbatim (weight ratio 1).
inline Image stitch(const std::vector<TileSpec>& tiles, const std::vector<Image>& renders,
                    int scale, int lr_width, int lr_height) {
    if (tiles.empty()) throw std::invalid_argument("stitch requires at least one tile");
    if (tiles.size() != renders.size()) {
        throw DimensionError("one render per tile is required");
    }
    if (scale <= 0) throw std::invalid_argument("scale must be positive");

    Image num(lr_width * scale, lr_height * scale);
    Image den(lr_width * scale, lr_height * scale);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const TileSpec& tile = tiles[i];
        const Image& render = renders[i];
        if (render.width != tile.w * scale || render.height != tile.h * scale) {
            throw DimensionError("render dimensions must match tile dimensions times scale");
        }
        const Image weights = tile_weights(tile, scale, lr_width, lr_height);
        const int ox = tile.x * scale;
        const int oy = tile.y * scale;
        for (int y = 0; y < render.height; ++y) {
            for (int x = 0; x < render.width; ++x) {
                const double w = weights.at(x, y);
                num.at(ox + x, oy + y) += w * render.at(x, y);
                den.at(ox + x, oy + y) += w;
            }
        }
    }
    Image out(lr_width * scale, lr_height * scale);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        if (!(den.pixels[i] > 0.0)) throw DimensionError("tiles do not cover the image");
        out.pixels[i] = num.pixels[i] / den.pixels[i];
    }
    return out;
}

/// Sum of feather weights over all tiles at each high-res pixel. Interior
/// overlap bands of an exact grid sum to 1; exposed for verification.
inline Image stitch_weight_sum(const std::vector<TileSpec>& tiles, int scale, int lr_width,
                               int lr_height) {
    Image den(lr_width * scale, lr_height * scale);
    for (const TileSpec& tile : tiles) {
        const Image weights = tile_weights(tile, scale, lr_width, lr_height);
        const int ox = tile.x * scale;
        const int oy = tile.y * scale;
        for (int y = 0; y < weights.height; ++y) {
            for (int x = 0; x < weights.width; ++x) {
                den.at(ox + x, oy + y) += weights.at(x, y);
            }
        }
    }
    return den;
}

}  // namespace fluoroforge
