#pragma once

#include <stdexcept>
#include <string>

#include "latiq/config.hpp"
#include "latiq/image.hpp"
#include "latiq/tensor.hpp"

namespace latiq {

// Per-patch visual embeddings with grid geometry.
struct VisualTokenGrid {
    Mat tokens; // N x visual_dim
    int grid_h = 0;
    int grid_w = 0;

    int count() const { return grid_h * grid_w; }
};

// Frozen vision stack: non-overlapping patch flattening followed by a fixed
// random affine map, plus the affine projector into decoder space. Neither
// piece ever receives gradient updates.
struct FrozenParams {
    Mat enc_w;  // visual_dim x (patch*patch*3)
    Vec enc_b;  // visual_dim
    Mat proj_w; // embed_dim x visual_dim
    Vec proj_b; // embed_dim
};

inline FrozenParams make_frozen(const ModelConfig& cfg) {
    FrozenParams f;
    Rng rng(derive_seed(cfg.seed, 0xF0));
    f.enc_w = Mat(cfg.visual_dim, cfg.patch_dim());
    fill_normal(f.enc_w, rng, 1.0 / std::sqrt(double(cfg.patch_dim())));
    f.enc_b.assign(size_t(cfg.visual_dim), 0.0);
    fill_normal(f.enc_b, rng, 0.05);
    f.proj_w = Mat(cfg.embed_dim, cfg.visual_dim);
    fill_normal(f.proj_w, rng, 1.0 / std::sqrt(double(cfg.visual_dim)));
    f.proj_b.assign(size_t(cfg.embed_dim), 0.0);
    fill_normal(f.proj_b, rng, 0.02);
    return f;
}

inline VisualTokenGrid encode_image(const Image& img, const ModelConfig& cfg, const FrozenParams& frozen) {
    if (img.h != cfg.image_size || img.w != cfg.image_size)
        throw std::invalid_argument("encode_image: expected " + std::to_string(cfg.image_size) + "x" +
                                    std::to_string(cfg.image_size) + " image, got " +
                                    std::to_string(img.h) + "x" + std::to_string(img.w));
    const int side = cfg.grid_side();
    const int p = cfg.patch_size;
    VisualTokenGrid grid;
    grid.grid_h = side;
    grid.grid_w = side;
    grid.tokens = Mat(side * side, cfg.visual_dim);
    Vec flat(size_t(cfg.patch_dim()));
    for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
            size_t k = 0;
            for (int y = r * p; y < (r + 1) * p; ++y)
                for (int x = c * p; x < (c + 1) * p; ++x)
                    for (int ch = 0; ch < 3; ++ch) flat[k++] = img.at(y, x, ch);
            double* row = grid.tokens.row(r * side + c);
            matvec(frozen.enc_w, flat.data(), row);
            for (int i = 0; i < cfg.visual_dim; ++i) row[i] += frozen.enc_b[i];
        }
    }
    return grid;
}

// Projects every grid row into decoder space: N x embed_dim.
inline Mat project_visual(const VisualTokenGrid& grid, const FrozenParams& frozen) {
    if (grid.tokens.cols != frozen.proj_w.cols)
        throw std::invalid_argument("project_visual: visual_dim mismatch");
    Mat out(grid.tokens.rows, frozen.proj_w.rows);
    for (int n = 0; n < grid.tokens.rows; ++n) {
        matvec(frozen.proj_w, grid.tokens.row(n), out.row(n));
        for (int i = 0; i < out.cols; ++i) out.at(n, i) += frozen.proj_b[i];
    }
    return out;
}

inline void project_one(const FrozenParams& frozen, const double* visual, double* out) {
    matvec(frozen.proj_w, visual, out);
    for (size_t i = 0; i < frozen.proj_b.size(); ++i) out[i] += frozen.proj_b[i];
}

} // namespace latiq
