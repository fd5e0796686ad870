#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "latiq/config.hpp"

namespace latiq {

// Pixel-space bounding box, half-open: [x0,x1) x [y0,y1).
struct RoiSpec {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

// Row-major patch indices intersecting an ROI, with T_v = |I|.
struct PatchIndexSet {
    std::vector<int> indices;

    int count() const { return int(indices.size()); }
};

inline void check_roi(const RoiSpec& roi, int image_size) {
    if (roi.width() <= 0 || roi.height() <= 0)
        throw std::invalid_argument("roi: degenerate (zero-area) bounding box [" +
                                    std::to_string(roi.x0) + "," + std::to_string(roi.y0) + "," +
                                    std::to_string(roi.x1) + "," + std::to_string(roi.y1) + "]");
    if (roi.x0 < 0 || roi.y0 < 0 || roi.x1 > image_size || roi.y1 > image_size)
        throw std::invalid_argument("roi: bounding box outside image bounds");
}

// All patch cells whose rectangle intersects the bbox, in row-major order.
inline PatchIndexSet roi_to_patch_indices(const RoiSpec& roi, const ModelConfig& cfg) {
    check_roi(roi, cfg.image_size);
    const int side = cfg.grid_side();
    const int p = cfg.patch_size;
    PatchIndexSet out;
    for (int r = 0; r < side; ++r) {
        if (roi.y0 >= (r + 1) * p || roi.y1 <= r * p) continue;
        for (int c = 0; c < side; ++c) {
            if (roi.x0 >= (c + 1) * p || roi.x1 <= c * p) continue;
            out.indices.push_back(r * side + c);
        }
    }
    return out;
}

// phi maps the k-th element of I (row-major) to latent step k (1-based).
// Stage I contract: the latent-slot count equals the ROI token count.
struct PhiMap {
    std::vector<int> patch_at_step; // step k (1-based) -> patch index I[k-1]

    int steps() const { return int(patch_at_step.size()); }
    int patch_for_step(int step) const { return patch_at_step[size_t(step) - 1]; }
};

inline PhiMap build_phi(const PatchIndexSet& indices, int latent_steps) {
    if (latent_steps != indices.count())
        throw std::invalid_argument("build_phi: latent step count " + std::to_string(latent_steps) +
                                    " != ROI token count " + std::to_string(indices.count()));
    PhiMap phi;
    phi.patch_at_step = indices.indices;
    return phi;
}

} // namespace latiq
