#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "latiq/image.hpp"
#include "latiq/roi.hpp"
#include "latiq/util.hpp"

namespace latiq {

enum class DistKind { noise, compression, blur, photometric, null_kind };

inline const char* kind_word(DistKind k) {
    switch (k) {
        case DistKind::noise: return "noise";
        case DistKind::compression: return "compression";
        case DistKind::blur: return "blur";
        case DistKind::photometric: return "photometric";
        case DistKind::null_kind: return "none";
    }
    return "none";
}

inline const char* severity_word(int severity) {
    static const char* words[] = {"slight", "moderate", "obvious", "serious", "catastrophic"};
    if (severity < 1 || severity > 5) throw std::invalid_argument("severity must be in 1..5");
    return words[severity - 1];
}

struct DistortionSpec {
    DistKind kind = DistKind::null_kind;
    int severity = 1; // 1 = slight ... 5 = catastrophic
    RoiSpec roi;
    uint64_t seed = 0;
};

// Procedural stand-in for source photographs: smooth gradients, a few filled
// shapes, and low-amplitude sinusoidal texture so every region carries local
// variance. Pure function of (seed, size).
inline Image synth_base_image(uint64_t seed, int size) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(size, size);

    double a[3], bx[3], by[3];
    for (int c = 0; c < 3; ++c) {
        a[c] = 0.3 + 0.4 * u(rng);
        bx[c] = -0.3 + 0.6 * u(rng);
        by[c] = -0.3 + 0.6 * u(rng);
    }
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = a[c] + bx[c] * x / size + by[c] * y / size;

    const int n_shapes = 2 + int(u(rng) * 3.0);
    for (int s = 0; s < n_shapes; ++s) {
        const bool circle = u(rng) < 0.5;
        const int cx = int(u(rng) * size);
        const int cy = int(u(rng) * size);
        const int r = 2 + int(u(rng) * (size / 4));
        double off[3];
        for (int c = 0; c < 3; ++c) off[c] = -0.35 + 0.7 * u(rng);
        for (int y = std::max(0, cy - r); y < std::min(size, cy + r); ++y)
            for (int x = std::max(0, cx - r); x < std::min(size, cx + r); ++x) {
                if (circle && (x - cx) * (x - cx) + (y - cy) * (y - cy) > r * r) continue;
                for (int c = 0; c < 3; ++c) img.at(y, x, c) += off[c];
            }
    }

    for (int band = 0; band < 2; ++band) {
        const double freq = 3.0 + 6.0 * u(rng);
        const double theta = 2.0 * M_PI * u(rng);
        const double phase = 2.0 * M_PI * u(rng);
        const double amp = 0.04 + 0.04 * u(rng);
        const double kx = std::cos(theta) * freq * 2.0 * M_PI / size;
        const double ky = std::sin(theta) * freq * 2.0 * M_PI / size;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double v = amp * std::sin(kx * x + ky * y + phase);
                for (int c = 0; c < 3; ++c) img.at(y, x, c) += v;
            }
    }

    // keep a little headroom so additive distortions are not pre-clamped
    for (double& v : img.px) v = std::min(0.97, std::max(0.03, v));
    return img;
}

namespace detail {

inline void distort_noise(Image& img, const DistortionSpec& spec) {
    static const double stds[] = {0.03, 0.07, 0.13, 0.22, 0.35};
    const double sd = stds[spec.severity - 1];
    Rng rng(spec.seed);
    std::normal_distribution<double> n(0.0, 1.0);
    // the unit noise field depends only on the seed, so severity scales a
    // fixed field and ROI deviation is strictly ordered
    for (int y = spec.roi.y0; y < spec.roi.y1; ++y)
        for (int x = spec.roi.x0; x < spec.roi.x1; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = clamp01(img.at(y, x, c) + sd * n(rng));
}

inline void distort_blur(const Image& src, Image& img, const DistortionSpec& spec) {
    static const double sigmas[] = {0.7, 1.1, 1.7, 2.6, 4.0};
    const double sigma = sigmas[spec.severity - 1];
    const int rad = int(std::ceil(3.0 * sigma));
    std::vector<double> kern(size_t(2 * rad + 1));
    double ksum = 0.0;
    for (int i = -rad; i <= rad; ++i) {
        kern[size_t(i + rad)] = std::exp(-0.5 * i * i / (sigma * sigma));
        ksum += kern[size_t(i + rad)];
    }
    for (double& k : kern) k /= ksum;
    auto clampc = [&](int v, int hi) { return std::max(0, std::min(hi - 1, v)); };
    // horizontal pass into a scratch strip, then vertical; reads may cross the
    // ROI border, writes stay inside
    Image strip = src;
    for (int y = std::max(0, spec.roi.y0 - rad); y < std::min(src.h, spec.roi.y1 + rad); ++y)
        for (int x = spec.roi.x0; x < spec.roi.x1; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int i = -rad; i <= rad; ++i) s += kern[size_t(i + rad)] * src.at(y, clampc(x + i, src.w), c);
                strip.at(y, x, c) = s;
            }
    for (int y = spec.roi.y0; y < spec.roi.y1; ++y)
        for (int x = spec.roi.x0; x < spec.roi.x1; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int i = -rad; i <= rad; ++i) s += kern[size_t(i + rad)] * strip.at(clampc(y + i, src.h), x, c);
                img.at(y, x, c) = clamp01(s);
            }
}

// Block-truncation style codec proxy: per 4x4 block and channel, quantize to
// a severity-scaled number of uniform levels spanning the block range.
inline void distort_compression(Image& img, const DistortionSpec& spec) {
    static const int levels[] = {16, 8, 4, 3, 2};
    const int L = levels[spec.severity - 1];
    const int B = 4;
    for (int by = spec.roi.y0 / B * B; by < spec.roi.y1; by += B)
        for (int bx = spec.roi.x0 / B * B; bx < spec.roi.x1; bx += B)
            for (int c = 0; c < 3; ++c) {
                double lo = 1.0, hi = 0.0;
                for (int y = std::max(by, spec.roi.y0); y < std::min(by + B, spec.roi.y1); ++y)
                    for (int x = std::max(bx, spec.roi.x0); x < std::min(bx + B, spec.roi.x1); ++x) {
                        lo = std::min(lo, img.at(y, x, c));
                        hi = std::max(hi, img.at(y, x, c));
                    }
                if (hi <= lo) continue;
                const double step = (hi - lo) / (L - 1);
                for (int y = std::max(by, spec.roi.y0); y < std::min(by + B, spec.roi.y1); ++y)
                    for (int x = std::max(bx, spec.roi.x0); x < std::min(bx + B, spec.roi.x1); ++x) {
                        const double v = img.at(y, x, c);
                        img.at(y, x, c) = lo + std::round((v - lo) / step) * step;
                    }
            }
}

inline void distort_photometric(Image& img, const DistortionSpec& spec) {
    static const double alphas[] = {1.06, 1.14, 1.25, 1.40, 1.60};
    static const double betas[] = {0.06, 0.12, 0.20, 0.30, 0.42};
    const double a = alphas[spec.severity - 1];
    const double b = betas[spec.severity - 1];
    for (int y = spec.roi.y0; y < spec.roi.y1; ++y)
        for (int x = spec.roi.x0; x < spec.roi.x1; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = clamp01(a * (img.at(y, x, c) - 0.5) + 0.5 + b);
}

} // namespace detail

// Pixels outside spec.roi are bit-identical to the input for every kind.
inline Image apply_distortion(const Image& src, const DistortionSpec& spec) {
    if (spec.kind == DistKind::null_kind) return src;
    if (spec.severity < 1 || spec.severity > 5)
        throw std::invalid_argument("apply_distortion: severity must be in 1..5");
    if (spec.roi.width() <= 0 || spec.roi.height() <= 0)
        throw std::invalid_argument("apply_distortion: degenerate roi");
    if (spec.roi.x0 < 0 || spec.roi.y0 < 0 || spec.roi.x1 > src.w || spec.roi.y1 > src.h)
        throw std::invalid_argument("apply_distortion: roi outside image bounds");
    Image out = src;
    switch (spec.kind) {
        case DistKind::noise: detail::distort_noise(out, spec); break;
        case DistKind::blur: detail::distort_blur(src, out, spec); break;
        case DistKind::compression: detail::distort_compression(out, spec); break;
        case DistKind::photometric: detail::distort_photometric(out, spec); break;
        case DistKind::null_kind: break;
    }
    return out;
}

// Mean squared deviation from the clean image inside the ROI.
inline double roi_msd(const Image& clean, const Image& distorted, const RoiSpec& roi) {
    double s = 0.0;
    long n = 0;
    for (int y = roi.y0; y < roi.y1; ++y)
        for (int x = roi.x0; x < roi.x1; ++x)
            for (int c = 0; c < 3; ++c) {
                const double d = clean.at(y, x, c) - distorted.at(y, x, c);
                s += d * d;
                ++n;
            }
    return n ? s / double(n) : 0.0;
}

} // namespace latiq
