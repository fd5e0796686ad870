#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace latiq {

// Sample Pearson linear correlation, raw (no logistic remapping).
inline double plcc(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("plcc: length mismatch");
    const size_t n = x.size();
    if (n < 2) throw std::invalid_argument("plcc: need at least 2 points");
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= double(n);
    my /= double(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw std::domain_error("plcc: undefined for zero-variance input");
    return sxy / std::sqrt(sxx * syy);
}

// Average ranks with tie handling (1-based).
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t(0));
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = 0.5 * double(i + j) + 1.0; // mean of ranks i+1..j+1
        for (size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

// Spearman rank correlation: Pearson over average ranks.
inline double srcc(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("srcc: length mismatch");
    if (x.size() < 2) throw std::invalid_argument("srcc: need at least 2 points");
    return plcc(average_ranks(x), average_ranks(y));
}

// Affine map of the native range onto [1,5]; "dmos" polarity flips so that
// larger always means better. Out-of-range values clamp and are counted.
struct MosNorm {
    std::vector<double> values;
    int clamped = 0;
};

inline double normalize_mos_one(double v, double lo, double hi, const std::string& polarity,
                                int* clamped = nullptr) {
    if (!(hi > lo)) throw std::invalid_argument("normalize_mos: degenerate native range");
    if (polarity != "mos" && polarity != "dmos")
        throw std::invalid_argument("normalize_mos: polarity must be \"mos\" or \"dmos\"");
    if (v < lo) {
        v = lo;
        if (clamped) ++*clamped;
    } else if (v > hi) {
        v = hi;
        if (clamped) ++*clamped;
    }
    double t = (v - lo) / (hi - lo);
    if (polarity == "dmos") t = 1.0 - t;
    return 1.0 + 4.0 * t;
}

inline MosNorm normalize_mos(const std::vector<double>& values, double lo, double hi,
                             const std::string& polarity) {
    MosNorm out;
    out.values.reserve(values.size());
    for (double v : values) out.values.push_back(normalize_mos_one(v, lo, hi, polarity, &out.clamped));
    return out;
}

} // namespace latiq
