#pragma once

#include <cassert>
#include <cmath>
#include <cstring>
#include <random>
#include <span>
#include <vector>

#include "latiq/util.hpp"

namespace latiq {

using Vec = std::vector<double>;

// Dense row-major matrix. All model math runs in double so finite-difference
// checks resolve at the tolerances the tests pin.
struct Mat {
    int rows = 0;
    int cols = 0;
    Vec a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(size_t(r) * size_t(c), 0.0) {}

    double* row(int r) { return a.data() + size_t(r) * cols; }
    const double* row(int r) const { return a.data() + size_t(r) * cols; }
    double& at(int r, int c) { return a[size_t(r) * cols + c]; }
    double at(int r, int c) const { return a[size_t(r) * cols + c]; }
    void zero() { std::fill(a.begin(), a.end(), 0.0); }
    size_t size() const { return a.size(); }
};

inline void fill_normal(Vec& v, Rng& rng, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    for (double& x : v) x = d(rng);
}

inline void fill_normal(Mat& m, Rng& rng, double stddev) { fill_normal(m.a, rng, stddev); }

// y = W x  (W: out x in)
inline void matvec(const Mat& w, const double* x, double* y) {
    for (int r = 0; r < w.rows; ++r) {
        const double* wr = w.row(r);
        double s = 0.0;
        for (int c = 0; c < w.cols; ++c) s += wr[c] * x[c];
        y[r] = s;
    }
}

// y = W^T x  (x has w.rows entries, y has w.cols)
inline void matvec_t(const Mat& w, const double* x, double* y) {
    std::fill(y, y + w.cols, 0.0);
    for (int r = 0; r < w.rows; ++r) {
        const double* wr = w.row(r);
        const double xr = x[r];
        for (int c = 0; c < w.cols; ++c) y[c] += wr[c] * xr;
    }
}

// W += u v^T  (u: rows, v: cols)
inline void add_outer(Mat& w, const double* u, const double* v) {
    for (int r = 0; r < w.rows; ++r) {
        double* wr = w.row(r);
        const double ur = u[r];
        for (int c = 0; c < w.cols; ++c) wr[c] += ur * v[c];
    }
}

inline void axpy(double alpha, const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline double dot(const double* x, const double* y, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace latiq
