#include <doctest.h>

#include <cmath>
#include <random>

#include "latiq/metrics.hpp"

using namespace latiq;

namespace {

// Brute-force references, deliberately on a different algebraic route than
// the library (raw-moment Pearson in long double, counting-based ranks).
long double pearson_reference(const std::vector<double>& x, const std::vector<double>& y) {
    const size_t n = x.size();
    long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
        sxx += (long double)(x[i]) * x[i];
        syy += (long double)(y[i]) * y[i];
        sxy += (long double)(x[i]) * y[i];
    }
    const long double num = (long double)(n)*sxy - sx * sy;
    const long double den =
        sqrtl(((long double)(n)*sxx - sx * sx) * ((long double)(n)*syy - sy * sy));
    return num / den;
}

std::vector<double> ranks_reference(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        size_t less = 0, equal = 0;
        for (size_t j = 0; j < v.size(); ++j) {
            less += v[j] < v[i];
            equal += v[j] == v[i];
        }
        out[i] = double(less) + 0.5 * double(equal + 1);
    }
    return out;
}

long double spearman_reference(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson_reference(ranks_reference(x), ranks_reference(y));
}

} // namespace

TEST_CASE("plcc hand cases") {
    std::vector<double> x = {1, 2, 3, 4};
    CHECK(plcc(x, x) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<double> neg;
    for (double v : x) neg.push_back(-v + 7.0);
    CHECK(plcc(x, neg) == doctest::Approx(-1.0).epsilon(1e-12));

    std::vector<double> y = {1, 3, 2, 4};
    CHECK(plcc(x, y) == doctest::Approx(0.8).epsilon(1e-12));

    CHECK_THROWS_AS(plcc({1.0}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(plcc({1, 1, 1}, {1, 2, 3}), std::domain_error);
}

TEST_CASE("srcc hand cases") {
    std::vector<double> x = {1, 2, 3};
    std::vector<double> y = {3, 1, 2};
    CHECK(srcc(x, y) == doctest::Approx(-0.5).epsilon(1e-12));

    // rank invariance under any strictly increasing transform
    std::vector<double> t = {0.3, -1.0, 2.5, 0.7};
    std::vector<double> mono;
    for (double v : t) mono.push_back(std::exp(v) + v * v * v);
    CHECK(srcc(t, mono) == doctest::Approx(1.0).epsilon(1e-12));

    // average-rank tie convention: [1,1,2] has ranks (1.5, 1.5, 3)
    std::vector<double> tied = {1, 1, 2};
    std::vector<double> plain = {1, 2, 3};
    CHECK(srcc(tied, plain) == doctest::Approx(std::sqrt(3.0) / 2.0).epsilon(1e-12));
    CHECK(srcc(tied, plain) == doctest::Approx(0.8660254037844387).epsilon(1e-9));

    CHECK_THROWS_AS(srcc({2, 2, 2}, {1, 2, 3}), std::domain_error); // all tied
}

TEST_CASE("metrics match the brute-force references") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> len(2, 200);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    std::uniform_int_distribution<int> quantize(0, 1);
    for (int trial = 0; trial < 150; ++trial) {
        const int n = len(rng);
        std::vector<double> x(size_t(n), 0.0), y(size_t(n), 0.0);
        const bool with_ties = quantize(rng) == 1;
        for (int i = 0; i < n; ++i) {
            x[size_t(i)] = with_ties ? std::round(u(rng)) : u(rng);
            y[size_t(i)] = with_ties ? std::round(u(rng)) : u(rng);
        }
        // skip degenerate draws
        bool xflat = true, yflat = true;
        for (int i = 1; i < n; ++i) {
            xflat &= x[size_t(i)] == x[0];
            yflat &= y[size_t(i)] == y[0];
        }
        if (xflat || yflat) continue;
        CHECK(std::abs(plcc(x, y) - double(pearson_reference(x, y))) < 1e-9);
        CHECK(std::abs(srcc(x, y) - double(spearman_reference(x, y))) < 1e-9);
    }
}

TEST_CASE("plcc affine invariance and sign flip, srcc monotone invariance") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> x(12), y(12);
        for (size_t i = 0; i < 12; ++i) {
            x[i] = u(rng);
            y[i] = u(rng);
        }
        const double base = plcc(x, y);

        std::vector<double> ax;
        for (double v : x) ax.push_back(2.5 * v + 3.0); // positive affine
        CHECK(plcc(ax, y) == doctest::Approx(base).epsilon(1e-9));

        std::vector<double> nx;
        for (double v : x) nx.push_back(-0.5 * v + 1.0); // negative scaling flips the sign
        CHECK(plcc(nx, y) == doctest::Approx(-base).epsilon(1e-9));

        const double sbase = srcc(x, y);
        std::vector<double> mono;
        for (double v : x) mono.push_back(v * v * v + 2.0 * v); // strictly increasing
        CHECK(srcc(mono, y) == doctest::Approx(sbase).epsilon(1e-9));
    }
}

TEST_CASE("normalize_mos") {
    CHECK(normalize_mos_one(50.0, 0.0, 100.0, "mos") == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(normalize_mos_one(0.0, 0.0, 1.0, "dmos") == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(normalize_mos_one(1400.0, 1000.0, 1800.0, "mos") == doctest::Approx(3.0).epsilon(1e-12));

    // endpoints map exactly onto {1, 5}, order depending on polarity
    CHECK(normalize_mos_one(0.0, 0.0, 100.0, "mos") == 1.0);
    CHECK(normalize_mos_one(100.0, 0.0, 100.0, "mos") == 5.0);
    CHECK(normalize_mos_one(0.0, 0.0, 100.0, "dmos") == 5.0);
    CHECK(normalize_mos_one(100.0, 0.0, 100.0, "dmos") == 1.0);

    MosNorm out = normalize_mos({-5.0, 50.0, 120.0}, 0.0, 100.0, "mos");
    CHECK(out.clamped == 2);
    CHECK(out.values[0] == 1.0);
    CHECK(out.values[2] == 5.0);

    CHECK_THROWS_AS(normalize_mos_one(1.0, 2.0, 2.0, "mos"), std::invalid_argument);
    CHECK_THROWS_AS(normalize_mos_one(1.0, 0.0, 1.0, "median"), std::invalid_argument);
}
