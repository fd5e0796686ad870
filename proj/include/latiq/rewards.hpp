#pragma once

#include <cmath>
#include <optional>

#include "latiq/config.hpp"
#include "latiq/response.hpp"

namespace latiq {

// Binary structural-validity reward.
inline int reward_format(const Response& r) {
    return validate_format(r) == FormatCheck::valid ? 1 : 0;
}

// Truncated-Gaussian score-accuracy reward: exp(-(d)^2 / (2 sigma^2)) for
// |s_hat - s| <= tau, else 0.
inline double reward_gauss(double s_hat, double s, double sigma, double tau) {
    const double d = std::abs(s_hat - s);
    if (d > tau) return 0.0;
    return std::exp(-(d * d) / (2.0 * sigma * sigma));
}

// Unparsable answers count as maximally wrong.
inline double reward_gauss(const std::optional<double>& s_hat, double s, double sigma, double tau) {
    if (!s_hat) return 0.0;
    return reward_gauss(*s_hat, s, sigma, tau);
}

inline double reward_total(const Response& r, double s, const GrpoConfig& cfg) {
    return reward_gauss(r.parsed_score, s, cfg.sigma, cfg.tau) + reward_format(r);
}

} // namespace latiq
