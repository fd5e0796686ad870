#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "latiq/model.hpp"

namespace latiq {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_tensor;
    size_t worst_index = 0;
    bool finite = true;
};

// Compares an analytic gradient against central finite differences on
// randomly probed coordinates of the trainable set. loss_fn must be a
// deterministic function of the current parameter values.
inline GradCheckResult grad_check(DecoderParams& params, DecoderParams& analytic,
                                  const std::function<double()>& loss_fn, int probes,
                                  double eps, uint64_t seed) {
    struct Entry {
        std::string name;
        Vec* p;
        Vec* g;
    };
    std::vector<Entry> entries;
    {
        std::vector<Vec*> ps, gs;
        std::vector<std::string> names;
        for_each_tensor(params, [&](const std::string& n, Vec& v) {
            names.push_back(n);
            ps.push_back(&v);
        });
        for_each_tensor(analytic, [&](const std::string&, Vec& v) { gs.push_back(&v); });
        for (size_t i = 0; i < ps.size(); ++i) entries.push_back({names[i], ps[i], gs[i]});
    }
    size_t total = 0;
    for (auto& e : entries) total += e.p->size();

    GradCheckResult res;
    Rng rng(seed);
    std::uniform_int_distribution<size_t> pick(0, total - 1);
    for (int k = 0; k < probes; ++k) {
        size_t flat = pick(rng);
        size_t ti = 0;
        while (flat >= entries[ti].p->size()) {
            flat -= entries[ti].p->size();
            ++ti;
        }
        double& coord = (*entries[ti].p)[flat];
        const double saved = coord;
        coord = saved + eps;
        const double lp = loss_fn();
        coord = saved - eps;
        const double lm = loss_fn();
        coord = saved;
        const double numeric = (lp - lm) / (2.0 * eps);
        const double a = (*entries[ti].g)[flat];
        if (!std::isfinite(a) || !std::isfinite(numeric)) {
            res.finite = false;
            res.max_rel_err = std::numeric_limits<double>::infinity();
            res.worst_tensor = entries[ti].name;
            res.worst_index = flat;
            return res;
        }
        const double denom = std::max(std::max(std::abs(a), std::abs(numeric)), 1e-8);
        const double rel = std::abs(a - numeric) / denom;
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_tensor = entries[ti].name;
            res.worst_index = flat;
        }
    }
    return res;
}

} // namespace latiq
