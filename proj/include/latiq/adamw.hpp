#pragma once

#include <cmath>
#include <vector>

#include "latiq/model.hpp"

namespace latiq {

// Decoupled-weight-decay adaptive optimizer over the trainable decoder set.
// The frozen encoder/projector never enters: it is not part of DecoderParams.
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    DecoderParams m_;
    DecoderParams v_;
    bool ready = false;

    void init(const DecoderParams& shape) {
        m_ = make_grads(shape);
        v_ = make_grads(shape);
        t = 0;
        ready = true;
    }

    void step(DecoderParams& params, DecoderParams& grads, double lr, double weight_decay) {
        if (!ready) init(params);
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, double(t));
        const double bc2 = 1.0 - std::pow(beta2, double(t));
        std::vector<Vec*> ps, gs, ms, vs;
        for_each_tensor(params, [&](const std::string&, Vec& v) { ps.push_back(&v); });
        for_each_tensor(grads, [&](const std::string&, Vec& v) { gs.push_back(&v); });
        for_each_tensor(m_, [&](const std::string&, Vec& v) { ms.push_back(&v); });
        for_each_tensor(v_, [&](const std::string&, Vec& v) { vs.push_back(&v); });
        for (size_t k = 0; k < ps.size(); ++k) {
            Vec& p = *ps[k];
            Vec& g = *gs[k];
            Vec& m = *ms[k];
            Vec& v = *vs[k];
            for (size_t i = 0; i < p.size(); ++i) {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                p[i] -= lr * (mh / (std::sqrt(vh) + eps) + weight_decay * p[i]);
            }
        }
    }
};

inline void zero_grads(DecoderParams& g) {
    for_each_tensor(g, [](const std::string&, Vec& v) { std::fill(v.begin(), v.end(), 0.0); });
}

inline void scale_grads(DecoderParams& g, double s) {
    for_each_tensor(g, [&](const std::string&, Vec& v) {
        for (double& x : v) x *= s;
    });
}

} // namespace latiq
