#pragma once

#include <stdexcept>
#include <vector>

#include "latiq/config.hpp"
#include "latiq/encoder.hpp"
#include "latiq/model.hpp"
#include "latiq/roi.hpp"
#include "latiq/tensor.hpp"

namespace latiq {

// Mean cross-entropy over masked-in positions. targets[p] is the id the
// position must predict, or -1 where next-token loss does not apply (prompt
// region, latent slots, visual positions).
inline double loss_ntp(const Mat& logits, const std::vector<int>& targets) {
    if (int(targets.size()) != logits.rows)
        throw std::invalid_argument("loss_ntp: targets/logits length mismatch");
    Vec lp(size_t(logits.cols));
    double sum = 0.0;
    int count = 0;
    for (int p = 0; p < logits.rows; ++p) {
        if (targets[size_t(p)] < 0) continue;
        log_softmax_row(logits.row(p), lp.data(), logits.cols);
        sum -= lp[size_t(targets[size_t(p)])];
        ++count;
    }
    if (count == 0) throw std::invalid_argument("loss_ntp: mask admits no positions");
    return sum / count;
}

// dlogits += scale * d(mean CE)/dlogits.
inline void grad_ntp(const Mat& logits, const std::vector<int>& targets, double scale, Mat& dlogits) {
    int count = 0;
    for (int t : targets)
        if (t >= 0) ++count;
    if (count == 0) throw std::invalid_argument("grad_ntp: mask admits no positions");
    Vec lp(size_t(logits.cols));
    const double k = scale / count;
    for (int p = 0; p < logits.rows; ++p) {
        const int t = targets[size_t(p)];
        if (t < 0) continue;
        log_softmax_row(logits.row(p), lp.data(), logits.cols);
        double* dz = dlogits.row(p);
        for (int i = 0; i < logits.cols; ++i) dz[i] += k * std::exp(lp[size_t(i)]);
        dz[t] -= k;
    }
}

// Latent reconstruction: mean over i in I of || g(h_phi(i)) - v_i ||^2.
// hidden_rows[k] points at the last-layer hidden state of latent step k+1.
inline double loss_lvr(const Model& m, const std::vector<const double*>& hidden_rows,
                       const VisualTokenGrid& grid, const PhiMap& phi) {
    if (phi.steps() == 0) throw std::invalid_argument("loss_lvr: empty ROI index set");
    if (int(hidden_rows.size()) != phi.steps())
        throw std::invalid_argument("loss_lvr: latent slot count != |I|");
    Vec g(size_t(m.cfg.visual_dim));
    double sum = 0.0;
    for (int step = 1; step <= phi.steps(); ++step) {
        matvec(m.dec.lat_w, hidden_rows[size_t(step) - 1], g.data());
        const double* v = grid.tokens.row(phi.patch_for_step(step));
        for (int i = 0; i < m.cfg.visual_dim; ++i) {
            const double r = g[size_t(i)] + m.dec.lat_b[size_t(i)] - v[i];
            sum += r * r;
        }
    }
    return sum / phi.steps();
}

// Accumulates d(loss_lvr)/d(hidden) rows (scaled) into dhidden and latent-head
// gradients into grads.
inline void grad_lvr(const Model& m, const std::vector<const double*>& hidden_rows,
                     const std::vector<int>& hidden_positions, const VisualTokenGrid& grid,
                     const PhiMap& phi, double scale, Mat& dhidden, DecoderParams& grads) {
    Vec g(size_t(m.cfg.visual_dim)), dr(size_t(m.cfg.visual_dim)), dh(size_t(m.cfg.embed_dim));
    const double k = 2.0 * scale / phi.steps();
    for (int step = 1; step <= phi.steps(); ++step) {
        const double* h = hidden_rows[size_t(step) - 1];
        matvec(m.dec.lat_w, h, g.data());
        const double* v = grid.tokens.row(phi.patch_for_step(step));
        for (int i = 0; i < m.cfg.visual_dim; ++i)
            dr[size_t(i)] = k * (g[size_t(i)] + m.dec.lat_b[size_t(i)] - v[i]);
        add_outer(grads.lat_w, dr.data(), h);
        for (int i = 0; i < m.cfg.visual_dim; ++i) grads.lat_b[size_t(i)] += dr[size_t(i)];
        matvec_t(m.dec.lat_w, dr.data(), dh.data());
        double* out = dhidden.row(hidden_positions[size_t(step) - 1]);
        for (int i = 0; i < m.cfg.embed_dim; ++i) out[i] += dh[size_t(i)];
    }
}

// Eq: L_SFT = L_NTP + lambda_lvr * L_LVR, exactly.
inline double loss_sft(double ntp, double lvr, const SftConfig& cfg) {
    return ntp + cfg.lambda_lvr * lvr;
}

} // namespace latiq
