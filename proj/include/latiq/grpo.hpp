#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "latiq/adamw.hpp"
#include "latiq/forge.hpp"
#include "latiq/model.hpp"
#include "latiq/rewards.hpp"

namespace latiq {

// One sampled response under the frozen rollout policy.
struct Rollout {
    Response response;
    std::vector<double> old_logprobs; // per policy token, recorded at sampling time
    double reward_total = 0.0;
    double reward_gauss_v = 0.0;
    int reward_fmt = 0;
    double advantage = 0.0;
};

// K rollouts for one input, with centered advantages.
struct GroupBatch {
    Mat visual;          // projected visual embeddings for the record's image
    std::vector<int> prompt;
    double score = 0.0;  // ground-truth s
    std::vector<Rollout> rollouts;
};

// ---------------------------------------------------------------------------
// Replay: restore the rollout's conditioning context under other parameters
// ---------------------------------------------------------------------------

// Rebuilds the decoder element sequence of a decoded response. The recorded
// latent states act as fixed conditioning: latent inputs are recomputed from
// them through the latent head, never backpropagated past them.
inline SequenceSpec build_replay_sequence(const Mat& visual, const std::vector<int>& prompt,
                                          const Response& r) {
    SequenceSpec seq;
    seq.consts = visual;
    seq.trace = &r.latent_trace;
    for (int n = 0; n < visual.rows; ++n) seq.elems.push_back({InputElem::Kind::constant, -1, n, -1});
    for (int t : prompt) seq.elems.push_back({InputElem::Kind::token, t, -1, -1});
    const int n_tokens = int(r.token_ids.size());
    for (int k = 0; k < n_tokens; ++k) {
        if (r.n_elems > 0 && seq.length() >= r.n_elems) break; // token beyond the length cap
        const int tok = r.token_ids[size_t(k)];
        if (tok == TOK_EOT && k == n_tokens - 1) break; // terminal token occupies no position
        seq.elems.push_back({InputElem::Kind::token, tok, -1, -1});
        if (k == r.segment_start) {
            for (int t = 0; t < r.latent_steps(); ++t) {
                if (t == 0)
                    seq.elems.push_back({InputElem::Kind::token, TOK_LVR_SLOT, -1, -1});
                else
                    seq.elems.push_back({InputElem::Kind::feedback, -1, -1, t - 1});
            }
        }
    }
    return seq;
}

inline std::vector<double> gather_policy_logprobs(const ForwardCache& fc, const Response& r) {
    std::vector<double> out;
    out.reserve(r.policy_elems.size());
    Vec lp(size_t(fc.logits.cols), 0.0);
    for (size_t i = 0; i < r.policy_elems.size(); ++i) {
        const int row = r.policy_elems[i] - 1;
        if (row < 0 || row >= fc.len)
            throw std::invalid_argument("replay: trace/sequence length mismatch");
        log_softmax_row(fc.logits.row(row), lp.data(), fc.logits.cols);
        out.push_back(lp[size_t(r.policy_tokens[i])]);
    }
    return out;
}

// log pi_theta(y_t | x, latent trace, y_<t) for every policy token.
inline std::vector<double> replay_logprobs(const Model& m, const Mat& visual,
                                           const std::vector<int>& prompt, const Response& r) {
    SequenceSpec seq = build_replay_sequence(visual, prompt, r);
    if (r.n_elems > 0 && seq.length() != r.n_elems)
        throw std::invalid_argument("replay: trace/sequence length mismatch");
    ForwardCache fc = forward_teacher_forced(m, seq);
    return gather_policy_logprobs(fc, r);
}

// ---------------------------------------------------------------------------
// Ratios, KL, objective
// ---------------------------------------------------------------------------

inline std::vector<double> importance_ratios(const std::vector<double>& new_lp,
                                             const std::vector<double>& old_lp) {
    if (new_lp.size() != old_lp.size())
        throw std::invalid_argument("importance_ratios: length mismatch");
    std::vector<double> out(new_lp.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(new_lp[i] - old_lp[i]);
    return out;
}

// Exact categorical KL(softmax(zp) || softmax(zq)).
inline double kl_categorical(const double* zp, const double* zq, int n) {
    Vec lp(size_t(n), 0.0), lq(size_t(n), 0.0);
    log_softmax_row(zp, lp.data(), n);
    log_softmax_row(zq, lq.data(), n);
    double kl = 0.0;
    for (int i = 0; i < n; ++i) kl += std::exp(lp[size_t(i)]) * (lp[size_t(i)] - lq[size_t(i)]);
    return kl;
}

// Accumulates scale * d KL / d zp into dzp.
inline void grad_kl_categorical(const double* zp, const double* zq, int n, double scale, double* dzp) {
    Vec lp(size_t(n), 0.0), lq(size_t(n), 0.0);
    log_softmax_row(zp, lp.data(), n);
    log_softmax_row(zq, lq.data(), n);
    double kl = 0.0;
    for (int i = 0; i < n; ++i) kl += std::exp(lp[size_t(i)]) * (lp[size_t(i)] - lq[size_t(i)]);
    for (int i = 0; i < n; ++i)
        dzp[i] += scale * std::exp(lp[size_t(i)]) * ((lp[size_t(i)] - lq[size_t(i)]) - kl);
}

// Clipped-surrogate token term: min(r*A, clip(r, 1-eps, 1+eps)*A).
inline double surrogate_token(double ratio, double advantage, double eps) {
    const double clipped = std::min(std::max(ratio, 1.0 - eps), 1.0 + eps);
    return std::min(ratio * advantage, clipped * advantage);
}

// d(surrogate)/d(new log-prob): ratio*advantage while the unclipped branch is
// active, 0 once clipping freezes the term.
inline double surrogate_dlogprob(double ratio, double advantage, double eps) {
    if (advantage >= 0.0) return ratio > 1.0 + eps ? 0.0 : ratio * advantage;
    return ratio < 1.0 - eps ? 0.0 : ratio * advantage;
}

// The group objective to maximize: (1/K) sum_k sum_t min(r A, clip(r) A)
// minus beta * sum of per-token KL terms (optionally averaged per rollout).
inline double grpo_objective(const std::vector<std::vector<double>>& new_lp,
                             const std::vector<std::vector<double>>& old_lp,
                             const std::vector<double>& advantages,
                             const std::vector<std::vector<double>>& kl_terms,
                             const GrpoConfig& cfg) {
    const size_t K = new_lp.size();
    if (old_lp.size() != K || advantages.size() != K)
        throw std::invalid_argument("grpo_objective: group size mismatch");
    double surr = 0.0;
    for (size_t k = 0; k < K; ++k) {
        if (new_lp[k].size() != old_lp[k].size())
            throw std::invalid_argument("grpo_objective: logprob length mismatch");
        for (size_t t = 0; t < new_lp[k].size(); ++t)
            surr += surrogate_token(std::exp(new_lp[k][t] - old_lp[k][t]), advantages[k],
                                    cfg.clip_epsilon);
    }
    surr /= double(K);
    double kl = 0.0;
    for (const auto& ks : kl_terms)
        for (double v : ks) kl += v;
    if (cfg.kl_average_per_rollout) kl /= double(K);
    return surr - cfg.kl_beta * kl;
}

// ---------------------------------------------------------------------------
// Rollout sampling
// ---------------------------------------------------------------------------

inline void fill_group_rewards(GroupBatch& g, const GrpoConfig& cfg) {
    double mean = 0.0;
    for (auto& ro : g.rollouts) {
        ro.reward_fmt = reward_format(ro.response);
        ro.reward_gauss_v = reward_gauss(ro.response.parsed_score, g.score, cfg.sigma, cfg.tau);
        ro.reward_total = ro.reward_gauss_v + ro.reward_fmt;
        mean += ro.reward_total;
    }
    mean /= double(g.rollouts.size());
    double var = 0.0;
    for (auto& ro : g.rollouts) {
        ro.advantage = ro.reward_total - mean;
        var += ro.advantage * ro.advantage;
    }
    if (cfg.advantage_std_norm) {
        const double sd = std::sqrt(var / double(g.rollouts.size())) + 1e-8;
        for (auto& ro : g.rollouts) ro.advantage /= sd;
    }
}

// K stochastic decodes under the frozen snapshot pi_old.
inline GroupBatch sample_group(const Model& model_old, const QualityRecord& record,
                               const GrpoConfig& cfg, uint64_t seed) {
    GroupBatch g;
    VisualTokenGrid grid = encode_image(record.image, model_old.cfg, model_old.frozen);
    g.visual = project_visual(grid, model_old.frozen);
    g.prompt = record.prompt_ids();
    g.score = record.mos;
    g.rollouts.resize(size_t(cfg.group_size));
    for (int k = 0; k < cfg.group_size; ++k) {
        DecodeConfig dc;
        dc.greedy = false;
        dc.temperature = cfg.temperature;
        dc.seed = derive_seed(seed, uint64_t(k));
        dc.learnable_stop = cfg.learnable_stop;
        dc.latent_budget = cfg.latent_budget;
        Rollout& ro = g.rollouts[size_t(k)];
        ro.response = generate_from_visual(model_old, g.visual, g.prompt, dc);
        ro.old_logprobs = ro.response.per_token_logprobs;
    }
    fill_group_rewards(g, cfg);
    return g;
}

// ---------------------------------------------------------------------------
// Stage II training
// ---------------------------------------------------------------------------

struct GrpoTraceRow {
    long iteration = 0;
    double mean_r_total = 0.0;
    double mean_r_gauss = 0.0;
    double format_rate = 0.0;
    double mean_abs_err = 0.0;
    double mean_kl = 0.0;
};

inline void write_grpo_trace(const std::vector<GrpoTraceRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_grpo_trace: cannot open " + path);
    out << "iteration,mean_r_total,mean_r_gauss,format_rate,mean_abs_err,mean_kl\n";
    for (const auto& r : rows)
        out << r.iteration << ',' << r.mean_r_total << ',' << r.mean_r_gauss << ',' << r.format_rate
            << ',' << r.mean_abs_err << ',' << r.mean_kl << '\n';
}

// Accumulates the gradient of -(objective contribution) of one rollout into
// grads, and returns its per-token KL values against the reference.
inline std::vector<double> grpo_rollout_backward(Model& m, const Model& ref, const GroupBatch& g,
                                                 const Rollout& ro, const GrpoConfig& cfg,
                                                 DecoderParams& grads) {
    SequenceSpec seq = build_replay_sequence(g.visual, g.prompt, ro.response);
    ForwardCache fc = forward_teacher_forced(m, seq);
    ForwardCache ref_fc = forward_teacher_forced(ref, seq);

    std::vector<double> new_lp = gather_policy_logprobs(fc, ro.response);
    std::vector<double> kls;
    kls.reserve(new_lp.size());

    Mat dlogits(fc.len, m.cfg.vocab_size);
    Vec lp(size_t(m.cfg.vocab_size), 0.0);
    const double kl_scale = cfg.kl_average_per_rollout ? 1.0 / double(cfg.group_size) : 1.0;
    for (size_t i = 0; i < new_lp.size(); ++i) {
        const int row = ro.response.policy_elems[i] - 1;
        const int tok = ro.response.policy_tokens[i];
        const double ratio = std::exp(new_lp[i] - ro.old_logprobs[i]);
        const double dsurr =
            surrogate_dlogprob(ratio, ro.advantage, cfg.clip_epsilon) / double(cfg.group_size);
        // maximize: loss = -J, d(-J)/dlogits = -dsurr * d(logprob)/dlogits + beta * dKL/dlogits
        if (dsurr != 0.0) {
            log_softmax_row(fc.logits.row(row), lp.data(), m.cfg.vocab_size);
            double* dz = dlogits.row(row);
            for (int v = 0; v < m.cfg.vocab_size; ++v) dz[v] += dsurr * std::exp(lp[size_t(v)]);
            dz[tok] -= dsurr;
        }
        kls.push_back(kl_categorical(fc.logits.row(row), ref_fc.logits.row(row), m.cfg.vocab_size));
        if (cfg.kl_beta != 0.0)
            grad_kl_categorical(fc.logits.row(row), ref_fc.logits.row(row), m.cfg.vocab_size,
                                cfg.kl_beta * kl_scale, dlogits.row(row));
    }
    backward(m, seq, fc, dlogits, nullptr, grads);
    return kls;
}

// Stage II: iterate rollout phases under a refreshed pi_old snapshot, replay
// against the live parameters, ascend the clipped objective with KL to the
// Stage I reference.
inline std::vector<GrpoTraceRow> train_stage2(Model& m, const std::vector<QualityRecord>& records,
                                              const GrpoConfig& cfg) {
    cfg.validate();
    if (records.empty()) throw std::invalid_argument("train_stage2: no records");

    const Model ref = m; // frozen SFT reference for the KL term
    AdamW opt;
    opt.init(m.dec);
    DecoderParams grads = make_grads(m.dec);
    std::vector<GrpoTraceRow> trace;
    Rng rng(cfg.seed);
    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    long iteration = 0;
    uint64_t rollout_stream = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t at = 0; at < order.size(); at += size_t(cfg.groups_per_phase)) {
            const size_t take = std::min(size_t(cfg.groups_per_phase), order.size() - at);
            const Model snapshot = m; // pi_old for this rollout phase
            std::vector<GroupBatch> groups;
            groups.reserve(take);
            for (size_t i = 0; i < take; ++i)
                groups.push_back(sample_group(snapshot, records[order[at + i]], cfg,
                                              derive_seed(cfg.seed, 0x9000 + rollout_stream++)));

            GrpoTraceRow row;
            row.iteration = ++iteration;
            long n_roll = 0, n_parsed = 0, n_kl = 0;
            double abs_err = 0.0, kl_sum = 0.0;

            for (auto& g : groups) {
                zero_grads(grads);
                for (auto& ro : g.rollouts) {
                    auto kls = grpo_rollout_backward(m, ref, g, ro, cfg, grads);
                    for (double v : kls) kl_sum += v;
                    n_kl += long(kls.size());
                    row.mean_r_total += ro.reward_total;
                    row.mean_r_gauss += ro.reward_gauss_v;
                    row.format_rate += ro.reward_fmt;
                    if (ro.response.parsed_score) {
                        abs_err += std::abs(*ro.response.parsed_score - g.score);
                        ++n_parsed;
                    }
                    ++n_roll;
                }
                bool finite = true;
                for_each_tensor(grads, [&](const std::string&, Vec& v) {
                    if (finite && !all_finite(v)) finite = false;
                });
                if (!finite)
                    throw std::runtime_error("train_stage2: non-finite gradient at step " +
                                             std::to_string(m.train_steps + 1));
                opt.step(m.dec, grads, cfg.learning_rate, cfg.weight_decay);
                ++m.train_steps;
            }

            row.mean_r_total /= double(n_roll);
            row.mean_r_gauss /= double(n_roll);
            row.format_rate /= double(n_roll);
            row.mean_abs_err = n_parsed ? abs_err / double(n_parsed) : std::nan("");
            row.mean_kl = n_kl ? kl_sum / double(n_kl) : 0.0;
            trace.push_back(row);
        }
    }
    return trace;
}

} // namespace latiq
