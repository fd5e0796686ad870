#pragma once

#include <algorithm>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "latiq/adamw.hpp"
#include "latiq/forge.hpp"
#include "latiq/losses.hpp"
#include "latiq/model.hpp"

namespace latiq {

// A Stage I example lowered to decoder positions: visual constants, prompt
// tokens, the expanded latent segment with teacher-forced ROI inputs, and the
// discrete answer targets.
struct Stage1Sequence {
    SequenceSpec seq;
    std::vector<int> ntp_targets;      // -1 where next-token loss does not apply
    std::vector<int> latent_positions; // element index of latent step k+1
    PhiMap phi;
    VisualTokenGrid grid;
};

inline Stage1Sequence build_stage1_sequence(const Model& m, const TrainingExample& ex,
                                            bool supervise_prompt = false,
                                            const Tokenizer& tok = default_tokenizer()) {
    Stage1Sequence out;
    out.grid = encode_image(ex.image, m.cfg, m.frozen);
    Mat vis = project_visual(out.grid, m.frozen);
    PatchIndexSet idx = roi_to_patch_indices(ex.roi, m.cfg);
    out.phi = build_phi(idx, idx.count()); // Stage I contract: T = T_v

    const std::vector<int> prompt = ex.prompt_ids(tok);
    const std::vector<int> answer = ex.answer_ids(tok);
    if (prompt.empty()) throw std::invalid_argument("stage1: empty prompt");
    int slot_count = 0;
    for (int t : answer)
        if (t == TOK_LVR_SLOT) ++slot_count;
    if (slot_count != 1)
        throw std::invalid_argument("stage1: answer must contain exactly one <lvr> placeholder");

    const int n_visual = vis.rows;
    const int tv = idx.count();
    out.seq.consts = Mat(n_visual + tv, m.cfg.embed_dim);
    for (int n = 0; n < n_visual; ++n)
        std::copy(vis.row(n), vis.row(n) + vis.cols, out.seq.consts.row(n));
    // teacher-forced latent inputs: the projected ground-truth ROI tokens
    for (int k = 0; k < tv; ++k)
        project_one(m.frozen, out.grid.tokens.row(out.phi.patch_for_step(k + 1)),
                    out.seq.consts.row(n_visual + k));

    auto& elems = out.seq.elems;
    for (int n = 0; n < n_visual; ++n)
        elems.push_back({InputElem::Kind::constant, -1, n, -1});
    for (int t : prompt) elems.push_back({InputElem::Kind::token, t, -1, -1});
    for (int t : answer) {
        if (t == TOK_LVR_SLOT) {
            elems.push_back({InputElem::Kind::token, TOK_LVR_START, -1, -1});
            for (int k = 0; k < tv; ++k) {
                out.latent_positions.push_back(int(elems.size()));
                elems.push_back({InputElem::Kind::constant, -1, n_visual + k, -1});
            }
            elems.push_back({InputElem::Kind::token, TOK_LVR_END, -1, -1});
        } else {
            elems.push_back({InputElem::Kind::token, t, -1, -1});
        }
    }

    // next-token targets over the supervised region; the terminal target is
    // <eot>, latent steps have no discrete target
    const int S = int(elems.size());
    const int first_supervised = supervise_prompt ? n_visual - 1 : n_visual + int(prompt.size()) - 1;
    out.ntp_targets.assign(size_t(S), -1);
    for (int p = first_supervised; p < S; ++p) {
        if (p + 1 < S) {
            if (elems[size_t(p) + 1].kind == InputElem::Kind::token)
                out.ntp_targets[size_t(p)] = elems[size_t(p) + 1].token;
        } else {
            out.ntp_targets[size_t(p)] = TOK_EOT;
        }
    }
    return out;
}

struct SftLosses {
    double ntp = 0.0;
    double lvr = 0.0;
    double sft = 0.0;
};

// Forward one prepared example; optionally accumulate gradients of
// (ntp + lambda*lvr) * scale into grads.
inline SftLosses sft_example_pass(const Model& m, const Stage1Sequence& s, const SftConfig& cfg,
                                  DecoderParams* grads, double scale = 1.0) {
    ForwardCache fc = forward_teacher_forced(m, s.seq);
    std::vector<const double*> hiddens;
    hiddens.reserve(s.latent_positions.size());
    for (int p : s.latent_positions) hiddens.push_back(fc.hidden(p));

    SftLosses out;
    out.ntp = loss_ntp(fc.logits, s.ntp_targets);
    out.lvr = loss_lvr(m, hiddens, s.grid, s.phi);
    out.sft = loss_sft(out.ntp, out.lvr, cfg);

    if (grads) {
        Mat dlogits(fc.len, m.cfg.vocab_size);
        grad_ntp(fc.logits, s.ntp_targets, scale, dlogits);
        Mat dhidden(fc.len, m.cfg.embed_dim);
        grad_lvr(m, hiddens, s.latent_positions, s.grid, s.phi, scale * cfg.lambda_lvr, dhidden,
                 *grads);
        backward(m, s.seq, fc, dlogits, &dhidden, *grads);
    }
    return out;
}

struct SftTraceRow {
    long step = 0;
    double ntp = 0.0;
    double lvr = 0.0;
    double sft = 0.0;
    double lr = 0.0;
};

inline void write_sft_trace(const std::vector<SftTraceRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_sft_trace: cannot open " + path);
    out << "step,L_NTP,L_LVR,L_SFT,learning_rate\n";
    for (const auto& r : rows)
        out << r.step << ',' << r.ntp << ',' << r.lvr << ',' << r.sft << ',' << r.lr << '\n';
}

// Stage I: joint next-token prediction and latent reconstruction with teacher
// forcing. Optimizes decoder + latent head + embeddings; the encoder and
// projector stay frozen by construction.
inline std::vector<SftTraceRow> train_stage1(Model& m, const std::vector<TrainingExample>& corpus,
                                             const SftConfig& cfg, AdamW* opt_in = nullptr) {
    cfg.validate();
    if (corpus.empty()) throw std::invalid_argument("train_stage1: empty corpus");

    std::vector<Stage1Sequence> prepared;
    prepared.reserve(corpus.size());
    for (const auto& ex : corpus) prepared.push_back(build_stage1_sequence(m, ex, cfg.supervise_prompt));

    AdamW local;
    AdamW& opt = opt_in ? *opt_in : local;
    DecoderParams grads = make_grads(m.dec);
    std::vector<SftTraceRow> trace;
    Rng rng(cfg.seed);
    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t at = 0; at < order.size(); at += size_t(cfg.batch_size)) {
            const size_t take = std::min(size_t(cfg.batch_size), order.size() - at);
            zero_grads(grads);
            double ntp = 0.0, lvr = 0.0;
            for (size_t b = 0; b < take; ++b) {
                const auto& s = prepared[order[at + b]];
                SftLosses l = sft_example_pass(m, s, cfg, &grads, 1.0 / double(take));
                ntp += l.ntp;
                lvr += l.lvr;
            }
            ntp /= double(take);
            lvr /= double(take);
            const double sft = loss_sft(ntp, lvr, cfg);
            if (!std::isfinite(sft))
                throw std::runtime_error("train_stage1: non-finite loss at step " +
                                         std::to_string(m.train_steps + 1));
            opt.step(m.dec, grads, cfg.learning_rate, cfg.weight_decay);
            ++m.train_steps;
            trace.push_back({m.train_steps, ntp, lvr, sft, cfg.learning_rate});
        }
    }
    return trace;
}

} // namespace latiq
