#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "latiq/forge.hpp"
#include "latiq/metrics.hpp"
#include "latiq/model.hpp"

namespace latiq {

struct AttentionShares {
    double image = 1.0;
    double reasoning = 0.0;
};

// At the positions emitting the score numeral, the attention mass over visual
// tokens vs latent-segment positions, renormalized to sum to 1.
inline AttentionShares attention_mass(const Response& r) {
    if (!r.has_attention)
        throw std::invalid_argument("attention_mass: response decoded without attention recording");
    if (r.segment_start < 0 || r.latent_steps() == 0) return {1.0, 0.0};

    int open = -1, close = -1;
    for (size_t i = 0; i < r.token_ids.size(); ++i) {
        if (r.token_ids[i] == TOK_ANS_OPEN && open < 0) open = int(i);
        else if (r.token_ids[i] == TOK_ANS_CLOSE && open >= 0) { close = int(i); break; }
    }
    if (open < 0 || close <= open + 1)
        throw std::invalid_argument("attention_mass: response has no score span");

    const int base = r.n_visual + r.prompt_len;
    auto elem_of_token = [&](int k) {
        return base + k + (k > r.segment_start ? r.latent_steps() : 0);
    };
    const int lat_first = base + r.segment_start + 1;
    const int lat_last = lat_first + r.latent_steps() - 1;

    double img_mass = 0.0, lat_mass = 0.0;
    int rows = 0;
    for (int k = open + 1; k < close; ++k) {
        const int row = elem_of_token(k) - 1; // the query computing this token
        if (row < 0 || row >= r.attn_avg.rows) continue;
        for (int j = 0; j < r.n_visual; ++j) img_mass += r.attn_avg.at(row, j);
        for (int j = lat_first; j <= lat_last && j <= row; ++j) lat_mass += r.attn_avg.at(row, j);
        ++rows;
    }
    if (rows == 0 || img_mass + lat_mass <= 0.0) return {1.0, 0.0};
    const double total = img_mass + lat_mass;
    return {img_mass / total, lat_mass / total};
}

struct EvalItem {
    int id = 0;
    double s_hat = 0.0;
    double s = 0.0;
    double image_share = 0.0;
    double reasoning_share = 0.0;
};

struct EvalReport {
    double plcc = 0.0;
    double srcc = 0.0;
    int n = 0;
    int n_unparsable = 0;
    double mean_visible_tokens = 0.0;
    double mean_latent_steps = 0.0;
    std::vector<EvalItem> per_item;
    bool has_shares = false;
};

// Greedy-decodes every record, parses scores (unparsable responses are
// excluded and counted), and computes the correlation metrics.
inline EvalReport evaluate(const Model& m, const std::vector<QualityRecord>& records,
                           bool probe_attention = false) {
    if (records.size() < 2) throw std::invalid_argument("evaluate: need at least 2 records");
    EvalReport rep;
    rep.has_shares = probe_attention;
    std::vector<double> preds, truths;
    double vis_sum = 0.0, lat_sum = 0.0;
    int id = 0;
    for (const auto& rec : records) {
        DecodeConfig dc;
        dc.greedy = true;
        dc.record_attention = probe_attention;
        Response r = generate(m, rec.image, rec.prompt_ids(), dc);
        vis_sum += count_visible_tokens(r);
        lat_sum += r.latent_steps();
        if (r.parsed_score) {
            EvalItem item;
            item.id = id;
            item.s_hat = *r.parsed_score;
            item.s = rec.mos;
            if (probe_attention) {
                AttentionShares sh = attention_mass(r);
                item.image_share = sh.image;
                item.reasoning_share = sh.reasoning;
            }
            rep.per_item.push_back(item);
            preds.push_back(item.s_hat);
            truths.push_back(item.s);
        } else {
            ++rep.n_unparsable;
        }
        ++id;
    }
    if (preds.size() < 2) throw std::runtime_error("evaluate: fewer than 2 parsable scores");
    rep.n = int(preds.size());
    rep.plcc = plcc(preds, truths);
    rep.srcc = srcc(preds, truths);
    rep.mean_visible_tokens = vis_sum / double(records.size());
    rep.mean_latent_steps = lat_sum / double(records.size());
    return rep;
}

inline void write_eval_csv(const EvalReport& rep, const std::string& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_eval_csv: cannot open " + path);
    if (rep.has_shares)
        out << "item,id,s_hat,s,image_share,reasoning_share\n";
    else
        out << "item,id,s_hat,s\n";
    for (const auto& it : rep.per_item) {
        out << "item," << it.id << ',' << it.s_hat << ',' << it.s;
        if (rep.has_shares) out << ',' << it.image_share << ',' << it.reasoning_share;
        out << '\n';
    }
    out << "summary," << dataset << ',' << rep.n << ',' << rep.plcc << ',' << rep.srcc << ','
        << rep.mean_visible_tokens << ',' << rep.mean_latent_steps << '\n';
}

} // namespace latiq
