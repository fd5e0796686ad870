#pragma once

#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "latiq/tensor.hpp"
#include "latiq/tokenizer.hpp"

namespace latiq {

// One decoded output: visible tokens, the realized latent trace, and parse
// results. token_ids never contains the slot placeholder.
struct Response {
    std::vector<int> token_ids;
    Mat latent_trace;                  // T' x embed_dim, T' <= budget
    int segment_start = -1;            // index of <lvr_start> in token_ids
    int segment_end = -1;              // index of <lvr_end> in token_ids
    bool lvr_end_forced = false;       // budget exhausted; closing tag appended
    bool truncated = false;            // hit max_seq_len before <eot>
    std::optional<double> parsed_score;
    std::vector<double> per_token_logprobs; // aligned with policy_elems
    // Element indices (in the full decoded element sequence, latent steps
    // included) of each policy-sampled discrete token. A force-appended
    // <lvr_end> is not a decoding step and carries no log-probability.
    std::vector<int> policy_elems;
    std::vector<int> policy_tokens;
    // Element layout of the decode, needed to rebuild the conditioning
    // context for replay and for the attention probe. n_elems counts decoder
    // positions actually processed; a trailing sampled token that hit the
    // length cap is recorded in token_ids but occupies no position.
    int n_visual = 0;
    int prompt_len = 0;
    int n_elems = 0;
    bool has_attention = false;
    Mat attn_avg; // element x context attention, averaged over layers/heads

    int latent_steps() const { return latent_trace.rows; }
};

inline std::string render_score(double s) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", s);
    return buf;
}

// The numeral strictly between the first <answer>...</answer> pair. The whole
// span must concatenate to one parsable decimal; no clamping is applied.
inline std::optional<double> parse_answer(const std::vector<int>& token_ids,
                                          const Tokenizer& tok = default_tokenizer()) {
    size_t open = token_ids.size();
    for (size_t i = 0; i < token_ids.size(); ++i)
        if (token_ids[i] == TOK_ANS_OPEN) { open = i; break; }
    if (open == token_ids.size()) return std::nullopt;
    size_t close = token_ids.size();
    for (size_t i = open + 1; i < token_ids.size(); ++i)
        if (token_ids[i] == TOK_ANS_CLOSE) { close = i; break; }
    if (close == token_ids.size() || close == open + 1) return std::nullopt;
    std::string text;
    for (size_t i = open + 1; i < close; ++i) text += tok.text_of(token_ids[i]);
    char* end = nullptr;
    double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size() || text.empty()) return std::nullopt;
    return v;
}

enum class FormatCheck { valid, invalid };

// Valid iff exactly one latent span, a numeric answer-tag pair, the span
// preceding the tags, and the decode was not truncated.
inline FormatCheck validate_format(const Response& r) {
    if (r.truncated) return FormatCheck::invalid;
    int starts = 0, ends = 0;
    int first_start = -1, first_end = -1;
    for (size_t i = 0; i < r.token_ids.size(); ++i) {
        if (r.token_ids[i] == TOK_LVR_START) {
            ++starts;
            if (first_start < 0) first_start = int(i);
        } else if (r.token_ids[i] == TOK_LVR_END) {
            ++ends;
            if (first_end < 0) first_end = int(i);
        }
    }
    if (starts != 1 || ends != 1 || first_end < first_start) return FormatCheck::invalid;
    auto score = parse_answer(r.token_ids);
    if (!score) return FormatCheck::invalid;
    int ans_open = -1;
    for (size_t i = 0; i < r.token_ids.size(); ++i)
        if (r.token_ids[i] == TOK_ANS_OPEN) { ans_open = int(i); break; }
    if (ans_open < first_end) return FormatCheck::invalid;
    return FormatCheck::valid;
}

// Discrete generated tokens, markers and tags included, latent steps excluded.
inline int count_visible_tokens(const Response& r) { return int(r.token_ids.size()); }

} // namespace latiq
