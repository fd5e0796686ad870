#pragma once

#include <cctype>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace latiq {

// Special token ids are fixed by construction: the vocabulary always lays
// them out first, so the decoder can key on them without a tokenizer handle.
constexpr int TOK_UNK = 0;
constexpr int TOK_EOT = 1;
constexpr int TOK_LVR_START = 2;
constexpr int TOK_LVR_END = 3;
constexpr int TOK_LVR_SLOT = 4;
constexpr int TOK_ANS_OPEN = 5;
constexpr int TOK_ANS_CLOSE = 6;

// Word-level tokenizer over a fixed built-in vocabulary: prompt-template
// words, digits and the decimal point, distortion/severity/shape words, and
// the special markers. Numerals split into digit and point tokens.
class Tokenizer {
  public:
    Tokenizer() {
        const char* specials[] = {"<unk>", "<eot>", "<lvr_start>", "<lvr_end>",
                                  "<lvr>", "<answer>", "</answer>"};
        for (const char* s : specials) add(s);
        for (char d = '0'; d <= '9'; ++d) add(std::string(1, d));
        add(".");
        const char* words[] = {
            // prompt-template vocabulary
            "rate", "the", "overall", "quality", "of", "this", "image", "how", "good",
            "does", "look", "assess", "visual", "and", "give", "a", "score", "what",
            "would", "you", "picture", "from", "one", "to", "five", "evaluate",
            "perceptual", "photo", "distortion", "is", "present", "in", "identify",
            "type", "its", "severity", "which", "degradation", "affects", "strong",
            "it", "describe", "corruption", "name", "shape", "shown", "object",
            "appears", "find", "point", "out",
            // distortion kinds
            "noise", "compression", "blur", "photometric", "none",
            // severity words
            "slight", "moderate", "obvious", "serious", "catastrophic",
            // shapes
            "circle", "square", "triangle", "cross"};
        for (const char* w : words) add(w);
    }

    int vocab_size() const { return int(words_.size()); }

    int id_of(const std::string& word) const {
        auto it = ids_.find(word);
        return it == ids_.end() ? TOK_UNK : it->second;
    }

    const std::string& text_of(int id) const { return words_[size_t(id)]; }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> out;
        std::istringstream in(text);
        std::string word;
        while (in >> word) {
            auto it = ids_.find(word);
            if (it != ids_.end()) {
                out.push_back(it->second);
            } else if (is_numeral(word)) {
                for (char c : word) out.push_back(ids_.at(std::string(1, c)));
            } else {
                out.push_back(TOK_UNK);
            }
        }
        return out;
    }

    std::string decode(std::span<const int> ids) const {
        std::string out;
        bool prev_glyph = false; // previous token was a digit or the point
        for (int id : ids) {
            const std::string& t = words_[size_t(id)];
            bool glyph = t.size() == 1 && (std::isdigit(uint8_t(t[0])) || t[0] == '.');
            if (!out.empty() && !(glyph && prev_glyph)) out += ' ';
            out += t;
            prev_glyph = glyph;
        }
        return out;
    }

  private:
    static bool is_numeral(const std::string& w) {
        if (w.empty()) return false;
        for (char c : w)
            if (!std::isdigit(uint8_t(c)) && c != '.') return false;
        return true;
    }

    void add(const std::string& w) {
        ids_.emplace(w, int(words_.size()));
        words_.push_back(w);
    }

    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
};

inline const Tokenizer& default_tokenizer() {
    static const Tokenizer tok;
    return tok;
}

} // namespace latiq
