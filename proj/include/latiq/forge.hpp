#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latiq/config.hpp"
#include "latiq/distort.hpp"
#include "latiq/image.hpp"
#include "latiq/metrics.hpp"
#include "latiq/response.hpp"
#include "latiq/roi.hpp"
#include "latiq/tokenizer.hpp"

namespace latiq {

enum class TaskClass { general_vision, distortion_awareness, quality_awareness };

inline const char* task_name(TaskClass t) {
    switch (t) {
        case TaskClass::general_vision: return "general_vision";
        case TaskClass::distortion_awareness: return "distortion_awareness";
        case TaskClass::quality_awareness: return "quality_awareness";
    }
    return "general_vision";
}

inline TaskClass task_from_name(const std::string& s) {
    if (s == "general_vision") return TaskClass::general_vision;
    if (s == "distortion_awareness") return TaskClass::distortion_awareness;
    if (s == "quality_awareness") return TaskClass::quality_awareness;
    throw std::runtime_error("unknown task class: " + s);
}

// Stage I supervised item. The answer text carries exactly one "<lvr>"
// placeholder that expands into the latent segment at training time.
struct TrainingExample {
    Image image;
    std::string prompt_text;
    std::string answer_text;
    RoiSpec roi;
    TaskClass task = TaskClass::general_vision;

    std::vector<int> prompt_ids(const Tokenizer& tok = default_tokenizer()) const {
        return tok.encode(prompt_text);
    }
    std::vector<int> answer_ids(const Tokenizer& tok = default_tokenizer()) const {
        return tok.encode(answer_text);
    }
};

// Stage II item: prompt, image, ground-truth score.
struct QualityRecord {
    Image image;
    std::string prompt_text;
    double mos = 0.0;        // normalized, in [1,5]
    double mos_native = 0.0; // as stored
    std::string source = "synthetic";

    std::vector<int> prompt_ids(const Tokenizer& tok = default_tokenizer()) const {
        return tok.encode(prompt_text);
    }
};

// Snap to the 8-bit grid the on-disk format uses, so persisted corpora
// round-trip exactly and training is storage-invariant.
inline void quantize_8bit(Image& img) {
    for (double& v : img.px) v = std::lround(clamp01(v) * 255.0) / 255.0;
}

// ---------------------------------------------------------------------------
// Prompt pools
// ---------------------------------------------------------------------------

namespace prompts {

inline const std::vector<std::string>& quality() {
    static const std::vector<std::string> p = {
        "rate the overall quality of this image",
        "how good does this image look",
        "assess the visual quality and give a score",
        "what quality score would you give this picture",
        "score the image quality from one to five",
        "evaluate the perceptual quality of the photo",
    };
    return p;
}

inline const std::vector<std::string>& distortion() {
    static const std::vector<std::string> p = {
        "what distortion is present in this image",
        "identify the distortion type and its severity",
        "which degradation affects this picture and how strong is it",
        "describe the corruption in the image",
        "name the distortion and rate its severity",
    };
    return p;
}

inline const std::vector<std::string>& general_what() {
    static const std::vector<std::string> p = {
        "what shape is shown in the image",
        "which object appears in this picture",
        "name the shape in the image",
    };
    return p;
}

// "{}" is replaced by the queried shape word.
inline const std::vector<std::string>& general_find() {
    static const std::vector<std::string> p = {
        "find the {} in the image",
        "point out the {} in this picture",
    };
    return p;
}

inline std::string fill(const std::string& tmpl, const std::string& word) {
    std::string out = tmpl;
    auto pos = out.find("{}");
    if (pos != std::string::npos) out.replace(pos, 2, word);
    return out;
}

} // namespace prompts

// ---------------------------------------------------------------------------
// Shapes for the general-vision task
// ---------------------------------------------------------------------------

enum class ShapeKind { circle, square, triangle, cross };

inline const char* shape_word(ShapeKind s) {
    switch (s) {
        case ShapeKind::circle: return "circle";
        case ShapeKind::square: return "square";
        case ShapeKind::triangle: return "triangle";
        case ShapeKind::cross: return "cross";
    }
    return "circle";
}

inline void draw_shape(Image& img, ShapeKind kind, const RoiSpec& box, const double color[3]) {
    const double cx = 0.5 * (box.x0 + box.x1 - 1);
    const double cy = 0.5 * (box.y0 + box.y1 - 1);
    const double rx = 0.5 * box.width();
    const double ry = 0.5 * box.height();
    for (int y = box.y0; y < box.y1; ++y)
        for (int x = box.x0; x < box.x1; ++x) {
            bool inside = false;
            switch (kind) {
                case ShapeKind::circle: {
                    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                    inside = dx * dx + dy * dy <= 1.0;
                    break;
                }
                case ShapeKind::square:
                    inside = true;
                    break;
                case ShapeKind::triangle: {
                    const double t = (y - box.y0 + 0.5) / box.height(); // 0 at apex row
                    const double half = 0.5 * t * box.width();
                    inside = std::abs(x - cx) <= half;
                    break;
                }
                case ShapeKind::cross: {
                    const double bar = std::max(1.0, box.width() / 3.0);
                    inside = std::abs(x - cx) <= bar / 2.0 || std::abs(y - cy) <= bar / 2.0;
                    break;
                }
            }
            if (inside)
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
        }
}

// ---------------------------------------------------------------------------
// Example makers (pure functions of their seed)
// ---------------------------------------------------------------------------

struct ForgeOptions {
    std::vector<int> severities = {1, 2, 3, 4, 5};
    bool allow_null = true;
    double jitter_std = 0.1;
};

namespace detail {

inline RoiSpec sample_roi(Rng& rng, const ModelConfig& cfg) {
    std::uniform_int_distribution<int> span(cfg.patch_size, 2 * cfg.patch_size);
    const int w = span(rng);
    const int h = span(rng);
    std::uniform_int_distribution<int> px(0, cfg.image_size - w);
    std::uniform_int_distribution<int> py(0, cfg.image_size - h);
    const int x0 = px(rng);
    const int y0 = py(rng);
    return RoiSpec{x0, y0, x0 + w, y0 + h};
}

inline DistKind sample_kind(Rng& rng, bool allow_null) {
    std::uniform_int_distribution<int> pick(0, allow_null ? 4 : 3);
    return static_cast<DistKind>(pick(rng));
}

inline int sample_severity(Rng& rng, const std::vector<int>& severities) {
    std::uniform_int_distribution<size_t> pick(0, severities.size() - 1);
    return severities[pick(rng)];
}

template <class T>
const T& pick_from(Rng& rng, const std::vector<T>& pool) {
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    return pool[pick(rng)];
}

} // namespace detail

inline TrainingExample make_distortion_example(uint64_t seed, const ModelConfig& cfg,
                                               const ForgeOptions& opt = {}) {
    Rng rng(derive_seed(seed, 0x01));
    TrainingExample ex;
    Image base = synth_base_image(derive_seed(seed, 0x02), cfg.image_size);
    DistortionSpec spec;
    spec.kind = detail::sample_kind(rng, opt.allow_null);
    spec.severity = detail::sample_severity(rng, opt.severities);
    spec.roi = detail::sample_roi(rng, cfg);
    spec.seed = derive_seed(seed, 0x03);
    ex.image = apply_distortion(base, spec);
    quantize_8bit(ex.image);
    ex.roi = spec.roi;
    ex.task = TaskClass::distortion_awareness;
    ex.prompt_text = detail::pick_from(rng, prompts::distortion());
    if (spec.kind == DistKind::null_kind)
        ex.answer_text = "<lvr> <answer> none </answer>";
    else
        ex.answer_text = std::string("<lvr> <answer> ") + kind_word(spec.kind) + " " +
                         severity_word(spec.severity) + " </answer>";
    return ex;
}

// Synthetic quality law: s = 5 - 0.8 * severity (null -> 5), plus zero-mean
// jitter, clamped to [1,5]. The Stage I answer renders s at one decimal; the
// Stage II record carries s itself.
inline std::pair<TrainingExample, QualityRecord> make_quality_example(uint64_t seed,
                                                                      const ModelConfig& cfg,
                                                                      const ForgeOptions& opt = {}) {
    Rng rng(derive_seed(seed, 0x11));
    Image base = synth_base_image(derive_seed(seed, 0x12), cfg.image_size);
    DistortionSpec spec;
    spec.kind = detail::sample_kind(rng, opt.allow_null);
    spec.severity = detail::sample_severity(rng, opt.severities);
    spec.roi = detail::sample_roi(rng, cfg);
    spec.seed = derive_seed(seed, 0x13);
    Image img = apply_distortion(base, spec);
    quantize_8bit(img);

    double s = spec.kind == DistKind::null_kind ? 5.0 : 5.0 - 0.8 * spec.severity;
    std::normal_distribution<double> jitter(0.0, opt.jitter_std);
    s += jitter(rng);
    s = std::min(5.0, std::max(1.0, s));

    const std::string prompt = detail::pick_from(rng, prompts::quality());
    TrainingExample ex;
    ex.image = img;
    ex.prompt_text = prompt;
    ex.answer_text = "<lvr> <answer> " + render_score(s) + " </answer>";
    ex.roi = spec.roi;
    ex.task = TaskClass::quality_awareness;

    QualityRecord rec;
    rec.image = img;
    rec.prompt_text = prompt;
    rec.mos = s;
    rec.mos_native = s;
    rec.source = "synthetic";
    return {ex, rec};
}

inline TrainingExample make_general_vision_example(uint64_t seed, const ModelConfig& cfg,
                                                   const ForgeOptions& = {}) {
    Rng rng(derive_seed(seed, 0x21));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img = synth_base_image(derive_seed(seed, 0x22), cfg.image_size);

    auto sample_box = [&](int x_lo, int x_hi) {
        std::uniform_int_distribution<int> span(10, std::min(16, x_hi - x_lo));
        const int w = span(rng);
        const int h = span(rng);
        std::uniform_int_distribution<int> px(x_lo, x_hi - w);
        std::uniform_int_distribution<int> py(0, cfg.image_size - h);
        const int x0 = px(rng);
        const int y0 = py(rng);
        return RoiSpec{x0, y0, x0 + w, y0 + h};
    };
    auto sample_color = [&](double out[3]) {
        for (int c = 0; c < 3; ++c) out[c] = u(rng) < 0.5 ? 0.05 + 0.15 * u(rng) : 0.8 + 0.15 * u(rng);
    };

    std::uniform_int_distribution<int> shape_pick(0, 3);
    TrainingExample ex;
    ex.task = TaskClass::general_vision;

    const bool two_shapes = u(rng) < 0.5;
    if (!two_shapes) {
        const auto shape = static_cast<ShapeKind>(shape_pick(rng));
        const RoiSpec box = sample_box(0, cfg.image_size);
        double color[3];
        sample_color(color);
        draw_shape(img, shape, box, color);
        ex.roi = box;
        ex.prompt_text = detail::pick_from(rng, prompts::general_what());
        ex.answer_text = std::string("<lvr> <answer> ") + shape_word(shape) + " </answer>";
    } else {
        // two distinct shapes in disjoint halves; the prompt names one of them
        const int a = shape_pick(rng);
        int b = shape_pick(rng);
        while (b == a) b = shape_pick(rng);
        const RoiSpec box_a = sample_box(0, cfg.image_size / 2);
        const RoiSpec box_b = sample_box(cfg.image_size / 2, cfg.image_size);
        double ca[3], cb[3];
        sample_color(ca);
        sample_color(cb);
        draw_shape(img, static_cast<ShapeKind>(a), box_a, ca);
        draw_shape(img, static_cast<ShapeKind>(b), box_b, cb);
        const bool query_a = u(rng) < 0.5;
        const auto queried = static_cast<ShapeKind>(query_a ? a : b);
        ex.roi = query_a ? box_a : box_b;
        ex.prompt_text = prompts::fill(detail::pick_from(rng, prompts::general_find()), shape_word(queried));
        ex.answer_text = std::string("<lvr> <answer> ") + shape_word(queried) + " </answer>";
    }
    ex.image = img;
    quantize_8bit(ex.image);
    return ex;
}

// ---------------------------------------------------------------------------
// Corpus assembly
// ---------------------------------------------------------------------------

struct MixWeights {
    double distortion = 0.4;
    double quality = 0.4;
    double general = 0.2;
};

inline std::vector<TrainingExample> build_stage1(int n, uint64_t seed, const ModelConfig& cfg,
                                                 const MixWeights& mix = {},
                                                 const ForgeOptions& opt = {}) {
    const double wsum = mix.distortion + mix.quality + mix.general;
    if (wsum <= 0.0) throw std::invalid_argument("build_stage1: mixture weights sum to zero");
    int nd = int(std::lround(n * mix.distortion / wsum));
    int nq = int(std::lround(n * mix.quality / wsum));
    int ng = n - nd - nq;
    if (ng < 0) { nq += ng; ng = 0; }
    std::vector<TaskClass> plan;
    plan.insert(plan.end(), size_t(nd), TaskClass::distortion_awareness);
    plan.insert(plan.end(), size_t(nq), TaskClass::quality_awareness);
    plan.insert(plan.end(), size_t(ng), TaskClass::general_vision);
    Rng rng(derive_seed(seed, 0x31));
    std::shuffle(plan.begin(), plan.end(), rng);

    std::vector<TrainingExample> out;
    out.reserve(size_t(n));
    for (int i = 0; i < n; ++i) {
        const uint64_t s = derive_seed(seed, 0x1000 + uint64_t(i));
        switch (plan[size_t(i)]) {
            case TaskClass::distortion_awareness: out.push_back(make_distortion_example(s, cfg, opt)); break;
            case TaskClass::quality_awareness: out.push_back(make_quality_example(s, cfg, opt).first); break;
            case TaskClass::general_vision: out.push_back(make_general_vision_example(s, cfg, opt)); break;
        }
    }
    return out;
}

inline std::vector<QualityRecord> build_stage2(int n, uint64_t seed, const ModelConfig& cfg,
                                               const ForgeOptions& opt = {}) {
    std::vector<QualityRecord> out;
    out.reserve(size_t(n));
    for (int i = 0; i < n; ++i)
        out.push_back(make_quality_example(derive_seed(seed, 0x2000 + uint64_t(i)), cfg, opt).second);
    return out;
}

// ---------------------------------------------------------------------------
// JSONL persistence
// ---------------------------------------------------------------------------

enum class ImageStorage { path, b64 };

namespace detail {

inline std::string store_image(const Image& img, ImageStorage storage,
                               const std::filesystem::path& jsonl_path, const std::string& stem,
                               int index) {
    if (storage == ImageStorage::b64) return "b64:" + base64_encode(encode_ppm(img));
    const std::filesystem::path dir = jsonl_path.parent_path() / "images";
    std::filesystem::create_directories(dir);
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%06d.ppm", stem.c_str(), index);
    write_ppm(img, (dir / name).string());
    return std::string("images/") + name;
}

inline Image fetch_image(const std::string& field, const std::filesystem::path& jsonl_path) {
    if (field.rfind("b64:", 0) == 0) return decode_ppm(base64_decode(field.substr(4)));
    return read_ppm((jsonl_path.parent_path() / field).string());
}

} // namespace detail

inline void write_stage1_jsonl(const std::vector<TrainingExample>& examples, const std::string& path,
                               ImageStorage storage = ImageStorage::path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_stage1_jsonl: cannot open " + path);
    const std::filesystem::path p(path);
    const std::string stem = p.stem().string();
    int idx = 0;
    for (const auto& ex : examples) {
        nlohmann::json j;
        j["image"] = detail::store_image(ex.image, storage, p, stem, idx++);
        j["prompt"] = ex.prompt_text;
        j["answer"] = ex.answer_text;
        j["bbox"] = {ex.roi.x0, ex.roi.y0, ex.roi.x1, ex.roi.y1};
        j["task"] = task_name(ex.task);
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write_stage1_jsonl: write failed for " + path);
}

inline std::vector<TrainingExample> read_stage1_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_stage1_jsonl: cannot open " + path);
    std::vector<TrainingExample> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            TrainingExample ex;
            ex.image = detail::fetch_image(j.at("image").get<std::string>(), path);
            ex.prompt_text = j.at("prompt").get<std::string>();
            ex.answer_text = j.at("answer").get<std::string>();
            auto bbox = j.at("bbox");
            ex.roi = RoiSpec{bbox.at(0).get<int>(), bbox.at(1).get<int>(), bbox.at(2).get<int>(),
                             bbox.at(3).get<int>()};
            ex.task = task_from_name(j.at("task").get<std::string>());
            out.push_back(std::move(ex));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ": malformed record at line " + std::to_string(lineno) +
                                     ": " + e.what());
        }
    }
    return out;
}

inline void write_stage2_jsonl(const std::vector<QualityRecord>& records, const std::string& path,
                               ImageStorage storage = ImageStorage::path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_stage2_jsonl: cannot open " + path);
    const std::filesystem::path p(path);
    const std::string stem = p.stem().string();
    int idx = 0;
    for (const auto& rec : records) {
        nlohmann::json j;
        j["image"] = detail::store_image(rec.image, storage, p, stem, idx++);
        j["prompt"] = rec.prompt_text;
        j["score"] = rec.mos_native;
        j["native_range"] = {1.0, 5.0};
        j["polarity"] = "mos";
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write_stage2_jsonl: write failed for " + path);
}

inline std::vector<QualityRecord> read_stage2_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_stage2_jsonl: cannot open " + path);
    std::vector<QualityRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            QualityRecord rec;
            rec.image = detail::fetch_image(j.at("image").get<std::string>(), path);
            rec.prompt_text = j.at("prompt").get<std::string>();
            rec.mos_native = j.at("score").get<double>();
            auto range = j.at("native_range");
            const double lo = range.at(0).get<double>();
            const double hi = range.at(1).get<double>();
            rec.mos = normalize_mos_one(rec.mos_native, lo, hi, j.at("polarity").get<std::string>());
            rec.source = path;
            out.push_back(std::move(rec));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ": malformed record at line " + std::to_string(lineno) +
                                     ": " + e.what());
        }
    }
    return out;
}

} // namespace latiq
