#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "latiq/adamw.hpp"
#include "latiq/model.hpp"

namespace latiq {

// Versioned binary container: config header, then named double tensors.
// Saving, loading, and saving again reproduces the parameter payload
// byte for byte.
namespace ckpt {

constexpr char kMagic[8] = {'L', 'A', 'T', 'I', 'Q', 'C', 'P', '1'};
constexpr uint32_t kVersion = 1;

inline void put_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_i64(std::ostream& out, int64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

inline uint32_t get_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
inline int64_t get_i64(std::istream& in) {
    int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
inline uint64_t get_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

inline void put_tensor(std::ostream& out, const std::string& name, const Vec& v) {
    put_u32(out, uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    put_u64(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(double)));
}

} // namespace ckpt

inline void save_checkpoint(const Model& m, const std::string& path, const AdamW* opt = nullptr) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(ckpt::kMagic, 8);
    ckpt::put_u32(out, ckpt::kVersion);
    ckpt::put_i64(out, m.cfg.vocab_size);
    ckpt::put_i64(out, m.cfg.embed_dim);
    ckpt::put_i64(out, m.cfg.num_layers);
    ckpt::put_i64(out, m.cfg.num_heads);
    ckpt::put_i64(out, m.cfg.patch_size);
    ckpt::put_i64(out, m.cfg.image_size);
    ckpt::put_i64(out, m.cfg.visual_dim);
    ckpt::put_i64(out, m.cfg.max_seq_len);
    ckpt::put_i64(out, m.cfg.latent_budget);
    ckpt::put_u64(out, m.cfg.seed);
    ckpt::put_i64(out, m.train_steps);

    std::vector<std::pair<std::string, const Vec*>> tensors;
    for_each_tensor(const_cast<DecoderParams&>(m.dec),
                    [&](const std::string& n, Vec& v) { tensors.emplace_back(n, &v); });
    tensors.emplace_back("frozen.enc_w", &m.frozen.enc_w.a);
    tensors.emplace_back("frozen.enc_b", &m.frozen.enc_b);
    tensors.emplace_back("frozen.proj_w", &m.frozen.proj_w.a);
    tensors.emplace_back("frozen.proj_b", &m.frozen.proj_b);
    if (opt && opt->ready) {
        for_each_tensor(const_cast<DecoderParams&>(opt->m_),
                        [&](const std::string& n, Vec& v) { tensors.emplace_back("opt.m." + n, &v); });
        for_each_tensor(const_cast<DecoderParams&>(opt->v_),
                        [&](const std::string& n, Vec& v) { tensors.emplace_back("opt.v." + n, &v); });
    }
    ckpt::put_u32(out, uint32_t(tensors.size()));
    for (auto& [name, vec] : tensors) ckpt::put_tensor(out, name, *vec);
    ckpt::put_i64(out, opt ? opt->t : 0);
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Model load_checkpoint(const std::string& path, AdamW* opt = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, ckpt::kMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    const uint32_t version = ckpt::get_u32(in);
    if (version != ckpt::kVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
    ModelConfig cfg;
    cfg.vocab_size = int(ckpt::get_i64(in));
    cfg.embed_dim = int(ckpt::get_i64(in));
    cfg.num_layers = int(ckpt::get_i64(in));
    cfg.num_heads = int(ckpt::get_i64(in));
    cfg.patch_size = int(ckpt::get_i64(in));
    cfg.image_size = int(ckpt::get_i64(in));
    cfg.visual_dim = int(ckpt::get_i64(in));
    cfg.max_seq_len = int(ckpt::get_i64(in));
    cfg.latent_budget = int(ckpt::get_i64(in));
    cfg.seed = ckpt::get_u64(in);
    Model m = init_model(cfg);
    m.train_steps = ckpt::get_i64(in);

    std::map<std::string, Vec*> slots;
    for_each_tensor(m.dec, [&](const std::string& n, Vec& v) { slots[n] = &v; });
    slots["frozen.enc_w"] = &m.frozen.enc_w.a;
    slots["frozen.enc_b"] = &m.frozen.enc_b;
    slots["frozen.proj_w"] = &m.frozen.proj_w.a;
    slots["frozen.proj_b"] = &m.frozen.proj_b;
    if (opt) {
        opt->init(m.dec);
        for_each_tensor(opt->m_, [&](const std::string& n, Vec& v) { slots["opt.m." + n] = &v; });
        for_each_tensor(opt->v_, [&](const std::string& n, Vec& v) { slots["opt.v." + n] = &v; });
    }

    const uint32_t count = ckpt::get_u32(in);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = ckpt::get_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint64_t n = ckpt::get_u64(in);
        auto it = slots.find(name);
        if (it == slots.end()) {
            in.seekg(std::streamoff(n * sizeof(double)), std::ios::cur); // unknown section (e.g. optimizer state not requested)
            continue;
        }
        if (it->second->size() != n)
            throw std::runtime_error("load_checkpoint: size mismatch for tensor " + name);
        in.read(reinterpret_cast<char*>(it->second->data()), std::streamsize(n * sizeof(double)));
    }
    const int64_t opt_t = ckpt::get_i64(in);
    if (opt) opt->t = opt_t;
    if (!in) throw std::runtime_error("load_checkpoint: truncated file " + path);
    return m;
}

} // namespace latiq
