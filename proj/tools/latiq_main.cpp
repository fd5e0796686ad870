// latiq - latent-reasoning image quality toolkit.
//
// Subcommands: synth-data, train-sft, train-grpo, eval, infer.
// Flag precedence: command line > --config file > built-in default.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "latiq/checkpoint.hpp"
#include "latiq/evaluate.hpp"
#include "latiq/forge.hpp"
#include "latiq/grpo.hpp"
#include "latiq/sft.hpp"

namespace {

using namespace latiq;

struct ModelFlags {
    int embed_dim = 64;
    int num_layers = 2;
    int num_heads = 4;
    int patch_size = 8;
    int image_size = 32;
    int visual_dim = 32;
    int max_seq_len = 96;
    int latent_budget = 8;
    uint64_t seed = 1234;

    ModelConfig to_config() const {
        ModelConfig cfg;
        cfg.vocab_size = default_tokenizer().vocab_size();
        cfg.embed_dim = embed_dim;
        cfg.num_layers = num_layers;
        cfg.num_heads = num_heads;
        cfg.patch_size = patch_size;
        cfg.image_size = image_size;
        cfg.visual_dim = visual_dim;
        cfg.max_seq_len = max_seq_len;
        cfg.latent_budget = latent_budget;
        cfg.seed = seed;
        return cfg;
    }
};

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
    cmd->add_option("--embed-dim", f.embed_dim, "decoder embedding dimension");
    cmd->add_option("--num-layers", f.num_layers, "decoder layers");
    cmd->add_option("--num-heads", f.num_heads, "attention heads");
    cmd->add_option("--patch-size", f.patch_size, "patch size in pixels");
    cmd->add_option("--image-size", f.image_size, "square image size in pixels");
    cmd->add_option("--visual-dim", f.visual_dim, "encoder-space token dimension");
    cmd->add_option("--max-seq-len", f.max_seq_len, "maximum decoder positions");
    cmd->add_option("--latent-budget", f.latent_budget, "latent-step budget T");
    cmd->add_option("--seed", f.seed, "model / run seed");
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

void print_effective(const std::string& cmd, const std::vector<std::pair<std::string, std::string>>& kv) {
    std::cout << "# effective config (" << cmd << ")\n";
    for (const auto& [k, v] : kv) std::cout << k << "=" << v << "\n";
}

int cmd_synth_data(const std::string& out_dir, int n1, int n2, const std::string& mix_str,
                   const std::string& storage_str, const std::string& severities_str,
                   bool no_null, const ModelFlags& mf) {
    const ModelConfig cfg = mf.to_config();
    MixWeights mix;
    {
        auto w = parse_int_list(mix_str);
        if (w.size() != 3) throw std::runtime_error("--mix expects three comma-separated weights");
        mix.distortion = w[0];
        mix.quality = w[1];
        mix.general = w[2];
    }
    ForgeOptions opt;
    opt.severities = parse_int_list(severities_str);
    opt.allow_null = !no_null;
    const ImageStorage storage = storage_str == "b64" ? ImageStorage::b64 : ImageStorage::path;

    print_effective("synth-data", {{"out", out_dir},
                                   {"n_stage1", std::to_string(n1)},
                                   {"n_stage2", std::to_string(n2)},
                                   {"mix", mix_str},
                                   {"storage", storage_str},
                                   {"severities", severities_str},
                                   {"allow_null", opt.allow_null ? "1" : "0"},
                                   {"seed", std::to_string(mf.seed)},
                                   {"image_size", std::to_string(cfg.image_size)}});

    std::filesystem::create_directories(out_dir);
    if (n1 > 0) {
        auto stage1 = build_stage1(n1, cfg.seed, cfg, mix, opt);
        write_stage1_jsonl(stage1, (std::filesystem::path(out_dir) / "stage1.jsonl").string(), storage);
        int counts[3] = {0, 0, 0};
        for (const auto& ex : stage1) ++counts[int(ex.task)];
        std::cout << "stage1: " << stage1.size() << " examples (general_vision=" << counts[0]
                  << " distortion_awareness=" << counts[1] << " quality_awareness=" << counts[2]
                  << ")\n";
    }
    if (n2 > 0) {
        auto stage2 = build_stage2(n2, derive_seed(cfg.seed, 0x52), cfg, opt);
        write_stage2_jsonl(stage2, (std::filesystem::path(out_dir) / "stage2.jsonl").string(), storage);
        double lo = 5.0, hi = 1.0;
        for (const auto& r : stage2) {
            lo = std::min(lo, r.mos);
            hi = std::max(hi, r.mos);
        }
        std::cout << "stage2: " << stage2.size() << " records (score range [" << lo << ", " << hi
                  << "])\n";
    }
    return 0;
}

int cmd_train_sft(const std::string& data, const std::string& out, const std::string& trace,
                  const std::string& resume, const ModelFlags& mf, SftConfig sft) {
    print_effective("train-sft", {{"data", data},
                                  {"out", out},
                                  {"lambda_lvr", std::to_string(sft.lambda_lvr)},
                                  {"learning_rate", std::to_string(sft.learning_rate)},
                                  {"weight_decay", std::to_string(sft.weight_decay)},
                                  {"epochs", std::to_string(sft.epochs)},
                                  {"batch_size", std::to_string(sft.batch_size)},
                                  {"supervise_prompt", sft.supervise_prompt ? "1" : "0"},
                                  {"seed", std::to_string(mf.seed)}});
    AdamW opt;
    Model model = resume.empty() ? init_model(mf.to_config()) : load_checkpoint(resume, &opt);
    auto corpus = read_stage1_jsonl(data);
    std::cout << "loaded " << corpus.size() << " stage1 examples, model params "
              << count_params(model.dec) << "\n";
    sft.seed = mf.seed;
    auto rows = train_stage1(model, corpus, sft, resume.empty() ? nullptr : &opt);
    save_checkpoint(model, out, nullptr);
    if (!trace.empty()) write_sft_trace(rows, trace);
    std::cout << "final: step=" << rows.back().step << " L_NTP=" << rows.back().ntp
              << " L_LVR=" << rows.back().lvr << " L_SFT=" << rows.back().sft << "\n";
    std::cout << "checkpoint written to " << out << "\n";
    return 0;
}

int cmd_train_grpo(const std::string& data, const std::string& init, const std::string& out,
                   const std::string& trace, GrpoConfig grpo, uint64_t seed) {
    print_effective("train-grpo",
                    {{"data", data},
                     {"init", init},
                     {"out", out},
                     {"group_size", std::to_string(grpo.group_size)},
                     {"clip_epsilon", std::to_string(grpo.clip_epsilon)},
                     {"kl_beta", std::to_string(grpo.kl_beta)},
                     {"sigma", std::to_string(grpo.sigma)},
                     {"tau", std::to_string(grpo.tau)},
                     {"latent_budget", std::to_string(grpo.latent_budget)},
                     {"learning_rate", std::to_string(grpo.learning_rate)},
                     {"epochs", std::to_string(grpo.epochs)},
                     {"groups_per_phase", std::to_string(grpo.groups_per_phase)},
                     {"temperature", std::to_string(grpo.temperature)},
                     {"learnable_stop", grpo.learnable_stop ? "1" : "0"},
                     {"advantage_std_norm", grpo.advantage_std_norm ? "1" : "0"},
                     {"kl_average_per_rollout", grpo.kl_average_per_rollout ? "1" : "0"},
                     {"seed", std::to_string(seed)}});
    Model model = load_checkpoint(init);
    auto records = read_stage2_jsonl(data);
    std::cout << "loaded " << records.size() << " stage2 records\n";
    grpo.seed = seed;
    auto rows = train_stage2(model, records, grpo);
    save_checkpoint(model, out);
    if (!trace.empty()) write_grpo_trace(rows, trace);
    const auto& last = rows.back();
    std::cout << "final: iter=" << last.iteration << " mean_r_total=" << last.mean_r_total
              << " format_rate=" << last.format_rate << " mean_abs_err=" << last.mean_abs_err
              << "\n";
    std::cout << "checkpoint written to " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& out,
             const std::string& dataset, bool probe_attention) {
    print_effective("eval", {{"ckpt", ckpt},
                             {"data", data},
                             {"out", out},
                             {"dataset", dataset},
                             {"probe_attention", probe_attention ? "1" : "0"}});
    Model model = load_checkpoint(ckpt);
    auto records = read_stage2_jsonl(data);
    EvalReport rep = evaluate(model, records, probe_attention);
    if (!out.empty()) write_eval_csv(rep, dataset, out);
    std::cout << "dataset=" << dataset << " n=" << rep.n << " unparsable=" << rep.n_unparsable
              << " PLCC=" << rep.plcc << " SRCC=" << rep.srcc
              << " mean_visible_tokens=" << rep.mean_visible_tokens
              << " mean_latent_steps=" << rep.mean_latent_steps << "\n";
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& image_path, std::string prompt,
              bool probe_attention, uint64_t seed) {
    Model model = load_checkpoint(ckpt);
    Image img = read_ppm(image_path);
    if (prompt.empty()) prompt = prompts::quality().front();
    print_effective("infer", {{"ckpt", ckpt}, {"image", image_path}, {"prompt", prompt}});
    DecodeConfig dc;
    dc.greedy = true;
    dc.seed = seed;
    dc.record_attention = probe_attention;
    Response r = generate(model, img, default_tokenizer().encode(prompt), dc);
    std::cout << "response: " << default_tokenizer().decode(r.token_ids) << "\n";
    std::cout << "latent_steps: " << r.latent_steps()
              << " visible_tokens: " << count_visible_tokens(r) << "\n";
    if (r.parsed_score)
        std::cout << "score: " << *r.parsed_score << "\n";
    else
        std::cout << "score: <unparsable>\n";
    if (probe_attention && r.segment_start >= 0 && r.parsed_score) {
        AttentionShares sh = attention_mass(r);
        std::cout << "attention: image_share=" << sh.image << " reasoning_share=" << sh.reasoning
                  << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-reasoning image quality toolkit"};
    app.set_config("--config", "", "flat key=value config file");
    app.require_subcommand(1);

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "generate synthetic training corpora");
    std::string sd_out = "data";
    int sd_n1 = 2000, sd_n2 = 1000;
    std::string sd_mix = "40,40,20", sd_storage = "path", sd_sev = "1,2,3,4,5";
    bool sd_no_null = false;
    ModelFlags sd_mf;
    synth->add_option("--out", sd_out, "output directory");
    synth->add_option("--n-stage1", sd_n1, "stage 1 example count");
    synth->add_option("--n-stage2", sd_n2, "stage 2 record count");
    synth->add_option("--mix", sd_mix, "distortion,quality,general mixture weights");
    synth->add_option("--storage", sd_storage, "image storage: path|b64")
        ->check(CLI::IsMember({"path", "b64"}));
    synth->add_option("--severities", sd_sev, "allowed severities, comma separated");
    synth->add_flag("--no-null", sd_no_null, "exclude the null distortion kind");
    add_model_flags(synth, sd_mf);

    // train-sft
    auto* tsft = app.add_subcommand("train-sft", "Stage I supervised training");
    std::string ts_data, ts_out = "sft.ckpt", ts_trace, ts_resume;
    ModelFlags ts_mf;
    SftConfig ts_cfg;
    tsft->add_option("--data", ts_data, "stage1.jsonl path")->required();
    tsft->add_option("--out", ts_out, "output checkpoint");
    tsft->add_option("--trace", ts_trace, "loss trace CSV path");
    tsft->add_option("--resume", ts_resume, "resume from checkpoint");
    tsft->add_option("--lambda-lvr", ts_cfg.lambda_lvr, "latent reconstruction weight");
    tsft->add_option("--lr", ts_cfg.learning_rate, "learning rate");
    tsft->add_option("--weight-decay", ts_cfg.weight_decay, "decoupled weight decay");
    tsft->add_option("--epochs", ts_cfg.epochs, "epochs");
    tsft->add_option("--batch-size", ts_cfg.batch_size, "batch size");
    tsft->add_flag("--supervise-prompt", ts_cfg.supervise_prompt, "include prompt tokens in NTP loss");
    add_model_flags(tsft, ts_mf);

    // train-grpo
    auto* tgrpo = app.add_subcommand("train-grpo", "Stage II latent GRPO calibration");
    std::string tg_data, tg_init, tg_out = "grpo.ckpt", tg_trace;
    GrpoConfig tg_cfg;
    uint64_t tg_seed = 1234;
    bool tg_forced_stop = false;
    tgrpo->add_option("--data", tg_data, "stage2.jsonl path")->required();
    tgrpo->add_option("--init", tg_init, "Stage I checkpoint")->required();
    tgrpo->add_option("--out", tg_out, "output checkpoint");
    tgrpo->add_option("--trace", tg_trace, "reward trace CSV path");
    tgrpo->add_option("--group-size", tg_cfg.group_size, "rollouts per input K");
    tgrpo->add_option("--clip-epsilon", tg_cfg.clip_epsilon, "surrogate clip range");
    tgrpo->add_option("--kl-beta", tg_cfg.kl_beta, "KL penalty coefficient");
    tgrpo->add_option("--sigma", tg_cfg.sigma, "reward kernel width");
    tgrpo->add_option("--tau", tg_cfg.tau, "reward truncation threshold");
    tgrpo->add_option("--latent-budget", tg_cfg.latent_budget, "latent budget T");
    tgrpo->add_option("--lr", tg_cfg.learning_rate, "learning rate");
    tgrpo->add_option("--weight-decay", tg_cfg.weight_decay, "decoupled weight decay");
    tgrpo->add_option("--epochs", tg_cfg.epochs, "epochs");
    tgrpo->add_option("--groups-per-phase", tg_cfg.groups_per_phase, "groups per rollout phase");
    tgrpo->add_option("--temperature", tg_cfg.temperature, "rollout sampling temperature");
    tgrpo->add_flag("--forced-stop", tg_forced_stop, "always run the latent segment to the budget");
    tgrpo->add_flag("--adv-std-norm", tg_cfg.advantage_std_norm, "divide advantages by group std");
    tgrpo->add_flag("--kl-avg-per-rollout", tg_cfg.kl_average_per_rollout,
                    "average the KL sum over the group");
    tgrpo->add_option("--seed", tg_seed, "run seed");

    // eval
    auto* ev = app.add_subcommand("eval", "correlation evaluation on a record set");
    std::string ev_ckpt, ev_data, ev_out = "eval.csv", ev_dataset = "synthetic";
    bool ev_probe = false;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
    ev->add_option("--data", ev_data, "stage2-style jsonl")->required();
    ev->add_option("--out", ev_out, "report CSV path");
    ev->add_option("--dataset", ev_dataset, "dataset label for the summary line");
    ev->add_flag("--probe-attention", ev_probe, "record image/reasoning attention shares");

    // infer
    auto* in = app.add_subcommand("infer", "score a single image");
    std::string in_ckpt, in_image, in_prompt;
    bool in_probe = false;
    uint64_t in_seed = 0;
    in->add_option("--ckpt", in_ckpt, "checkpoint")->required();
    in->add_option("--image", in_image, "PPM image path")->required();
    in->add_option("--prompt", in_prompt, "prompt text (default: quality prompt)");
    in->add_flag("--probe-attention", in_probe, "print attention shares");
    in->add_option("--seed", in_seed, "decode seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth_data(sd_out, sd_n1, sd_n2, sd_mix, sd_storage, sd_sev, sd_no_null, sd_mf);
        if (tsft->parsed()) return cmd_train_sft(ts_data, ts_out, ts_trace, ts_resume, ts_mf, ts_cfg);
        if (tgrpo->parsed()) {
            tg_cfg.learnable_stop = !tg_forced_stop;
            return cmd_train_grpo(tg_data, tg_init, tg_out, tg_trace, tg_cfg, tg_seed);
        }
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_out, ev_dataset, ev_probe);
        if (in->parsed()) return cmd_infer(in_ckpt, in_image, in_prompt, in_probe, in_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
