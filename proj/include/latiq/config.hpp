#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace latiq {

struct ModelConfig {
    int vocab_size = 83;      // default matches the built-in tokenizer
    int embed_dim = 64;
    int num_layers = 2;
    int num_heads = 4;
    int patch_size = 8;       // pixels
    int image_size = 32;      // pixels, square
    int visual_dim = 32;      // dimension of encoder-space visual tokens
    int max_seq_len = 96;
    int latent_budget = 8;    // fixed latent-step budget T
    uint64_t seed = 1234;

    int grid_side() const { return image_size / patch_size; }
    int num_patches() const { return grid_side() * grid_side(); }
    int patch_dim() const { return patch_size * patch_size * 3; }

    void validate() const {
        if (embed_dim % num_heads != 0)
            throw std::invalid_argument("ModelConfig: embed_dim must be divisible by num_heads");
        if (image_size % patch_size != 0)
            throw std::invalid_argument("ModelConfig: image_size must be divisible by patch_size");
        if (latent_budget < 1)
            throw std::invalid_argument("ModelConfig: latent_budget must be >= 1");
        if (vocab_size < 8 || embed_dim < 2 || num_layers < 1 || max_seq_len < 4)
            throw std::invalid_argument("ModelConfig: degenerate dimensions");
    }
};

struct SftConfig {
    double lambda_lvr = 0.1;
    double learning_rate = 1e-3; // toy-scale; the from-scratch decoder needs a larger step than a fine-tune would
    double weight_decay = 0.0;
    int epochs = 4;
    int batch_size = 8;
    bool supervise_prompt = false; // answer-only NTP by default
    uint64_t seed = 1;

    void validate() const {
        if (lambda_lvr < 0.0) throw std::invalid_argument("SftConfig: lambda_lvr must be >= 0");
        if (batch_size < 1 || epochs < 1) throw std::invalid_argument("SftConfig: epochs/batch_size must be >= 1");
    }
};

struct GrpoConfig {
    int group_size = 8;          // K
    double clip_epsilon = 0.2;
    double kl_beta = 1e-3;
    double sigma = 0.5;
    double tau = 1.0;
    int latent_budget = 8;       // T during Stage II rollouts
    double learning_rate = 3e-5; // toy-scale
    double weight_decay = 0.0;
    int epochs = 2;
    int groups_per_phase = 8;    // rollout-phase size; pi_old refreshes per phase
    double temperature = 1.0;
    bool learnable_stop = true;  // latent segment may close itself before the budget
    bool advantage_std_norm = false; // centering only by default
    bool kl_average_per_rollout = false; // default follows the objective as summed
    uint64_t seed = 2;

    void validate() const {
        if (group_size < 2) throw std::invalid_argument("GrpoConfig: group_size must be >= 2");
        if (sigma <= 0.0) throw std::invalid_argument("GrpoConfig: sigma must be > 0");
        if (tau <= 0.0) throw std::invalid_argument("GrpoConfig: tau must be > 0");
        if (clip_epsilon <= 0.0 || clip_epsilon >= 1.0)
            throw std::invalid_argument("GrpoConfig: clip_epsilon must be in (0,1)");
        if (latent_budget < 1) throw std::invalid_argument("GrpoConfig: latent_budget must be >= 1");
    }
};

} // namespace latiq
