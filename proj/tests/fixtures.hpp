#pragma once

// Small random models and prompts for property tests.

#include <random>

#include "loco/diffusion.hpp"
#include "oracles.hpp"

namespace fixture {

struct Dims {
    std::size_t layers = 3;
    std::size_t d_latent = 4;
    std::size_t d_text = 5;
    std::size_t d_attn = 3;
    std::size_t tokens = 4;
};

inline loco::DenoiserModel random_model(const Dims& d, std::mt19937_64& rng, double weight_scale = 0.5) {
    loco::DenoiserModel m;
    std::uniform_real_distribution<double> gain(0.2, 1.5);
    for (std::size_t l = 0; l < d.layers; ++l) {
        loco::CrossAttentionLayer L;
        L.w_q = oracle::random_matrix(d.d_latent, d.d_attn, rng, weight_scale);
        L.w_k = oracle::random_matrix(d.d_text, d.d_attn, rng, weight_scale);
        L.w_v = oracle::random_matrix(d.d_text, d.d_latent, rng, weight_scale);
        L.residual_gain = gain(rng);
        m.layers.push_back(std::move(L));
    }
    m.uncond_map = oracle::random_matrix(d.d_latent, d.d_latent, rng, 0.3);
    return m;
}

inline loco::PromptEmbedding random_prompt(const Dims& d, std::mt19937_64& rng) {
    loco::PromptEmbedding p;
    p.tokens = oracle::random_matrix(d.tokens, d.d_text, rng);
    p.last_subject_index = d.tokens - 1;
    return p;
}

}  // namespace fixture
