#pragma once

// Toy latent-diffusion denoiser: a stack of cross-attention layers read by a
// residual accumulator, classifier-free guidance and deterministic DDIM.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loco/linalg.hpp"

namespace loco {

// Cumulative signal levels alpha_bar_t for t = 1..T.
struct NoiseSchedule {
    Vector alpha_bar;

    static NoiseSchedule linear(std::size_t steps, double first = 0.999, double last = 0.01);

    std::size_t steps() const noexcept { return alpha_bar.size(); }
    // alpha_bar at 1-based t; at(0) is 1 by convention.
    double at(std::size_t t) const;
    void validate() const;
};

struct PromptEmbedding {
    Matrix tokens;  // n_tokens x d_text
    std::size_t last_subject_index = 0;

    std::size_t token_count() const noexcept { return tokens.rows(); }
    std::span<const double> subject_row() const { return tokens.row(last_subject_index); }
    void validate() const;
};

struct CrossAttentionLayer {
    Matrix w_q;  // d_latent x d_attn
    Matrix w_k;  // d_text x d_attn
    Matrix w_v;  // d_text x d_latent
    double residual_gain = 1.0;
};

struct DenoiserModel {
    std::vector<CrossAttentionLayer> layers;
    Matrix uncond_map;  // d_latent x d_latent

    std::size_t layer_count() const noexcept { return layers.size(); }
    std::size_t d_latent() const noexcept { return uncond_map.rows(); }
    std::size_t d_text() const;
    std::size_t d_attn() const;
    // Throws ShapeError / ArgumentError on any inconsistency.
    void validate() const;
};

struct GenerationConfig {
    double guidance_scale = 7.5;
    std::size_t steps = 50;
    std::uint64_t seed = 0;
};

// Which text embedding each layer reads. Layers in controlling_set read the
// override, every other layer reads base.
struct LayerAssignment {
    PromptEmbedding base;
    std::optional<PromptEmbedding> override;
    std::vector<std::size_t> controlling_set;  // sorted, unique

    static LayerAssignment clean(PromptEmbedding base);
    static LayerAssignment altered(PromptEmbedding base, PromptEmbedding override,
                                   std::vector<std::size_t> controlling_set);
    // Layers start .. start+length-1 read override.
    static LayerAssignment window(PromptEmbedding base, PromptEmbedding override, std::size_t start,
                                  std::size_t length);

    bool in_controlling_set(std::size_t layer) const;
    const PromptEmbedding& embedding_for(std::size_t layer) const;
    void validate(const DenoiserModel& model) const;
};

// Keys and values of every layer for one assignment, computed once and
// reused across timesteps.
class Conditioning {
public:
    Conditioning(const DenoiserModel& model, const LayerAssignment& assignment);

    const Matrix& keys(std::size_t layer) const { return keys_[layer]; }
    const Matrix& values(std::size_t layer) const { return values_[layer]; }

private:
    std::vector<Matrix> keys_;
    std::vector<Matrix> values_;
};

// Per-layer cross-attention outputs for one conditional pass.
using LayerOutputs = std::vector<Vector>;

// Optional taps into the conditional pass. `record` receives each layer's
// output; layers flagged in `replay_layers` use `replay` instead of computing.
struct LayerPatch {
    LayerOutputs* record = nullptr;
    const LayerOutputs* replay = nullptr;
    const std::vector<bool>* replay_layers = nullptr;
};

// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps
Vector add_noise(std::span<const double> x0, std::size_t t, std::span<const double> eps,
                 const NoiseSchedule& schedule);

// Unconditional branch: uncond_map * z_t.
Vector predict_noise(const DenoiserModel& model, std::span<const double> z_t, std::size_t t);
// Conditional branch under an assignment.
Vector predict_noise(const DenoiserModel& model, std::span<const double> z_t,
                     const LayerAssignment& assignment, std::size_t t);
Vector predict_noise(const DenoiserModel& model, std::span<const double> z_t,
                     const Conditioning& conditioning, std::size_t t, const LayerPatch& patch = {});

// cond + alpha (cond - uncond)
Vector combine_guidance(std::span<const double> cond, std::span<const double> uncond, double alpha);
Vector guided_noise(const DenoiserModel& model, std::span<const double> z_t,
                    const LayerAssignment& assignment, std::size_t t, const GenerationConfig& cfg);

// Per-step taps for sample(). Step k (0-based) denoises t = T - k.
struct SampleHooks {
    std::vector<LayerOutputs>* record = nullptr;
    const std::vector<LayerOutputs>* replay = nullptr;
    std::vector<bool> replay_layers;
};

// One DDIM (eta = 0) update from t to t - 1.
Vector ddim_step(std::span<const double> z_t, std::span<const double> eps_hat, std::size_t t,
                 const NoiseSchedule& schedule);

Vector sample(const DenoiserModel& model, std::span<const double> z_T,
              const LayerAssignment& assignment, const NoiseSchedule& schedule,
              const GenerationConfig& cfg);
Vector sample(const DenoiserModel& model, std::span<const double> z_T,
              const Conditioning& conditioning, const NoiseSchedule& schedule,
              const GenerationConfig& cfg, SampleHooks* hooks = nullptr);

// Standard normal starting latent derived from a seed.
Vector initial_latent(std::size_t d_latent, std::uint64_t seed);

double denoising_loss(const DenoiserModel& model, std::span<const double> z0,
                      const LayerAssignment& assignment, std::size_t t,
                      std::span<const double> eps, const NoiseSchedule& schedule);

struct LayerGradient {
    Matrix w_q;
    Matrix w_k;
    Matrix w_v;
};

// Analytic gradient of denoising_loss with respect to every layer's weights.
std::vector<LayerGradient> denoising_loss_gradient(const DenoiserModel& model,
                                                   std::span<const double> z0,
                                                   const LayerAssignment& assignment, std::size_t t,
                                                   std::span<const double> eps,
                                                   const NoiseSchedule& schedule);

// LOCO1 weight container; see docs/formats.md.
std::string encode_weights(const DenoiserModel& model, const NoiseSchedule& schedule);
void decode_weights(std::string_view bytes, DenoiserModel& model, NoiseSchedule& schedule);
void save_weights(const std::string& path, const DenoiserModel& model,
                  const NoiseSchedule& schedule);
void load_weights(const std::string& path, DenoiserModel& model, NoiseSchedule& schedule);

}  // namespace loco
