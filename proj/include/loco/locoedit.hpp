#pragma once

// Closed-form key/value editing of selected cross-attention layers.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "loco/diffusion.hpp"
#include "loco/linalg.hpp"
#include "loco/world.hpp"

namespace loco {

inline constexpr double kDefaultEditLambda = 0.01;

struct EditSpec {
    std::vector<std::size_t> target_layers;  // C_loc
    Matrix x_orig;                           // N x d_text
    Matrix x_target;                         // N x d_text
    double lambda_k = kDefaultEditLambda;
    double lambda_v = kDefaultEditLambda;

    void validate(const DenoiserModel& model) const;
};

struct LayerEditStats {
    std::size_t layer = 0;
    double key_delta = 0.0;    // ||W_K' - W_K||_F
    double value_delta = 0.0;  // ||W_V' - W_V||_F
    double key_residual = 0.0;    // max-abs normal-equation residual
    double value_residual = 0.0;
};

struct EditOutcome {
    DenoiserModel edited;
    std::vector<LayerEditStats> layers;
};

struct EmbeddingStacks {
    Matrix x_orig;
    Matrix x_target;
};

// Row i: last-subject-token rows of with_attr / without_attr of pair i.
EmbeddingStacks collect_embeddings(std::span<const PromptPair> prompts);

// Per target layer: W <- argmin ||X_orig W - X_target W_hat||^2 + lambda ||W - W_hat||^2,
// for keys and values independently. The source model is not modified.
EditOutcome apply_edit(const DenoiserModel& model, const EditSpec& spec);

struct ScoredPromptSet {
    std::string name;
    AttributeSpec attr;  // scored against this attribute's direction
    std::vector<PromptEmbedding> prompts;
};

struct SetScores {
    std::string name;
    double pre = 0.0;   // mean score under the original model
    double post = 0.0;  // mean score under the edited model
    double delta = 0.0; // post - pre
};

struct EditEvaluation {
    SetScores edited;
    std::vector<SetScores> unrelated;
};

SetScores score_set(const DenoiserModel& original, const DenoiserModel& edited,
                    const NoiseSchedule& schedule, const ScoredPromptSet& set,
                    const GenerationConfig& cfg, std::size_t threads = 1);

EditEvaluation evaluate_edit(const DenoiserModel& original, const DenoiserModel& edited,
                             const NoiseSchedule& schedule, const ScoredPromptSet& edit_set,
                             std::span<const ScoredPromptSet> unrelated,
                             const GenerationConfig& cfg, std::size_t threads = 1);

// Edit manifest: target layers, lambdas, prompt set and per-layer deltas.
std::string edit_manifest(const EditSpec& spec, const EditOutcome& outcome,
                          const std::string& attribute, const std::string& prompt_set);

// Generic-prompt CLIP-Score with no edit vs. after the closed-form edit, as
// reported for a real model; documentation fixture only.
inline constexpr double kReferenceGenericScoreOriginal = 30.04;
inline constexpr double kReferenceGenericScoreEdited = 29.99;

}  // namespace loco
