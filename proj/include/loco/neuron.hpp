#pragma once

// Neuron-level localization: rank key/value embedding coordinates by how
// strongly they separate attribute prompts from neutral ones, then ablate the
// top-ranked ones.

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "loco/diffusion.hpp"
#include "loco/world.hpp"

namespace loco {

enum class MatrixKind { key, value };

const char* to_string(MatrixKind kind);
MatrixKind parse_matrix_kind(std::string_view s);

struct NeuronRanking {
    std::size_t layer = 0;
    MatrixKind kind = MatrixKind::value;
    Vector z;                        // Welch z per output coordinate
    std::vector<std::size_t> order;  // by |z| descending, ties -> smaller index
};

struct MaskEntry {
    std::size_t layer = 0;
    MatrixKind kind = MatrixKind::value;
    std::vector<std::size_t> neurons;  // sorted, unique
};

struct DropoutMask {
    std::vector<MaskEntry> entries;

    bool empty() const;
    void validate(const DenoiserModel& model) const;
};

// Permutation of 0..n-1 by |z| descending with smaller index first on ties.
std::vector<std::size_t> rank_order(std::span<const double> z);

// Activations are rows e * W for the layer's key or value matrix.
std::vector<NeuronRanking> rank_neurons(const DenoiserModel& model,
                                        std::span<const std::size_t> layers, MatrixKind kind,
                                        std::span<const Vector> with_attr,
                                        std::span<const Vector> without_attr);

// Last-subject-token rows of a prompt list.
std::vector<Vector> subject_rows(std::span<const PromptEmbedding> prompts);

// Copy of model with masked columns of W_K / W_V set to zero.
DenoiserModel apply_dropout(const DenoiserModel& model, const DropoutMask& mask);

DropoutMask top_k_mask(std::span<const NeuronRanking> rankings, std::size_t k);

// Mean attribute score of clean generations under the top-k mask, per k.
std::vector<std::pair<std::size_t, double>> dropout_curve(
    const DenoiserModel& model, const NoiseSchedule& schedule,
    std::span<const NeuronRanking> rankings, std::span<const std::size_t> ks,
    std::span<const PromptEmbedding> prompts, const AttributeSpec& attr,
    const GenerationConfig& cfg, std::size_t threads = 1);

// Scales the reference count (out of 1280 neurons) to a layer of width d.
std::size_t scaled_neuron_count(std::size_t reference_count, std::size_t d);
inline constexpr std::size_t kReferenceNeuronWidth = 1280;
inline constexpr std::size_t kReferenceNeuronCounts[] = {30, 50, 100};

std::string ranking_csv(std::span<const NeuronRanking> rankings);
std::vector<NeuronRanking> parse_ranking_csv(std::string_view csv);
std::string mask_text(const DropoutMask& mask);
DropoutMask parse_mask_text(std::string_view text);
std::string curve_csv(const std::vector<std::pair<std::size_t, double>>& curve);
std::vector<std::pair<std::size_t, double>> parse_curve_csv(std::string_view csv);

}  // namespace loco
