#pragma once

// Planted benchmark worlds: a denoiser whose attribute knowledge lives in a
// known window of layers, plus matching prompt sets and a cosine scorer.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loco/config.hpp"
#include "loco/diffusion.hpp"
#include "loco/linalg.hpp"

namespace loco {

enum class AttributeKind { style, object, fact };
enum class Redundancy { single_window, redundant };

const char* to_string(AttributeKind kind);
const char* to_string(Redundancy r);
AttributeKind parse_attribute_kind(std::string_view s);
Redundancy parse_redundancy(std::string_view s);

struct AttributeSpec {
    std::string name;
    Vector image_direction;  // unit, d_latent
    Vector token_signature;  // unit, d_text
    AttributeKind kind = AttributeKind::style;
    // Facts: index of the attribute holding the updated fact.
    std::optional<std::size_t> target;
    // True for the updated-fact attributes referenced by `target`.
    bool is_target = false;
    // Latent coordinate that image_direction selects.
    std::size_t image_neuron = 0;
};

struct PromptPair {
    PromptEmbedding with_attr;     // T_i
    PromptEmbedding without_attr;  // T'_i
};

struct TruthWindow {
    std::size_t start = 0;
    std::size_t length = 0;

    bool contains(std::size_t layer) const { return layer >= start && layer < start + length; }
};

struct WorldConfig {
    std::uint64_t seed = 0;
    std::size_t layers = 16;  // M
    std::size_t m_star = 2;
    std::size_t j_star = 8;
    std::size_t n_attrs = 2;   // style/object attributes, alternating kinds
    std::size_t n_facts = 1;   // each adds an old-fact and an updated-fact attribute
    std::size_t n_prompts = 8;
    Redundancy redundancy = Redundancy::single_window;
    std::size_t redundant_layers = 4;  // k, redundant worlds only
    std::size_t d_latent = 32;
    std::size_t d_text = 64;
    std::size_t d_attn = 16;
    std::size_t n_tokens = 32;
    std::size_t steps = 50;
    double guidance_scale = 7.5;

    // Target magnitudes of the generated image, in latent units.
    double attr_magnitude = 800.0;
    double content_magnitude = 50.0;
    double junk_magnitude = 150.0;  // content disruption under corrupted embeddings

    void validate() const;
    GenerationConfig generation() const;
    std::size_t signature_count() const { return n_attrs + 2 * n_facts; }
};

// Orthonormal text-space layout shared by the model and its prompts.
struct TextLayout {
    Vector bos;                        // direction of the start token
    std::vector<Matrix> subject_bases;  // per attribute, rows span its subject content
    Matrix context_basis;              // rows span prompt context
    Matrix spare_basis;                // rows unused by clean prompts
    double bos_scale = 0.25;
    double theme_norm = 0.15;
    double variation_norm = 0.05;
    double subject_norm = 0.15;
    double signature_jitter = 0.2;  // style/object signature weight in [1-j, 1+j]
};

struct PlantedWorld {
    WorldConfig config;
    DenoiserModel model;
    NoiseSchedule schedule;
    std::vector<AttributeSpec> attributes;
    std::vector<std::vector<PromptPair>> prompts;  // per attribute
    std::vector<TruthWindow> truth;                // per attribute
    std::vector<std::size_t> planted_layers;       // sorted
    TextLayout layout;

    std::size_t attribute_index(std::string_view name) const;
};

PlantedWorld build_world(const WorldConfig& config);

// 100 * max(0, cos(image, image_direction)).
double attribute_score(std::span<const double> image, const AttributeSpec& attr);

struct PromptSets {
    std::vector<PromptEmbedding> with_attr;
    std::vector<PromptEmbedding> without_attr;
};

// Fresh prompt sets for one attribute. Facts carry the target signature in
// without_attr in place of the original.
PromptSets make_prompt_sets(const PlantedWorld& world, std::size_t attr, std::size_t n,
                            std::uint64_t seed);
std::vector<PromptPair> make_prompt_pairs(const PlantedWorld& world, std::size_t attr, std::size_t n,
                                          std::uint64_t seed);

// Manifest text: world parameters, truth windows and attribute names.
std::string world_manifest(const PlantedWorld& world, const std::string& weights_file);
WorldConfig config_from_manifest(const KeyValueFile& manifest);

// Writes weights.loco1 and world.manifest into dir.
void save_world(const PlantedWorld& world, const std::string& dir);
// Rebuilds the world from the manifest and replaces its model with the stored
// weights (which may be edited).
PlantedWorld load_world(const std::string& dir);

}  // namespace loco
