#pragma once

// Sliding-window localization: alter adjacent layer windows, score the
// generations and pick the window that moves the attribute the most.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loco/diffusion.hpp"
#include "loco/world.hpp"

namespace loco {

// suppress: style/objects, argmin of the score against the original prompt.
// update: facts, argmax of the score against the target.
enum class SweepMode { suppress, update };

const char* to_string(SweepMode mode);
SweepMode parse_sweep_mode(std::string_view s);

struct WindowCandidate {
    std::size_t j = 0;
    std::size_t m = 0;
    double a_j = 0.0;
};

struct LocalizationReport {
    SweepMode mode = SweepMode::suppress;
    std::size_t layer_count = 0;
    std::size_t m = 0;
    std::vector<WindowCandidate> candidates;    // j = 0..M-m
    WindowCandidate best;
    std::vector<std::vector<double>> scores;   // [candidate][prompt]
};

// Scores one generated image; prompt_index identifies the prompt pair.
using Scorer = std::function<double(std::span<const double> image, std::size_t prompt_index)>;

Scorer attribute_scorer(const AttributeSpec& attr);

// Starting latent for prompt i; shared by every candidate.
Vector prompt_latent(std::size_t d_latent, std::uint64_t seed, std::size_t prompt_index);

LocalizationReport sweep(const DenoiserModel& model, const NoiseSchedule& schedule,
                         std::span<const PromptPair> prompts, std::size_t m, const Scorer& scorer,
                         SweepMode mode, const GenerationConfig& cfg, std::size_t threads = 1);

// Reference level for relative thresholds. suppress: mean score of clean
// generations from with_attr. update: mean score when every layer reads
// without_attr (the best any window can do).
double baseline_score(const DenoiserModel& model, const NoiseSchedule& schedule,
                      std::span<const PromptPair> prompts, const Scorer& scorer, SweepMode mode,
                      const GenerationConfig& cfg, std::size_t threads = 1);

struct MSearchResult {
    std::size_t m = 0;
    LocalizationReport report;
};

// Smallest m in 1..m_max whose best candidate meets the threshold.
std::optional<MSearchResult> search_m(const DenoiserModel& model, const NoiseSchedule& schedule,
                                      std::span<const PromptPair> prompts, const Scorer& scorer,
                                      SweepMode mode, double threshold, std::size_t m_max,
                                      const GenerationConfig& cfg, std::size_t threads = 1);

// CSV: j,m,a_j,s_0..s_{N-1}; JSON line: summary record.
std::string report_csv(const LocalizationReport& report);
std::string report_jsonl(const LocalizationReport& report, const std::string& attribute);
LocalizationReport parse_report_csv(std::string_view csv, SweepMode mode, std::size_t layer_count);

// Window lengths used on real text-to-image models, kept as a documentation
// table.
struct ReferenceWindow {
    const char* model;
    std::size_t m;
};
std::span<const ReferenceWindow> reference_windows();

}  // namespace loco
