#pragma once

// Causal tracing baseline: corrupt the prompt embedding, then restore one
// layer's clean cross-attention output at every step and see how much of the
// attribute comes back.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "loco/diffusion.hpp"
#include "loco/world.hpp"

namespace loco {

enum class CorruptionScope { all_tokens, subject_token };

const char* to_string(CorruptionScope scope);
CorruptionScope parse_corruption_scope(std::string_view s);

struct CorruptionConfig {
    double sigma = 0.0;  // <= 0 means 3x the RMS of the prompt embedding entries
    std::uint64_t seed = 0;
    CorruptionScope scope = CorruptionScope::all_tokens;
    std::size_t samples = 16;  // noise draws averaged per score
};

struct TraceReport {
    Vector restoration;  // per layer
    double clean = 0.0;
    double corrupted = 0.0;
    double sigma = 0.0;
};

double embedding_rms(const PromptEmbedding& e);

PromptEmbedding corrupt(const PromptEmbedding& e, double sigma, CorruptionScope scope,
                        std::uint64_t seed);

TraceReport trace(const DenoiserModel& model, const NoiseSchedule& schedule,
                  const PromptEmbedding& prompt, const AttributeSpec& attr,
                  const CorruptionConfig& corruption, const GenerationConfig& cfg,
                  std::size_t threads = 1);

// Mean restoration score when the layers flagged in `restore` are all patched.
double restored_score(const DenoiserModel& model, const NoiseSchedule& schedule,
                      const PromptEmbedding& prompt, const AttributeSpec& attr,
                      const CorruptionConfig& corruption, const GenerationConfig& cfg,
                      const std::vector<bool>& restore);

// Element-wise mean of several reports (same layer count).
TraceReport average_reports(const std::vector<TraceReport>& reports);

// Layers whose restoration reaches fraction * clean.
std::vector<std::size_t> restoring_layers(const TraceReport& report, double fraction = 0.5);

std::string trace_csv(const TraceReport& report);
TraceReport parse_trace_csv(std::string_view csv);

}  // namespace loco
