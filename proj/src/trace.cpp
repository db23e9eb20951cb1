#include "loco/trace.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "loco/config.hpp"
#include "loco/errors.hpp"
#include "loco/locogen.hpp"
#include "loco/util.hpp"

namespace loco {

namespace {

constexpr std::uint64_t kNoiseStream = 0x7e;

double resolve_sigma(const PromptEmbedding& prompt, const CorruptionConfig& c) {
    const double sigma = c.sigma > 0.0 ? c.sigma : 3.0 * embedding_rms(prompt);
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ArgumentError("corruption sigma must be > 0");
    return sigma;
}

struct CleanRun {
    Vector z_T;
    std::vector<LayerOutputs> cache;
    double score = 0.0;
};

CleanRun clean_run(const DenoiserModel& model, const NoiseSchedule& schedule,
                   const PromptEmbedding& prompt, const AttributeSpec& attr,
                   const GenerationConfig& cfg) {
    CleanRun run;
    run.z_T = prompt_latent(model.d_latent(), cfg.seed, 0);
    const Conditioning cond(model, LayerAssignment::clean(prompt));
    SampleHooks hooks;
    hooks.record = &run.cache;
    run.score = attribute_score(sample(model, run.z_T, cond, schedule, cfg, &hooks), attr);
    return run;
}

double patched_score(const DenoiserModel& model, const NoiseSchedule& schedule,
                     const Conditioning& corrupted, const CleanRun& clean, const AttributeSpec& attr,
                     const GenerationConfig& cfg, const std::vector<bool>& restore) {
    SampleHooks hooks;
    hooks.replay = &clean.cache;
    hooks.replay_layers = restore;
    return attribute_score(sample(model, clean.z_T, corrupted, schedule, cfg, &hooks), attr);
}

}  // namespace

const char* to_string(CorruptionScope scope) {
    return scope == CorruptionScope::all_tokens ? "all_tokens" : "subject_token";
}

CorruptionScope parse_corruption_scope(std::string_view s) {
    if (s == "all_tokens") return CorruptionScope::all_tokens;
    if (s == "subject_token") return CorruptionScope::subject_token;
    throw ArgumentError("unknown corruption scope '" + std::string(s) + "'");
}

double embedding_rms(const PromptEmbedding& e) {
    double acc = 0.0;
    for (double v : e.tokens.data()) acc += v * v;
    return std::sqrt(acc / static_cast<double>(e.tokens.size()));
}

PromptEmbedding corrupt(const PromptEmbedding& e, double sigma, CorruptionScope scope,
                        std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    PromptEmbedding out = e;
    for (std::size_t r = 0; r < out.tokens.rows(); ++r) {
        if (scope == CorruptionScope::subject_token && r != out.last_subject_index) continue;
        for (double& v : out.tokens.row(r)) v += normal(rng);
    }
    return out;
}

TraceReport trace(const DenoiserModel& model, const NoiseSchedule& schedule,
                  const PromptEmbedding& prompt, const AttributeSpec& attr,
                  const CorruptionConfig& corruption, const GenerationConfig& cfg,
                  std::size_t threads) {
    if (corruption.samples == 0) throw ArgumentError("corruption samples must be >= 1");
    const std::size_t M = model.layer_count();
    const double sigma = resolve_sigma(prompt, corruption);
    const CleanRun clean = clean_run(model, schedule, prompt, attr, cfg);

    // Per noise sample: corrupted score and M single-layer restorations.
    const std::size_t S = corruption.samples;
    std::vector<double> results(S * (M + 1));
    parallel_for(S * (M + 1), threads, [&](std::size_t k) {
        const std::size_t s = k / (M + 1);
        const std::size_t l = k % (M + 1);
        const PromptEmbedding noisy =
            corrupt(prompt, sigma, corruption.scope, derive_seed(corruption.seed, kNoiseStream, s));
        const Conditioning cond(model, LayerAssignment::clean(noisy));
        std::vector<bool> restore(M, false);
        if (l < M) restore[l] = true;
        results[k] = patched_score(model, schedule, cond, clean, attr, cfg, restore);
    });

    TraceReport report;
    report.sigma = sigma;
    report.clean = clean.score;
    report.restoration.assign(M, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t l = 0; l < M; ++l) report.restoration[l] += results[s * (M + 1) + l];
        report.corrupted += results[s * (M + 1) + M];
    }
    for (double& r : report.restoration) r /= static_cast<double>(S);
    report.corrupted /= static_cast<double>(S);
    return report;
}

double restored_score(const DenoiserModel& model, const NoiseSchedule& schedule,
                      const PromptEmbedding& prompt, const AttributeSpec& attr,
                      const CorruptionConfig& corruption, const GenerationConfig& cfg,
                      const std::vector<bool>& restore) {
    if (corruption.samples == 0) throw ArgumentError("corruption samples must be >= 1");
    if (restore.size() != model.layer_count()) throw ArgumentError("restore mask has wrong length");
    const double sigma = resolve_sigma(prompt, corruption);
    const CleanRun clean = clean_run(model, schedule, prompt, attr, cfg);
    double total = 0.0;
    for (std::size_t s = 0; s < corruption.samples; ++s) {
        const PromptEmbedding noisy =
            corrupt(prompt, sigma, corruption.scope, derive_seed(corruption.seed, kNoiseStream, s));
        const Conditioning cond(model, LayerAssignment::clean(noisy));
        total += patched_score(model, schedule, cond, clean, attr, cfg, restore);
    }
    return total / static_cast<double>(corruption.samples);
}

TraceReport average_reports(const std::vector<TraceReport>& reports) {
    if (reports.empty()) throw ArgumentError("no trace reports to average");
    TraceReport out;
    out.restoration.assign(reports.front().restoration.size(), 0.0);
    for (const auto& r : reports) {
        if (r.restoration.size() != out.restoration.size())
            throw ShapeError("trace reports have different layer counts");
        for (std::size_t l = 0; l < r.restoration.size(); ++l) out.restoration[l] += r.restoration[l];
        out.clean += r.clean;
        out.corrupted += r.corrupted;
        out.sigma += r.sigma;
    }
    const double n = static_cast<double>(reports.size());
    for (double& v : out.restoration) v /= n;
    out.clean /= n;
    out.corrupted /= n;
    out.sigma /= n;
    return out;
}

std::vector<std::size_t> restoring_layers(const TraceReport& report, double fraction) {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < report.restoration.size(); ++l)
        if (report.restoration[l] >= fraction * report.clean) out.push_back(l);
    return out;
}

std::string trace_csv(const TraceReport& report) {
    std::string out = "layer,restoration\n";
    for (std::size_t l = 0; l < report.restoration.size(); ++l)
        out += std::to_string(l) + "," + format_double(report.restoration[l]) + "\n";
    out += "clean," + format_double(report.clean) + "\n";
    out += "corrupted," + format_double(report.corrupted) + "\n";
    out += "sigma," + format_double(report.sigma) + "\n";
    return out;
}

TraceReport parse_trace_csv(std::string_view csv) {
    TraceReport report;
    std::istringstream in{std::string(csv)};
    std::string line;
    if (!std::getline(in, line) || line != "layer,restoration") throw IoError("trace CSV: missing header");
    bool have_clean = false, have_corrupted = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw IoError("trace CSV: malformed line '" + line + "'");
        const std::string key = line.substr(0, comma);
        try {
            const double v = parse_double(line.substr(comma + 1), key);
            if (key == "clean") {
                report.clean = v;
                have_clean = true;
            } else if (key == "corrupted") {
                report.corrupted = v;
                have_corrupted = true;
            } else if (key == "sigma") {
                report.sigma = v;
            } else {
                if (parse_u64(key, "layer") != report.restoration.size())
                    throw IoError("trace CSV: layers out of order");
                report.restoration.push_back(v);
            }
        } catch (const ArgumentError& e) {
            throw IoError(std::string("trace CSV: ") + e.what());
        }
    }
    if (!have_clean || !have_corrupted) throw IoError("trace CSV: missing clean/corrupted rows");
    return report;
}

}  // namespace loco
