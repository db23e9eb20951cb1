#include "loco/locogen.hpp"

#include <array>
#include <memory>
#include <sstream>

#include "loco/errors.hpp"
#include "loco/util.hpp"

namespace loco {

namespace {

constexpr std::uint64_t kLatentStream = 0x2a;

bool better(double a, double b, SweepMode mode) { return mode == SweepMode::suppress ? a < b : a > b; }

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Scores generations for a list of (assignment, prompt) jobs in parallel;
// results land in fixed slots so the outcome is independent of scheduling.
std::vector<double> score_jobs(const DenoiserModel& model, const NoiseSchedule& schedule,
                               const std::vector<LayerAssignment>& jobs,
                               const std::vector<std::size_t>& prompt_of, const Scorer& scorer,
                               const GenerationConfig& cfg, std::size_t threads) {
    std::vector<double> out(jobs.size());
    parallel_for(jobs.size(), threads, [&](std::size_t k) {
        const Vector z_T = prompt_latent(model.d_latent(), cfg.seed, prompt_of[k]);
        const Conditioning cond(model, jobs[k]);
        const Vector image = sample(model, z_T, cond, schedule, cfg);
        out[k] = scorer(image, prompt_of[k]);
    });
    return out;
}

}  // namespace

const char* to_string(SweepMode mode) { return mode == SweepMode::suppress ? "suppress" : "update"; }

SweepMode parse_sweep_mode(std::string_view s) {
    if (s == "suppress") return SweepMode::suppress;
    if (s == "update") return SweepMode::update;
    throw ArgumentError("unknown sweep mode '" + std::string(s) + "' (expected suppress or update)");
}

Scorer attribute_scorer(const AttributeSpec& attr) {
    return [attr](std::span<const double> image, std::size_t) { return attribute_score(image, attr); };
}

Vector prompt_latent(std::size_t d_latent, std::uint64_t seed, std::size_t prompt_index) {
    return initial_latent(d_latent, derive_seed(seed, kLatentStream, prompt_index));
}

LocalizationReport sweep(const DenoiserModel& model, const NoiseSchedule& schedule,
                         std::span<const PromptPair> prompts, std::size_t m, const Scorer& scorer,
                         SweepMode mode, const GenerationConfig& cfg, std::size_t threads) {
    const std::size_t M = model.layer_count();
    if (m < 1 || m > M) {
        throw ArgumentError("window length m = " + std::to_string(m) + " outside 1.." +
                            std::to_string(M));
    }
    if (prompts.empty()) throw ArgumentError("sweep needs at least one prompt pair");
    const std::size_t n_cand = M - m + 1;
    const std::size_t N = prompts.size();

    std::vector<LayerAssignment> jobs;
    std::vector<std::size_t> prompt_of;
    jobs.reserve(n_cand * N);
    for (std::size_t j = 0; j < n_cand; ++j) {
        for (std::size_t i = 0; i < N; ++i) {
            jobs.push_back(LayerAssignment::window(prompts[i].with_attr, prompts[i].without_attr, j, m));
            prompt_of.push_back(i);
        }
    }
    std::vector<double> flat;
    try {
        flat = score_jobs(model, schedule, jobs, prompt_of, scorer, cfg, threads);
    } catch (const std::exception& e) {
        throw std::runtime_error("sweep (m = " + std::to_string(m) + "): " + e.what());
    }

    LocalizationReport report;
    report.mode = mode;
    report.layer_count = M;
    report.m = m;
    for (std::size_t j = 0; j < n_cand; ++j) {
        std::vector<double> s(flat.begin() + static_cast<std::ptrdiff_t>(j * N),
                              flat.begin() + static_cast<std::ptrdiff_t>((j + 1) * N));
        report.candidates.push_back({j, m, mean(s)});
        report.scores.push_back(std::move(s));
    }
    report.best = report.candidates.front();
    for (const auto& c : report.candidates)
        if (better(c.a_j, report.best.a_j, mode)) report.best = c;
    return report;
}

double baseline_score(const DenoiserModel& model, const NoiseSchedule& schedule,
                      std::span<const PromptPair> prompts, const Scorer& scorer, SweepMode mode,
                      const GenerationConfig& cfg, std::size_t threads) {
    if (prompts.empty()) throw ArgumentError("baseline needs at least one prompt pair");
    std::vector<LayerAssignment> jobs;
    std::vector<std::size_t> prompt_of;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        if (mode == SweepMode::suppress)
            jobs.push_back(LayerAssignment::clean(prompts[i].with_attr));
        else
            jobs.push_back(LayerAssignment::clean(prompts[i].without_attr));
        prompt_of.push_back(i);
    }
    return mean(score_jobs(model, schedule, jobs, prompt_of, scorer, cfg, threads));
}

std::optional<MSearchResult> search_m(const DenoiserModel& model, const NoiseSchedule& schedule,
                                      std::span<const PromptPair> prompts, const Scorer& scorer,
                                      SweepMode mode, double threshold, std::size_t m_max,
                                      const GenerationConfig& cfg, std::size_t threads) {
    if (m_max < 1 || m_max > model.layer_count()) {
        throw ArgumentError("m_max = " + std::to_string(m_max) + " outside 1.." +
                            std::to_string(model.layer_count()));
    }
    if (!(threshold >= 0.0 && threshold <= 100.0))
        throw ArgumentError("threshold must lie in [0, 100]");
    for (std::size_t m = 1; m <= m_max; ++m) {
        LocalizationReport r = sweep(model, schedule, prompts, m, scorer, mode, cfg, threads);
        const bool met = mode == SweepMode::suppress ? r.best.a_j <= threshold : r.best.a_j >= threshold;
        if (met) return MSearchResult{m, std::move(r)};
    }
    return std::nullopt;
}

std::string report_csv(const LocalizationReport& report) {
    std::string out = "j,m,a_j";
    const std::size_t N = report.scores.empty() ? 0 : report.scores.front().size();
    for (std::size_t i = 0; i < N; ++i) out += ",s_" + std::to_string(i);
    out += '\n';
    for (std::size_t k = 0; k < report.candidates.size(); ++k) {
        const auto& c = report.candidates[k];
        out += std::to_string(c.j) + "," + std::to_string(c.m) + "," + format_double(c.a_j);
        for (double s : report.scores[k]) out += "," + format_double(s);
        out += '\n';
    }
    return out;
}

std::string report_jsonl(const LocalizationReport& report, const std::string& attribute) {
    std::string out = "{\"record\":\"localization\",\"attribute\":\"" + attribute + "\",\"mode\":\"" +
                      to_string(report.mode) + "\",\"layers\":" + std::to_string(report.layer_count) +
                      ",\"m\":" + std::to_string(report.m) + ",\"best\":{\"j\":" +
                      std::to_string(report.best.j) + ",\"m\":" + std::to_string(report.best.m) +
                      ",\"a_j\":" + format_double(report.best.a_j) + "},\"a\":[";
    for (std::size_t k = 0; k < report.candidates.size(); ++k) {
        if (k > 0) out += ',';
        out += format_double(report.candidates[k].a_j);
    }
    out += "]}\n";
    return out;
}

LocalizationReport parse_report_csv(std::string_view csv, SweepMode mode, std::size_t layer_count) {
    LocalizationReport report;
    report.mode = mode;
    report.layer_count = layer_count;
    std::istringstream in{std::string(csv)};
    std::string line;
    if (!std::getline(in, line) || line.rfind("j,m,a_j", 0) != 0)
        throw IoError("localization CSV: missing header");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) fields.push_back(f);
        if (fields.size() < 3) throw IoError("localization CSV line " + std::to_string(line_no) + ": too few fields");
        try {
            WindowCandidate c;
            c.j = static_cast<std::size_t>(parse_u64(fields[0], "j"));
            c.m = static_cast<std::size_t>(parse_u64(fields[1], "m"));
            c.a_j = parse_double(fields[2], "a_j");
            std::vector<double> s;
            for (std::size_t i = 3; i < fields.size(); ++i) s.push_back(parse_double(fields[i], "s_i"));
            report.candidates.push_back(c);
            report.scores.push_back(std::move(s));
        } catch (const ArgumentError& e) {
            throw IoError("localization CSV line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (report.candidates.empty()) throw IoError("localization CSV: no candidates");
    report.m = report.candidates.front().m;
    report.best = report.candidates.front();
    for (const auto& c : report.candidates)
        if (better(c.a_j, report.best.a_j, mode)) report.best = c;
    return report;
}

std::span<const ReferenceWindow> reference_windows() {
    static constexpr std::array<ReferenceWindow, 5> table{{
        {"SD-v1-5", 2},
        {"SD-v2-1", 3},
        {"OpenJourney", 2},
        {"SD-XL", 5},
        {"DeepFloyd", 3},
    }};
    return table;
}

}  // namespace loco
