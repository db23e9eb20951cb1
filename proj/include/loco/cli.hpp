#pragma once

// locolab command-line driver. Exit codes: 0 ok, 1 usage or invalid input,
// 2 I/O failure, 3 no result (m-search found nothing).

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "loco/world.hpp"

namespace loco::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitNoResult = 3;

// "50%rel" is relative to the baseline score; a bare number is absolute.
struct Threshold {
    bool relative = true;
    double value = 50.0;

    double resolve(double baseline) const { return relative ? baseline * value / 100.0 : value; }
};
Threshold parse_threshold(std::string_view text);
std::string to_string(const Threshold& t);

struct AlgorithmConfig {
    std::size_t m = 2;
    std::size_t m_max = 0;  // 0 = M
    Threshold threshold;
    double lambda_k = 0.01;
    double lambda_v = 0.01;
    std::vector<std::size_t> dropout_ks;  // empty = 0, scaled reference counts, d'
    double sigma = 0.0;                   // 0 = 3x embedding RMS
    std::size_t samples = 16;
    std::uint64_t corruption_seed = 1;
};

struct ExperimentConfig {
    WorldConfig world;
    AlgorithmConfig algorithm;
};

// Sections [world], [generation], [algorithm]; unknown keys are rejected.
ExperimentConfig parse_experiment_config(std::string_view text);
std::string experiment_config_text(const ExperimentConfig& config);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace loco::cli
