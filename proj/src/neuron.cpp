#include "loco/neuron.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "loco/config.hpp"
#include "loco/errors.hpp"
#include "loco/locogen.hpp"
#include "loco/util.hpp"

namespace loco {

namespace {

const Matrix& matrix_of(const CrossAttentionLayer& layer, MatrixKind kind) {
    return kind == MatrixKind::key ? layer.w_k : layer.w_v;
}

}  // namespace

const char* to_string(MatrixKind kind) { return kind == MatrixKind::key ? "key" : "value"; }

MatrixKind parse_matrix_kind(std::string_view s) {
    if (s == "key") return MatrixKind::key;
    if (s == "value") return MatrixKind::value;
    throw ArgumentError("unknown matrix kind '" + std::string(s) + "' (expected key or value)");
}

bool DropoutMask::empty() const {
    return std::all_of(entries.begin(), entries.end(), [](const MaskEntry& e) { return e.neurons.empty(); });
}

void DropoutMask::validate(const DenoiserModel& model) const {
    for (const auto& e : entries) {
        if (e.layer >= model.layer_count()) {
            throw ArgumentError("mask layer " + std::to_string(e.layer) + " >= layer count " +
                                std::to_string(model.layer_count()));
        }
        const std::size_t width = matrix_of(model.layers[e.layer], e.kind).cols();
        for (std::size_t i : e.neurons) {
            if (i >= width) {
                throw ArgumentError("mask neuron " + std::to_string(i) + " >= width " +
                                    std::to_string(width) + " of layer " + std::to_string(e.layer) +
                                    " " + to_string(e.kind));
            }
        }
    }
}

std::vector<std::size_t> rank_order(std::span<const double> z) {
    std::vector<std::size_t> order(z.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(z[a]) > std::abs(z[b]); });
    return order;
}

std::vector<NeuronRanking> rank_neurons(const DenoiserModel& model,
                                        std::span<const std::size_t> layers, MatrixKind kind,
                                        std::span<const Vector> with_attr,
                                        std::span<const Vector> without_attr) {
    if (with_attr.size() < 2 || without_attr.size() < 2) {
        throw ArgumentError("rank_neurons: each population needs at least 2 embeddings (got " +
                            std::to_string(with_attr.size()) + " and " +
                            std::to_string(without_attr.size()) + ")");
    }
    std::vector<NeuronRanking> out;
    for (std::size_t l : layers) {
        if (l >= model.layer_count()) {
            throw ArgumentError("rank_neurons: layer " + std::to_string(l) + " >= layer count " +
                                std::to_string(model.layer_count()));
        }
        const Matrix& w = matrix_of(model.layers[l], kind);
        std::vector<Vector> act_a, act_b;
        for (const auto& e : with_attr) act_a.push_back(row_times(e, w));
        for (const auto& e : without_attr) act_b.push_back(row_times(e, w));
        NeuronRanking r;
        r.layer = l;
        r.kind = kind;
        r.z = two_sample_z(act_a, act_b);
        r.order = rank_order(r.z);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<Vector> subject_rows(std::span<const PromptEmbedding> prompts) {
    std::vector<Vector> rows;
    rows.reserve(prompts.size());
    for (const auto& p : prompts) {
        p.validate();
        const auto r = p.subject_row();
        rows.emplace_back(r.begin(), r.end());
    }
    return rows;
}

DenoiserModel apply_dropout(const DenoiserModel& model, const DropoutMask& mask) {
    mask.validate(model);
    DenoiserModel out = model;
    for (const auto& e : mask.entries) {
        auto& layer = out.layers[e.layer];
        Matrix& w = e.kind == MatrixKind::key ? layer.w_k : layer.w_v;
        for (std::size_t c : e.neurons)
            for (std::size_t r = 0; r < w.rows(); ++r) w(r, c) = 0.0;
    }
    return out;
}

DropoutMask top_k_mask(std::span<const NeuronRanking> rankings, std::size_t k) {
    DropoutMask mask;
    for (const auto& r : rankings) {
        if (k > r.order.size()) {
            throw ArgumentError("top_k_mask: k = " + std::to_string(k) + " exceeds width " +
                                std::to_string(r.order.size()));
        }
        MaskEntry e;
        e.layer = r.layer;
        e.kind = r.kind;
        e.neurons.assign(r.order.begin(), r.order.begin() + static_cast<std::ptrdiff_t>(k));
        std::sort(e.neurons.begin(), e.neurons.end());
        mask.entries.push_back(std::move(e));
    }
    return mask;
}

std::vector<std::pair<std::size_t, double>> dropout_curve(
    const DenoiserModel& model, const NoiseSchedule& schedule,
    std::span<const NeuronRanking> rankings, std::span<const std::size_t> ks,
    std::span<const PromptEmbedding> prompts, const AttributeSpec& attr,
    const GenerationConfig& cfg, std::size_t threads) {
    if (!std::is_sorted(ks.begin(), ks.end())) throw ArgumentError("dropout_curve: ks must be ascending");
    if (prompts.empty()) throw ArgumentError("dropout_curve: no prompts");
    std::vector<DenoiserModel> masked;
    masked.reserve(ks.size());
    for (std::size_t k : ks) masked.push_back(apply_dropout(model, top_k_mask(rankings, k)));

    const std::size_t N = prompts.size();
    std::vector<double> scores(ks.size() * N);
    parallel_for(scores.size(), threads, [&](std::size_t job) {
        const DenoiserModel& m = masked[job / N];
        const std::size_t i = job % N;
        const Vector z_T = prompt_latent(m.d_latent(), cfg.seed, i);
        const Conditioning cond(m, LayerAssignment::clean(prompts[i]));
        scores[job] = attribute_score(sample(m, z_T, cond, schedule, cfg), attr);
    });
    std::vector<std::pair<std::size_t, double>> curve;
    for (std::size_t q = 0; q < ks.size(); ++q) {
        double s = 0.0;
        for (std::size_t i = 0; i < N; ++i) s += scores[q * N + i];
        curve.emplace_back(ks[q], s / static_cast<double>(N));
    }
    return curve;
}

std::size_t scaled_neuron_count(std::size_t reference_count, std::size_t d) {
    const double scaled = static_cast<double>(reference_count) * static_cast<double>(d) /
                          static_cast<double>(kReferenceNeuronWidth);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(scaled)));
}

std::string ranking_csv(std::span<const NeuronRanking> rankings) {
    std::string out = "layer,kind,neuron,z,rank\n";
    for (const auto& r : rankings) {
        std::vector<std::size_t> rank_of(r.order.size());
        for (std::size_t k = 0; k < r.order.size(); ++k) rank_of[r.order[k]] = k;
        for (std::size_t i = 0; i < r.z.size(); ++i) {
            out += std::to_string(r.layer) + "," + to_string(r.kind) + "," + std::to_string(i) + "," +
                   format_double(r.z[i]) + "," + std::to_string(rank_of[i]) + "\n";
        }
    }
    return out;
}

std::vector<NeuronRanking> parse_ranking_csv(std::string_view csv) {
    std::istringstream in{std::string(csv)};
    std::string line;
    if (!std::getline(in, line) || line != "layer,kind,neuron,z,rank")
        throw IoError("ranking CSV: missing header");
    std::vector<NeuronRanking> out;
    std::vector<std::vector<std::size_t>> ranks;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ',')) f.push_back(field);
        const std::string where = "ranking CSV line " + std::to_string(line_no) + ": ";
        if (f.size() != 5) throw IoError(where + "expected 5 fields");
        try {
            const std::size_t layer = parse_u64(f[0], "layer");
            const MatrixKind kind = parse_matrix_kind(f[1]);
            const std::size_t neuron = parse_u64(f[2], "neuron");
            if (out.empty() || out.back().layer != layer || out.back().kind != kind) {
                out.push_back({layer, kind, {}, {}});
                ranks.emplace_back();
            }
            if (neuron != out.back().z.size()) throw IoError(where + "neurons out of order");
            out.back().z.push_back(parse_double(f[3], "z"));
            ranks.back().push_back(parse_u64(f[4], "rank"));
        } catch (const ArgumentError& e) {
            throw IoError(where + e.what());
        }
    }
    for (std::size_t q = 0; q < out.size(); ++q) {
        auto& r = out[q];
        r.order.assign(r.z.size(), r.z.size());
        for (std::size_t i = 0; i < r.z.size(); ++i) {
            const std::size_t k = ranks[q][i];
            if (k >= r.z.size() || r.order[k] != r.z.size()) throw IoError("ranking CSV: ranks are not a permutation");
            r.order[k] = i;
        }
    }
    return out;
}

std::string mask_text(const DropoutMask& mask) {
    std::string out = "# layer kind neuron...\n";
    for (const auto& e : mask.entries) {
        out += std::to_string(e.layer) + " " + to_string(e.kind);
        for (std::size_t i : e.neurons) out += " " + std::to_string(i);
        out += "\n";
    }
    return out;
}

DropoutMask parse_mask_text(std::string_view text) {
    DropoutMask mask;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::string layer, kind;
        if (!(ls >> layer)) continue;
        const std::string where = "mask line " + std::to_string(line_no) + ": ";
        if (!(ls >> kind)) throw IoError(where + "missing matrix kind");
        try {
            MaskEntry e;
            e.layer = parse_u64(layer, "layer");
            e.kind = parse_matrix_kind(kind);
            std::string idx;
            while (ls >> idx) e.neurons.push_back(parse_u64(idx, "neuron"));
            std::sort(e.neurons.begin(), e.neurons.end());
            e.neurons.erase(std::unique(e.neurons.begin(), e.neurons.end()), e.neurons.end());
            mask.entries.push_back(std::move(e));
        } catch (const ArgumentError& ex) {
            throw IoError(where + ex.what());
        }
    }
    return mask;
}

std::string curve_csv(const std::vector<std::pair<std::size_t, double>>& curve) {
    std::string out = "k,mean_score\n";
    for (const auto& [k, s] : curve) out += std::to_string(k) + "," + format_double(s) + "\n";
    return out;
}

std::vector<std::pair<std::size_t, double>> parse_curve_csv(std::string_view csv) {
    std::istringstream in{std::string(csv)};
    std::string line;
    if (!std::getline(in, line) || line != "k,mean_score") throw IoError("curve CSV: missing header");
    std::vector<std::pair<std::size_t, double>> curve;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        const std::string where = "curve CSV line " + std::to_string(line_no) + ": ";
        if (comma == std::string::npos) throw IoError(where + "expected 2 fields");
        try {
            curve.emplace_back(parse_u64(line.substr(0, comma), "k"), parse_double(line.substr(comma + 1), "mean_score"));
        } catch (const ArgumentError& e) {
            throw IoError(where + e.what());
        }
    }
    return curve;
}

}  // namespace loco
