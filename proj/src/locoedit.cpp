#include "loco/locoedit.hpp"

#include <algorithm>
#include <cmath>

#include "loco/config.hpp"
#include "loco/errors.hpp"
#include "loco/locogen.hpp"
#include "loco/util.hpp"

namespace loco {

void EditSpec::validate(const DenoiserModel& model) const {
    if (target_layers.empty()) throw ArgumentError("edit needs at least one target layer");
    for (std::size_t l : target_layers) {
        if (l >= model.layer_count()) {
            throw ArgumentError("edit target layer " + std::to_string(l) + " >= layer count " +
                                std::to_string(model.layer_count()));
        }
    }
    if (x_orig.rows() != x_target.rows() || x_orig.cols() != x_target.cols()) {
        throw ShapeError("x_orig " + x_orig.shape_string() + " and x_target " +
                         x_target.shape_string() + " differ");
    }
    if (x_orig.rows() == 0) throw ArgumentError("edit needs at least one embedding row");
    if (x_orig.cols() != model.d_text()) {
        throw ShapeError("edit embeddings have width " + std::to_string(x_orig.cols()) +
                         ", model d_text is " + std::to_string(model.d_text()));
    }
    if (!(lambda_k > 0.0) || !(lambda_v > 0.0) || !std::isfinite(lambda_k) || !std::isfinite(lambda_v))
        throw ArgumentError("lambda_k and lambda_v must be finite and > 0");
}

EmbeddingStacks collect_embeddings(std::span<const PromptPair> prompts) {
    if (prompts.empty()) throw ArgumentError("collect_embeddings: no prompt pairs");
    const std::size_t d = prompts.front().with_attr.tokens.cols();
    EmbeddingStacks out{Matrix(prompts.size(), d), Matrix(prompts.size(), d)};
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto& p = prompts[i];
        p.with_attr.validate();
        p.without_attr.validate();
        if (p.with_attr.tokens.cols() != d || p.without_attr.tokens.cols() != d) {
            throw ShapeError("collect_embeddings: prompt pair " + std::to_string(i) +
                             " has width other than " + std::to_string(d));
        }
        const auto a = p.with_attr.subject_row();
        const auto b = p.without_attr.subject_row();
        std::copy(a.begin(), a.end(), out.x_orig.row(i).begin());
        std::copy(b.begin(), b.end(), out.x_target.row(i).begin());
    }
    return out;
}

EditOutcome apply_edit(const DenoiserModel& model, const EditSpec& spec) {
    model.validate();
    spec.validate(model);
    std::vector<std::size_t> layers = spec.target_layers;
    std::sort(layers.begin(), layers.end());
    layers.erase(std::unique(layers.begin(), layers.end()), layers.end());

    EditOutcome outcome;
    outcome.edited = model;
    for (std::size_t l : layers) {
        const CrossAttentionLayer& src = model.layers[l];
        CrossAttentionLayer& dst = outcome.edited.layers[l];
        const Matrix y_k = matmul(spec.x_target, src.w_k);
        const Matrix y_v = matmul(spec.x_target, src.w_v);
        dst.w_k = ridge_solve(spec.x_orig, y_k, src.w_k, spec.lambda_k);
        dst.w_v = ridge_solve(spec.x_orig, y_v, src.w_v, spec.lambda_v);

        LayerEditStats stats;
        stats.layer = l;
        stats.key_delta = frobenius_norm(subtract(dst.w_k, src.w_k));
        stats.value_delta = frobenius_norm(subtract(dst.w_v, src.w_v));
        stats.key_residual = ridge_normal_residual(spec.x_orig, y_k, src.w_k, spec.lambda_k, dst.w_k);
        stats.value_residual =
            ridge_normal_residual(spec.x_orig, y_v, src.w_v, spec.lambda_v, dst.w_v);
        outcome.layers.push_back(stats);
    }
    return outcome;
}

SetScores score_set(const DenoiserModel& original, const DenoiserModel& edited,
                    const NoiseSchedule& schedule, const ScoredPromptSet& set,
                    const GenerationConfig& cfg, std::size_t threads) {
    if (set.prompts.empty()) throw ArgumentError("prompt set '" + set.name + "' is empty");
    const std::size_t N = set.prompts.size();
    std::vector<double> scores(2 * N);
    parallel_for(2 * N, threads, [&](std::size_t k) {
        const DenoiserModel& model = k < N ? original : edited;
        const std::size_t i = k % N;
        const Vector z_T = prompt_latent(model.d_latent(), cfg.seed, i);
        const Conditioning cond(model, LayerAssignment::clean(set.prompts[i]));
        scores[k] = attribute_score(sample(model, z_T, cond, schedule, cfg), set.attr);
    });
    SetScores out;
    out.name = set.name;
    for (std::size_t i = 0; i < N; ++i) {
        out.pre += scores[i];
        out.post += scores[N + i];
    }
    out.pre /= static_cast<double>(N);
    out.post /= static_cast<double>(N);
    out.delta = out.post - out.pre;
    return out;
}

EditEvaluation evaluate_edit(const DenoiserModel& original, const DenoiserModel& edited,
                             const NoiseSchedule& schedule, const ScoredPromptSet& edit_set,
                             std::span<const ScoredPromptSet> unrelated,
                             const GenerationConfig& cfg, std::size_t threads) {
    if (original.layer_count() != edited.layer_count() || original.d_latent() != edited.d_latent() ||
        original.d_text() != edited.d_text() || original.d_attn() != edited.d_attn()) {
        throw ShapeError("evaluate_edit: models differ in architecture");
    }
    EditEvaluation ev;
    ev.edited = score_set(original, edited, schedule, edit_set, cfg, threads);
    for (const auto& set : unrelated)
        ev.unrelated.push_back(score_set(original, edited, schedule, set, cfg, threads));
    return ev;
}

std::string edit_manifest(const EditSpec& spec, const EditOutcome& outcome,
                          const std::string& attribute, const std::string& prompt_set) {
    KeyValueFile f;
    std::string layers;
    for (std::size_t l : spec.target_layers) layers += (layers.empty() ? "" : ",") + std::to_string(l);
    f.set("edit", "attribute", attribute);
    f.set("edit", "prompt_set", prompt_set);
    f.set("edit", "target_layers", layers);
    f.set("edit", "lambda_k", format_double(spec.lambda_k));
    f.set("edit", "lambda_v", format_double(spec.lambda_v));
    f.set("edit", "rows", std::to_string(spec.x_orig.rows()));
    f.set("edit", "weights", "weights.loco1");
    for (const auto& s : outcome.layers) {
        const std::string sec = "layer." + std::to_string(s.layer);
        f.set(sec, "key_delta", format_double(s.key_delta));
        f.set(sec, "value_delta", format_double(s.value_delta));
        f.set(sec, "key_residual", format_double(s.key_residual));
        f.set(sec, "value_residual", format_double(s.value_residual));
    }
    return "# closed-form edit manifest\n" + f.serialize();
}

}  // namespace loco
