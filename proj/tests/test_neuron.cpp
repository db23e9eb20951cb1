#include <doctest.h>

#include <algorithm>
#include <random>

#include "fixtures.hpp"
#include "loco/errors.hpp"
#include "loco/locogen.hpp"
#include "loco/neuron.hpp"
#include "loco/world.hpp"
#include "oracles.hpp"

using loco::MatrixKind;
using loco::Vector;

namespace {

const loco::PlantedWorld& default_world() {
    static const loco::PlantedWorld w = loco::build_world(loco::WorldConfig{});
    return w;
}

std::vector<Vector> random_population(std::size_t n, std::size_t d, std::mt19937_64& rng, double shift) {
    std::vector<Vector> out;
    for (std::size_t i = 0; i < n; ++i) {
        Vector v = oracle::random_vector(d, rng);
        for (double& x : v) x += shift;
        out.push_back(v);
    }
    return out;
}

std::vector<loco::PromptEmbedding> with_prompts(const loco::PlantedWorld& w, std::size_t a) {
    std::vector<loco::PromptEmbedding> out;
    for (const auto& p : w.prompts[a]) out.push_back(p.with_attr);
    return out;
}

std::vector<loco::PromptEmbedding> without_prompts(const loco::PlantedWorld& w, std::size_t a) {
    std::vector<loco::PromptEmbedding> out;
    for (const auto& p : w.prompts[a]) out.push_back(p.without_attr);
    return out;
}

double mean_clean_score(const loco::PlantedWorld& w, const loco::DenoiserModel& m, std::size_t a) {
    const auto cfg = w.config.generation();
    double s = 0.0;
    for (std::size_t i = 0; i < w.prompts[a].size(); ++i) {
        const Vector z = loco::sample(m, loco::prompt_latent(w.config.d_latent, cfg.seed, i),
                                      loco::LayerAssignment::clean(w.prompts[a][i].with_attr), w.schedule, cfg);
        s += loco::attribute_score(z, w.attributes[a]);
    }
    return s / static_cast<double>(w.prompts[a].size());
}

}  // namespace

TEST_CASE("rank_order breaks ties by index") {
    const Vector z = {1.0, -3.0, 3.0, 0.0, -1.0};
    CHECK(loco::rank_order(z) == std::vector<std::size_t>{1, 2, 0, 4, 3});
}

TEST_CASE("rank_neurons: identical populations") {
    std::mt19937_64 rng(1);
    fixture::Dims d;
    const auto m = fixture::random_model(d, rng);
    const auto pop = random_population(6, d.d_text, rng, 0.5);
    const std::vector<std::size_t> layers{0, 2};
    const auto r = loco::rank_neurons(m, layers, MatrixKind::value, pop, pop);
    REQUIRE(r.size() == 2);
    for (const auto& x : r) {
        for (double z : x.z) CHECK(z == 0.0);
        for (std::size_t i = 0; i < x.order.size(); ++i) CHECK(x.order[i] == i);
    }
}

TEST_CASE("rank_neurons matches the scalar statistics oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        fixture::Dims d;
        const auto m = fixture::random_model(d, rng);
        const auto a = random_population(5 + seed % 4, d.d_text, rng, 0.3);
        const auto b = random_population(4 + seed % 3, d.d_text, rng, -0.2);
        for (MatrixKind kind : {MatrixKind::key, MatrixKind::value}) {
            const std::vector<std::size_t> layers{1};
            const auto r = loco::rank_neurons(m, layers, kind, a, b);
            const auto& w = kind == MatrixKind::key ? m.layers[1].w_k : m.layers[1].w_v;
            for (std::size_t c = 0; c < w.cols(); ++c) {
                std::vector<double> ca, cb;
                for (const auto& e : a) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < w.rows(); ++k) s += e[k] * w(k, c);
                    ca.push_back(s);
                }
                for (const auto& e : b) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < w.rows(); ++k) s += e[k] * w(k, c);
                    cb.push_back(s);
                }
                CHECK(std::abs(r[0].z[c] - oracle::welch_z(ca, cb)) <= 1e-12);
            }
        }
    }
}

TEST_CASE("rank_neurons: invariant to sample order and positive column scaling") {
    std::mt19937_64 rng(3);
    fixture::Dims d;
    auto m = fixture::random_model(d, rng);
    auto a = random_population(7, d.d_text, rng, 0.4);
    const auto b = random_population(6, d.d_text, rng, 0.0);
    const std::vector<std::size_t> layers{0};
    const auto base = loco::rank_neurons(m, layers, MatrixKind::value, a, b);

    std::reverse(a.begin(), a.end());
    const auto perm = loco::rank_neurons(m, layers, MatrixKind::value, a, b);
    for (std::size_t c = 0; c < base[0].z.size(); ++c) CHECK(std::abs(perm[0].z[c] - base[0].z[c]) <= 1e-12);

    for (std::size_t c = 0; c < m.layers[0].w_v.cols(); ++c)
        for (std::size_t r = 0; r < m.layers[0].w_v.rows(); ++r) m.layers[0].w_v(r, c) *= 3.0 + static_cast<double>(c);
    const auto scaled = loco::rank_neurons(m, layers, MatrixKind::value, a, b);
    for (std::size_t c = 0; c < base[0].z.size(); ++c)
        CHECK(scaled[0].z[c] == doctest::Approx(base[0].z[c]).epsilon(1e-12));
    CHECK(scaled[0].order == base[0].order);
}

TEST_CASE("rank_neurons: errors") {
    std::mt19937_64 rng(4);
    fixture::Dims d;
    const auto m = fixture::random_model(d, rng);
    const auto a = random_population(3, d.d_text, rng, 0.0);
    const std::vector<Vector> one{a[0]};
    const std::vector<std::size_t> bad{7}, ok{0};
    CHECK_THROWS_AS(loco::rank_neurons(m, bad, MatrixKind::value, a, a), loco::ArgumentError);
    CHECK_THROWS_AS(loco::rank_neurons(m, ok, MatrixKind::value, one, a), loco::ArgumentError);
    CHECK_THROWS_AS(loco::parse_matrix_kind("query"), loco::ArgumentError);
}

TEST_CASE("planted carrier neuron ranks first in the truth window") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        loco::WorldConfig c;
        c.seed = seed;
        const auto w = loco::build_world(c);
        for (std::size_t a : {0, 1}) {
            const auto ta = loco::subject_rows(with_prompts(w, a));
            const auto tb = loco::subject_rows(without_prompts(w, a));
            const std::vector<std::size_t> layers{8, 9};
            const auto r = loco::rank_neurons(w.model, layers, MatrixKind::value, ta, tb);
            for (const auto& x : r) CHECK(x.order[0] == w.attributes[a].image_neuron);
        }
    }
}

TEST_CASE("apply_dropout: empty mask and total ablation") {
    std::mt19937_64 rng(5);
    fixture::Dims d;
    const auto m = fixture::random_model(d, rng);
    const auto p = fixture::random_prompt(d, rng);
    const auto s = loco::NoiseSchedule::linear(8);
    loco::GenerationConfig cfg;
    cfg.steps = 8;
    const Vector z_T = loco::initial_latent(d.d_latent, 9);

    loco::DropoutMask empty;
    empty.entries.push_back({1, MatrixKind::value, {}});
    CHECK(empty.empty());
    const auto same = loco::apply_dropout(m, empty);
    CHECK(loco::sample(same, z_T, loco::LayerAssignment::clean(p), s, cfg) ==
          loco::sample(m, z_T, loco::LayerAssignment::clean(p), s, cfg));

    loco::DropoutMask all;
    for (std::size_t l = 0; l < d.layers; ++l) {
        loco::MaskEntry e{l, MatrixKind::value, {}};
        for (std::size_t i = 0; i < d.d_latent; ++i) e.neurons.push_back(i);
        all.entries.push_back(e);
    }
    const auto cut = loco::apply_dropout(m, all);
    CHECK(loco::predict_noise(cut, z_T, loco::LayerAssignment::clean(p), 3) == loco::predict_noise(m, z_T, 3));

    loco::DropoutMask bad;
    bad.entries.push_back({0, MatrixKind::key, {d.d_attn}});
    CHECK_THROWS_AS(loco::apply_dropout(m, bad), loco::ArgumentError);
    bad.entries = {{d.layers, MatrixKind::key, {0}}};
    CHECK_THROWS_AS(loco::apply_dropout(m, bad), loco::ArgumentError);
}

TEST_CASE("dropout curve on the default world") {
    const auto& w = default_world();
    const std::size_t a = 0;
    const std::vector<std::size_t> layers{8, 9};
    const auto r = loco::rank_neurons(w.model, layers, MatrixKind::value, loco::subject_rows(with_prompts(w, a)),
                                      loco::subject_rows(without_prompts(w, a)));
    const std::size_t dv = w.config.d_latent;
    const std::vector<std::size_t> ks{0, 1, 2, 3, 8, dv};
    const auto prompts = with_prompts(w, a);
    const auto curve = loco::dropout_curve(w.model, w.schedule, r, ks, prompts, w.attributes[a], w.config.generation());
    REQUIRE(curve.size() == ks.size());

    const double clean = mean_clean_score(w, w.model, a);
    CHECK(curve.front().second == clean);
    for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].second <= curve[i - 1].second);

    loco::DropoutMask total;
    for (std::size_t l : layers) {
        loco::MaskEntry e{l, MatrixKind::value, {}};
        for (std::size_t i = 0; i < dv; ++i) e.neurons.push_back(i);
        total.entries.push_back(e);
    }
    CHECK(curve.back().second == mean_clean_score(w, loco::apply_dropout(w.model, total), a));

    // The scaled top-50 mask removes most of what the full window intervention removes.
    const std::size_t k50 = loco::scaled_neuron_count(50, dv);
    const auto masked = loco::apply_dropout(w.model, loco::top_k_mask(r, k50));
    const auto cfg = w.config.generation();
    double altered = 0.0;
    for (std::size_t i = 0; i < w.prompts[a].size(); ++i) {
        const auto& p = w.prompts[a][i];
        altered += loco::attribute_score(
            loco::sample(w.model, loco::prompt_latent(dv, cfg.seed, i),
                         loco::LayerAssignment::window(p.with_attr, p.without_attr, 8, 2), w.schedule, cfg),
            w.attributes[a]);
    }
    altered /= static_cast<double>(w.prompts[a].size());
    CHECK(clean - mean_clean_score(w, masked, a) >= 0.8 * (clean - altered));

    const std::vector<std::size_t> unsorted{3, 1};
    CHECK_THROWS_AS(loco::dropout_curve(w.model, w.schedule, r, unsorted, prompts, w.attributes[a], cfg),
                    loco::ArgumentError);
    CHECK_THROWS_AS(loco::top_k_mask(r, dv + 1), loco::ArgumentError);
}

TEST_CASE("scaled neuron counts") {
    CHECK(loco::scaled_neuron_count(50, 1280) == 50);
    CHECK(loco::scaled_neuron_count(30, 32) == 1);
    CHECK(loco::scaled_neuron_count(50, 32) == 1);
    CHECK(loco::scaled_neuron_count(100, 32) == 3);
    CHECK(loco::scaled_neuron_count(1, 4) == 1);
}

TEST_CASE("ranking CSV, mask and curve text round trip") {
    std::mt19937_64 rng(6);
    fixture::Dims d;
    const auto m = fixture::random_model(d, rng);
    const auto a = random_population(5, d.d_text, rng, 0.5);
    const auto b = random_population(5, d.d_text, rng, 0.0);
    const std::vector<std::size_t> layers{0, 2};
    const auto r = loco::rank_neurons(m, layers, MatrixKind::key, a, b);
    const std::string csv = loco::ranking_csv(r);
    const auto back = loco::parse_ranking_csv(csv);
    REQUIRE(back.size() == 2);
    CHECK(back[1].layer == 2);
    CHECK(back[1].z == r[1].z);
    CHECK(back[1].order == r[1].order);
    CHECK(loco::ranking_csv(back) == csv);

    const auto mask = loco::top_k_mask(r, 2);
    const std::string text = loco::mask_text(mask);
    const auto mask_back = loco::parse_mask_text(text);
    CHECK(loco::mask_text(mask_back) == text);
    REQUIRE(mask_back.entries.size() == 2);
    CHECK(mask_back.entries[0].neurons == mask.entries[0].neurons);
    CHECK(loco::parse_mask_text("# comment\n\n3 value 5 1 5\n").entries[0].neurons ==
          std::vector<std::size_t>{1, 5});

    CHECK(loco::curve_csv({{0, 99.5}, {3, 0.25}}) == "k,mean_score\n0,99.5\n3,0.25\n");
    const std::vector<std::pair<std::size_t, double>> curve{{0, 99.5}, {3, 1.0 / 3.0}};
    CHECK(loco::parse_curve_csv(loco::curve_csv(curve)) == curve);
    CHECK_THROWS_AS(loco::parse_curve_csv("k,score\n"), loco::IoError);
    CHECK_THROWS_AS(loco::parse_curve_csv("k,mean_score\n1;2\n"), loco::IoError);

    CHECK_THROWS_AS(loco::parse_ranking_csv("nope\n"), loco::IoError);
    CHECK_THROWS_AS(loco::parse_ranking_csv("layer,kind,neuron,z,rank\n0,key,0,1.0\n"), loco::IoError);
    CHECK_THROWS_AS(loco::parse_ranking_csv("layer,kind,neuron,z,rank\n0,key,0,1.0,0\n0,key,1,2.0,0\n"),
                    loco::IoError);
    CHECK_THROWS_AS(loco::parse_mask_text("1\n"), loco::IoError);
    CHECK_THROWS_AS(loco::parse_mask_text("1 query 3\n"), loco::IoError);
}
