#include <doctest.h>

#include <cmath>

#include "loco/errors.hpp"
#include "loco/locogen.hpp"
#include "loco/world.hpp"

namespace {

const loco::PlantedWorld& default_world() {
    static const loco::PlantedWorld w = loco::build_world(loco::WorldConfig{});
    return w;
}

loco::LocalizationReport sweep_attr(const loco::PlantedWorld& w, std::size_t attr, std::size_t m,
                                    std::size_t threads = 1) {
    return loco::sweep(w.model, w.schedule, w.prompts[attr], m, loco::attribute_scorer(w.attributes[attr]),
                       loco::SweepMode::suppress, w.config.generation(), threads);
}

}  // namespace

TEST_CASE("sweep enumerates every window") {
    const auto& w = default_world();
    const auto r = sweep_attr(w, 0, 2);
    REQUIRE(r.candidates.size() == 15);
    for (std::size_t j = 0; j < 15; ++j) {
        CHECK(r.candidates[j].j == j);
        CHECK(r.candidates[j].m == 2);
        CHECK(r.scores[j].size() == w.config.n_prompts);
        double s = 0.0;
        for (double v : r.scores[j]) s += v;
        CHECK(r.candidates[j].a_j == doctest::Approx(s / 8.0).epsilon(1e-15));
    }
    CHECK(r.layer_count == 16);
    CHECK(r.m == 2);
}

TEST_CASE("sweep at m = M has a single candidate") {
    const auto& w = default_world();
    const auto r = sweep_attr(w, 1, 16);
    REQUIRE(r.candidates.size() == 1);
    CHECK(r.best.j == 0);
    CHECK(r.best.a_j == r.candidates[0].a_j);
    CHECK_THROWS_AS(sweep_attr(w, 1, 17), loco::ArgumentError);
    CHECK_THROWS_AS(sweep_attr(w, 1, 0), loco::ArgumentError);
}

TEST_CASE("sweep recovers the planted window") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        loco::WorldConfig c;
        c.seed = seed;
        const auto w = loco::build_world(c);
        for (std::size_t a : {0, 1}) {
            const auto r = sweep_attr(w, a, 2);
            CHECK(r.best.j == 8);
            CHECK(r.best.a_j <= 10.0);
        }
    }
}

TEST_CASE("sweep: only windows covering the truth window suppress the attribute") {
    const auto& w = default_world();
    for (std::size_t m : {2, 3, 4}) {
        const auto r = sweep_attr(w, 0, m);
        for (const auto& c : r.candidates) {
            const bool covers = c.j <= 8 && c.j + m >= 10;
            if (covers) {
                CHECK(c.a_j <= 10.0);
            } else {
                CHECK(c.a_j >= 90.0);
            }
        }
    }
}

TEST_CASE("sweep with identical pairs scores the clean baseline everywhere") {
    const auto& w = default_world();
    std::vector<loco::PromptPair> same;
    for (const auto& p : w.prompts[0]) same.push_back({p.with_attr, p.with_attr});
    const auto scorer = loco::attribute_scorer(w.attributes[0]);
    const auto r = loco::sweep(w.model, w.schedule, same, 3, scorer, loco::SweepMode::suppress, w.config.generation());
    const double base = loco::baseline_score(w.model, w.schedule, same, scorer, loco::SweepMode::suppress,
                                             w.config.generation());
    for (const auto& c : r.candidates) CHECK(std::abs(c.a_j - base) <= 1e-9);
    CHECK(r.best.j == 0);
}

TEST_CASE("sweep: parallel and serial reports are byte-identical") {
    const auto& w = default_world();
    const auto serial = sweep_attr(w, 0, 2, 1);
    const auto parallel = sweep_attr(w, 0, 2, 4);
    CHECK(loco::report_csv(serial) == loco::report_csv(parallel));
    CHECK(loco::report_jsonl(serial, "style0") == loco::report_jsonl(parallel, "style0"));
}

TEST_CASE("update mode finds the window that writes the updated fact") {
    const auto& w = default_world();
    const std::size_t fact = w.attribute_index("fact0");
    const auto& target = w.attributes[*w.attributes[fact].target];
    const auto r = loco::sweep(w.model, w.schedule, w.prompts[fact], 2, loco::attribute_scorer(target),
                               loco::SweepMode::update, w.config.generation());
    CHECK(r.best.j == 8);
    CHECK(r.best.a_j >= 85.0);
}

TEST_CASE("search_m") {
    const auto& w = default_world();
    const auto scorer = loco::attribute_scorer(w.attributes[0]);
    const auto cfg = w.config.generation();
    const auto found = loco::search_m(w.model, w.schedule, w.prompts[0], scorer, loco::SweepMode::suppress,
                                      20.0, 4, cfg);
    REQUIRE(found.has_value());
    CHECK(found->m == 2);
    CHECK(found->report.best.j == 8);

    const double base = loco::baseline_score(w.model, w.schedule, w.prompts[0], scorer,
                                             loco::SweepMode::suppress, cfg);
    CHECK(base >= 90.0);
    const auto rel = loco::search_m(w.model, w.schedule, w.prompts[0], scorer, loco::SweepMode::suppress,
                                    0.5 * base, 4, cfg);
    REQUIRE(rel.has_value());
    CHECK(rel->m == 2);

    CHECK_FALSE(loco::search_m(w.model, w.schedule, w.prompts[0], scorer, loco::SweepMode::suppress, 0.0, 3, cfg)
                    .has_value());
    CHECK_THROWS_AS(loco::search_m(w.model, w.schedule, w.prompts[0], scorer, loco::SweepMode::suppress, 20.0, 0, cfg),
                    loco::ArgumentError);
    CHECK_THROWS_AS(loco::search_m(w.model, w.schedule, w.prompts[0], scorer, loco::SweepMode::suppress, 120.0, 2, cfg),
                    loco::ArgumentError);
}

TEST_CASE("report formats round trip") {
    const auto& w = default_world();
    const auto r = sweep_attr(w, 1, 3);
    const std::string csv = loco::report_csv(r);
    const auto back = loco::parse_report_csv(csv, loco::SweepMode::suppress, 16);
    CHECK(loco::report_csv(back) == csv);
    CHECK(back.best.j == r.best.j);
    CHECK(back.best.a_j == r.best.a_j);
    CHECK(back.m == 3);
    CHECK(loco::report_jsonl(back, "object0") == loco::report_jsonl(r, "object0"));
    CHECK_THROWS_AS(loco::parse_report_csv("x,y\n", loco::SweepMode::suppress, 16), loco::IoError);
    CHECK_THROWS_AS(loco::parse_report_csv("j,m,a_j\n1,2,abc\n", loco::SweepMode::suppress, 16), loco::IoError);
    CHECK_THROWS_AS(loco::parse_report_csv("j,m,a_j\n", loco::SweepMode::suppress, 16), loco::IoError);
}

TEST_CASE("reference window table") {
    const auto table = loco::reference_windows();
    auto m_of = [&](const std::string& name) {
        for (const auto& r : table)
            if (name == r.model) return r.m;
        return std::size_t{0};
    };
    CHECK(m_of("SD-v1-5") == 2);
    CHECK(m_of("SD-v2-1") == 3);
    CHECK(m_of("SD-XL") == 5);
}

TEST_CASE("prompt latents depend only on seed and prompt index") {
    CHECK(loco::prompt_latent(8, 1, 3) == loco::prompt_latent(8, 1, 3));
    CHECK(loco::prompt_latent(8, 1, 3) != loco::prompt_latent(8, 1, 4));
    CHECK(loco::prompt_latent(8, 1, 3) != loco::prompt_latent(8, 2, 3));
    CHECK(loco::parse_sweep_mode("update") == loco::SweepMode::update);
    CHECK_THROWS_AS(loco::parse_sweep_mode("both"), loco::ArgumentError);
}
