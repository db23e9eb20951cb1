#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <sys/wait.h>

#include "loco/cli.hpp"
#include "loco/config.hpp"
#include "loco/errors.hpp"
#include "loco/neuron.hpp"
#include "loco/trace.hpp"
#include "loco/util.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result locolab(std::vector<std::string> args) {
    args.insert(args.begin(), "locolab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Result r;
    r.code = loco::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "loco_cli_test" / name;
    fs::remove_all(p);
    fs::create_directories(p.parent_path());
    return p.string();
}

const std::string& default_world_dir() {
    static const std::string dir = [] {
        const std::string d = scratch("default_world");
        REQUIRE(locolab({"plant", "--out", d}).code == 0);
        return d;
    }();
    return dir;
}

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("threshold parsing") {
    const auto rel = loco::cli::parse_threshold("50%rel");
    CHECK(rel.relative);
    CHECK(rel.resolve(80.0) == 40.0);
    const auto abs = loco::cli::parse_threshold("20");
    CHECK_FALSE(abs.relative);
    CHECK(abs.resolve(80.0) == 20.0);
    CHECK(loco::cli::to_string(rel) == "50%rel");
    CHECK_THROWS_AS(loco::cli::parse_threshold("150"), loco::ArgumentError);
    CHECK_THROWS_AS(loco::cli::parse_threshold("%rel"), loco::ArgumentError);
    CHECK_THROWS_AS(loco::cli::parse_threshold("half"), loco::ArgumentError);
}

TEST_CASE("experiment config parsing") {
    const auto c = loco::cli::parse_experiment_config(
        "# comment\n[world]\nseed = 9\nredundancy = redundant\n[generation]\nguidance_scale = 5\n"
        "[algorithm]\nthreshold = 20\ndropout_ks = 0,1,4\n");
    CHECK(c.world.seed == 9);
    CHECK(c.world.redundancy == loco::Redundancy::redundant);
    CHECK(c.world.guidance_scale == 5.0);
    CHECK_FALSE(c.algorithm.threshold.relative);
    CHECK(c.algorithm.dropout_ks == std::vector<std::size_t>{0, 1, 4});
    const std::string text = loco::cli::experiment_config_text(c);
    CHECK(loco::cli::experiment_config_text(loco::cli::parse_experiment_config(text)) == text);

    CHECK_THROWS_AS(loco::cli::parse_experiment_config("[world]\nlayerz = 3\n"), loco::ArgumentError);
    CHECK_THROWS_AS(loco::cli::parse_experiment_config("[sampler]\nsteps = 3\n"), loco::ArgumentError);
    CHECK_THROWS_AS(loco::cli::parse_experiment_config("[world]\nj_star = 15\n"), loco::ArgumentError);
    CHECK_THROWS_AS(loco::cli::parse_experiment_config("[world]\nseed = 1\nseed = 2\n"), loco::ArgumentError);
    CHECK_THROWS_AS(loco::cli::parse_experiment_config("[algorithm]\nlambda_k = 0\n"), loco::ArgumentError);
    CHECK_THROWS_AS(loco::cli::parse_experiment_config("[algorithm]\ndropout_ks = 3,1\n"), loco::ArgumentError);
    CHECK_THROWS_AS(loco::cli::parse_experiment_config("[world]\nseed = 1\n[generation]\nseed = 2\n"),
                    loco::ArgumentError);
}

TEST_CASE("plant is deterministic and echoes the truth window") {
    const std::string a = scratch("plant_a"), b = scratch("plant_b");
    REQUIRE(locolab({"plant", "--out", a}).code == 0);
    REQUIRE(locolab({"plant", "--out", b}).code == 0);
    for (const char* f : {"weights.loco1", "world.manifest", "experiment.conf"})
        CHECK(loco::read_file(a + "/" + f) == loco::read_file(b + "/" + f));
    const auto manifest = loco::KeyValueFile::parse(loco::read_file(a + "/world.manifest"));
    CHECK(manifest.get("truth", "start") == "8");
    CHECK(manifest.get("truth", "length") == "2");
}

TEST_CASE("plant rejects invalid configs") {
    const std::string dir = scratch("bad_config");
    fs::create_directories(dir);
    loco::write_file(dir + "/bad.conf", "[world]\nj_star = 15\n");
    const auto r = locolab({"plant", "--config", dir + "/bad.conf", "--out", dir + "/w"});
    CHECK(r.code == loco::cli::kExitUsage);
    CHECK(contains(r.err, "j_star + m_star <= M"));

    loco::write_file(dir + "/unknown.conf", "[world]\nwidth = 3\n");
    const auto u = locolab({"plant", "--config", dir + "/unknown.conf", "--out", dir + "/w"});
    CHECK(u.code == loco::cli::kExitUsage);
    CHECK(contains(u.err, "width"));

    CHECK(locolab({"plant", "--config", dir + "/missing.conf", "--out", dir + "/w"}).code == loco::cli::kExitIo);
}

TEST_CASE("usage errors") {
    CHECK(locolab({}).code == loco::cli::kExitUsage);
    CHECK(locolab({"frobnicate"}).code == loco::cli::kExitUsage);
    CHECK(locolab({"localize", "--world", default_world_dir()}).code == loco::cli::kExitUsage);
    CHECK(locolab({"localize", "--world", default_world_dir(), "--attr", "nope", "--m", "2", "--out",
                   scratch("nope")}).code == loco::cli::kExitUsage);
    CHECK(locolab({"localize", "--world", default_world_dir(), "--attr", "style0", "--m", "2", "--search-m",
                   "--out", scratch("both")}).code == loco::cli::kExitUsage);
    CHECK(locolab({"--help"}).code == loco::cli::kExitOk);
}

TEST_CASE("missing world is an I/O error") {
    const auto r = locolab({"localize", "--world", scratch("no_world"), "--attr", "style0", "--m", "2", "--out",
                            scratch("no_world_out")});
    CHECK(r.code == loco::cli::kExitIo);
    CHECK_FALSE(r.err.empty());
}

TEST_CASE("localize finds the planted window and reruns are byte-identical") {
    const std::string a = scratch("loc_a"), b = scratch("loc_b");
    const auto r = locolab({"localize", "--world", default_world_dir(), "--attr", "style0", "--m", "2", "--out", a});
    REQUIRE(r.code == 0);
    CHECK(contains(r.out, "best j=8 m=2"));
    REQUIRE(locolab({"localize", "--world", default_world_dir(), "--attr", "style0", "--m", "2", "--out", b}).code == 0);
    CHECK(loco::read_file(a + "/localization.csv") == loco::read_file(b + "/localization.csv"));
    CHECK(loco::read_file(a + "/localization.jsonl") == loco::read_file(b + "/localization.jsonl"));

    const std::string full = scratch("loc_full");
    REQUIRE(locolab({"localize", "--world", default_world_dir(), "--attr", "object0", "--m", "16", "--out", full}).code == 0);
    const std::string csv = loco::read_file(full + "/localization.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("localize search") {
    const auto r = locolab({"localize", "--world", default_world_dir(), "--attr", "style0", "--search-m",
                            "--threshold", "50%rel", "--out", scratch("search")});
    REQUIRE(r.code == 0);
    CHECK(contains(r.out, "search: m=2"));
    CHECK(contains(r.out, "best j=8 m=2"));
    const auto none = locolab({"localize", "--world", default_world_dir(), "--attr", "style0", "--search-m",
                               "--threshold", "0", "--m-max", "2", "--out", scratch("search_none")});
    CHECK(none.code == loco::cli::kExitNoResult);
}

TEST_CASE("localize update mode on facts") {
    const auto r = locolab({"localize", "--world", default_world_dir(), "--attr", "fact0", "--m", "2", "--out",
                            scratch("fact")});
    REQUIRE(r.code == 0);
    CHECK(contains(r.out, "best j=8 m=2"));
}

TEST_CASE("edit") {
    const std::string loc = scratch("edit_loc");
    REQUIRE(locolab({"localize", "--world", default_world_dir(), "--attr", "object0", "--m", "2", "--out", loc}).code == 0);
    const std::string out = scratch("edit_out");
    const auto r = locolab({"edit", "--world", default_world_dir(), "--attr", "object0", "--from-report",
                            loc + "/localization.jsonl", "--out", out});
    REQUIRE(r.code == 0);
    const auto manifest = loco::KeyValueFile::parse(loco::read_file(out + "/edit.manifest"));
    CHECK(manifest.get("edit", "target_layers") == "8,9");
    const std::string scores = loco::read_file(out + "/edit_scores.csv");
    CHECK(scores.rfind("set,pre,post,delta\nobject0,", 0) == 0);
    // The edited world loads and localizes like any other world.
    CHECK(locolab({"localize", "--world", out, "--attr", "style0", "--m", "2", "--out", scratch("edit_reloc")}).code == 0);

    const std::string stiff = scratch("edit_stiff");
    REQUIRE(locolab({"edit", "--world", default_world_dir(), "--attr", "style0", "--layers", "8,9", "--lambda-k",
                     "1e9", "--lambda-v", "1e9", "--out", stiff}).code == 0);
    const auto m2 = loco::KeyValueFile::parse(loco::read_file(stiff + "/edit.manifest"));
    for (const char* sec : {"layer.8", "layer.9"}) {
        CHECK(m2.get_double(sec, "key_delta") <= 1e-6);
        CHECK(m2.get_double(sec, "value_delta") <= 1e-6);
    }
    CHECK(locolab({"edit", "--world", default_world_dir(), "--attr", "style0", "--out", scratch("edit_none")}).code ==
          loco::cli::kExitUsage);
    CHECK(locolab({"edit", "--world", default_world_dir(), "--attr", "style0", "--layers", "99", "--out",
                   scratch("edit_bad")}).code == loco::cli::kExitUsage);
}

TEST_CASE("neuron-rank") {
    const std::string out = scratch("neuron");
    const auto r = locolab({"neuron-rank", "--world", default_world_dir(), "--attr", "style0", "--out", out});
    REQUIRE(r.code == 0);
    CHECK(loco::read_file(out + "/ranking.csv").rfind("layer,kind,neuron,z,rank\n", 0) == 0);
    CHECK(loco::read_file(out + "/curve.csv").rfind("k,mean_score\n0,", 0) == 0);

    const std::string same = scratch("neuron_same");
    REQUIRE(locolab({"neuron-rank", "--world", default_world_dir(), "--attr", "style0", "--against", "with_attr",
                     "--ks", "0", "--out", same}).code == 0);
    const auto ranking = loco::parse_ranking_csv(loco::read_file(same + "/ranking.csv"));
    for (const auto& x : ranking)
        for (double z : x.z) CHECK(z == 0.0);
    CHECK(locolab({"neuron-rank", "--world", default_world_dir(), "--attr", "style0", "--ks", "0,99", "--out",
                   scratch("neuron_bad")}).code == loco::cli::kExitUsage);
}

TEST_CASE("trace on a redundant world reports every planted layer") {
    const std::string dir = scratch("redundant");
    fs::create_directories(dir);
    loco::write_file(dir + "/r.conf", "[world]\nredundancy = redundant\n");
    REQUIRE(locolab({"plant", "--config", dir + "/r.conf", "--out", dir + "/w"}).code == 0);
    const auto r = locolab({"trace", "--world", dir + "/w", "--attr", "style0", "--prompt", "0", "--out", dir + "/t"});
    REQUIRE(r.code == 0);
    const auto rep = loco::parse_trace_csv(loco::read_file(dir + "/t/trace.csv"));
    std::size_t above = 0;
    for (double v : rep.restoration) above += v >= 0.5 * rep.clean ? 1 : 0;
    CHECK(above >= 4);
    CHECK(contains(r.out, "8,9,11,13"));

    const auto again = locolab({"trace", "--world", dir + "/w", "--attr", "style0", "--prompt", "0", "--out", dir + "/t2"});
    REQUIRE(again.code == 0);
    CHECK(loco::read_file(dir + "/t/trace.csv") == loco::read_file(dir + "/t2/trace.csv"));
    CHECK(locolab({"trace", "--world", dir + "/w", "--attr", "style0", "--prompt", "99", "--out", dir + "/t3"}).code ==
          loco::cli::kExitUsage);
}

TEST_CASE("report merges tables") {
    const std::string loc = scratch("report_loc");
    REQUIRE(locolab({"localize", "--world", default_world_dir(), "--attr", "style0", "--m", "15", "--out", loc}).code == 0);
    const std::string out = scratch("report") + ".csv";
    REQUIRE(locolab({"report", loc, "--out", out}).code == 0);
    const std::string merged = loco::read_file(out);
    CHECK(merged.rfind("source,experiment,series,x,variable,value\n", 0) == 0);
    CHECK(contains(merged, "report_loc,localization,m=15,0,a_j,"));
    CHECK(contains(merged, "report_loc,localization,m=15,1,s_7,"));
    CHECK(locolab({"report", scratch("report_empty_missing"), "--out", out}).code == loco::cli::kExitIo);
}

TEST_CASE("the installed binary reports exit codes") {
    const char* bin = std::getenv("LOCOLAB_BIN");
    if (bin == nullptr) return;
    const std::string dir = scratch("binary");
    const int ok = std::system((std::string(bin) + " plant --out " + dir + " > /dev/null").c_str());
    CHECK(WEXITSTATUS(ok) == 0);
    const int usage = std::system((std::string(bin) + " plant > /dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(usage) == 1);
}
