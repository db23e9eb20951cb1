#include "loco/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "loco/config.hpp"
#include "loco/errors.hpp"
#include "loco/locoedit.hpp"
#include "loco/locogen.hpp"
#include "loco/neuron.hpp"
#include "loco/trace.hpp"
#include "loco/util.hpp"

namespace loco::cli {

namespace {

// Thrown when a command ran correctly but produced no result.
struct NoResult : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
    return s;
}

std::vector<PromptEmbedding> with_prompts(const std::vector<PromptPair>& pairs) {
    std::vector<PromptEmbedding> out;
    for (const auto& p : pairs) out.push_back(p.with_attr);
    return out;
}

std::vector<PromptEmbedding> without_prompts(const std::vector<PromptPair>& pairs) {
    std::vector<PromptEmbedding> out;
    for (const auto& p : pairs) out.push_back(p.without_attr);
    return out;
}

SweepMode default_mode(const AttributeSpec& a) {
    return a.kind == AttributeKind::fact && a.target ? SweepMode::update : SweepMode::suppress;
}

// Attribute whose direction the sweep scores against.
const AttributeSpec& scored_attribute(const PlantedWorld& w, std::size_t attr, SweepMode mode) {
    const auto& a = w.attributes[attr];
    if (mode == SweepMode::update) {
        if (!a.target) throw ArgumentError("update mode needs a fact attribute with a target ('" + a.name + "' has none)");
        return w.attributes[*a.target];
    }
    return a;
}

AlgorithmConfig stored_algorithm(const std::string& world_dir) {
    const std::string path = world_dir + "/experiment.conf";
    if (!std::filesystem::exists(path)) return {};
    try {
        return parse_experiment_config(read_file(path)).algorithm;
    } catch (const ArgumentError& e) {
        throw IoError(path + ": " + e.what());
    }
}

GenerationConfig generation_for(const PlantedWorld& w, const std::string& seed_text) {
    GenerationConfig g = w.config.generation();
    if (!seed_text.empty()) g.seed = parse_u64(seed_text, "--seed");
    return g;
}

// ---- report merging -------------------------------------------------------

std::vector<std::vector<std::string>> read_csv_rows(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ',')) f.push_back(field);
        rows.push_back(std::move(f));
    }
    if (rows.empty()) throw IoError("'" + path + "' is empty");
    return rows;
}

void append_long(std::string& out, const std::string& source, const std::string& path) {
    const auto rows = read_csv_rows(path);
    const auto& header = rows.front();
    const auto body = [&](auto&& emit) {
        for (std::size_t r = 1; r < rows.size(); ++r) emit(rows[r]);
    };
    const std::string name = std::filesystem::path(path).filename().string();
    if (header.size() >= 3 && header[0] == "j" && header[1] == "m" && header[2] == "a_j") {
        body([&](const std::vector<std::string>& f) {
            if (f.size() != header.size()) throw IoError(path + ": ragged row");
            for (std::size_t c = 2; c < f.size(); ++c)
                out += source + ",localization,m=" + f[1] + "," + f[0] + "," + header[c] + "," + f[c] + "\n";
        });
    } else if (header.size() == 2 && header[0] == "layer" && header[1] == "restoration") {
        body([&](const std::vector<std::string>& f) {
            if (f.size() != 2) throw IoError(path + ": ragged row");
            if (f[0] == "clean" || f[0] == "corrupted" || f[0] == "sigma")
                out += source + ",trace,anchor,," + f[0] + "," + f[1] + "\n";
            else
                out += source + ",trace,restoration," + f[0] + ",restoration," + f[1] + "\n";
        });
    } else if (header.size() == 2 && header[0] == "k" && header[1] == "mean_score") {
        body([&](const std::vector<std::string>& f) {
            if (f.size() != 2) throw IoError(path + ": ragged row");
            out += source + ",dropout,curve," + f[0] + ",mean_score," + f[1] + "\n";
        });
    } else if (header.size() == 5 && header[0] == "layer" && header[3] == "z") {
        body([&](const std::vector<std::string>& f) {
            if (f.size() != 5) throw IoError(path + ": ragged row");
            out += source + ",neuron,layer=" + f[0] + ";kind=" + f[1] + "," + f[2] + ",z," + f[3] + "\n";
        });
    } else {
        throw IoError("'" + path + "' (" + name + ") is not a recognized report table");
    }
}

}  // namespace

Threshold parse_threshold(std::string_view text) {
    Threshold t;
    std::string s(text);
    const std::string suffix = "%rel";
    if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
        t.relative = true;
        t.value = parse_double(s.substr(0, s.size() - suffix.size()), "threshold");
    } else {
        t.relative = false;
        t.value = parse_double(s, "threshold");
    }
    if (!(t.value >= 0.0 && t.value <= 100.0)) throw ArgumentError("threshold must lie in [0, 100]");
    return t;
}

std::string to_string(const Threshold& t) {
    return format_double(t.value) + (t.relative ? "%rel" : "");
}

ExperimentConfig parse_experiment_config(std::string_view text) {
    const KeyValueFile f = KeyValueFile::parse(text);
    f.require_known({
        {"world",
         {"seed", "layers", "m_star", "j_star", "n_attrs", "n_facts", "n_prompts", "redundancy",
          "redundant_layers", "d_latent", "d_text", "d_attn", "n_tokens", "attr_magnitude",
          "content_magnitude", "junk_magnitude"}},
        {"generation", {"steps", "guidance_scale", "seed"}},
        {"algorithm",
         {"m", "m_max", "threshold", "lambda_k", "lambda_v", "dropout_ks", "sigma", "samples",
          "corruption_seed"}},
    });
    ExperimentConfig c;
    WorldConfig& w = c.world;
    const auto size_key = [&](const char* sec, const char* key, std::size_t& dst) {
        if (f.has(sec, key)) dst = f.get_size(sec, key);
    };
    const auto double_key = [&](const char* sec, const char* key, double& dst) {
        if (f.has(sec, key)) dst = f.get_double(sec, key);
    };
    if (f.has("world", "seed")) w.seed = f.get_u64("world", "seed");
    size_key("world", "layers", w.layers);
    size_key("world", "m_star", w.m_star);
    size_key("world", "j_star", w.j_star);
    size_key("world", "n_attrs", w.n_attrs);
    size_key("world", "n_facts", w.n_facts);
    size_key("world", "n_prompts", w.n_prompts);
    if (f.has("world", "redundancy")) w.redundancy = parse_redundancy(f.get("world", "redundancy"));
    size_key("world", "redundant_layers", w.redundant_layers);
    size_key("world", "d_latent", w.d_latent);
    size_key("world", "d_text", w.d_text);
    size_key("world", "d_attn", w.d_attn);
    size_key("world", "n_tokens", w.n_tokens);
    double_key("world", "attr_magnitude", w.attr_magnitude);
    double_key("world", "content_magnitude", w.content_magnitude);
    double_key("world", "junk_magnitude", w.junk_magnitude);
    size_key("generation", "steps", w.steps);
    double_key("generation", "guidance_scale", w.guidance_scale);
    if (f.has("generation", "seed")) {
        if (f.has("world", "seed") && f.get_u64("world", "seed") != f.get_u64("generation", "seed"))
            throw ArgumentError("[world] seed and [generation] seed disagree");
        w.seed = f.get_u64("generation", "seed");
    }

    AlgorithmConfig& a = c.algorithm;
    size_key("algorithm", "m", a.m);
    size_key("algorithm", "m_max", a.m_max);
    if (f.has("algorithm", "threshold")) a.threshold = parse_threshold(f.get("algorithm", "threshold"));
    double_key("algorithm", "lambda_k", a.lambda_k);
    double_key("algorithm", "lambda_v", a.lambda_v);
    if (f.has("algorithm", "dropout_ks")) a.dropout_ks = f.get_size_list("algorithm", "dropout_ks");
    double_key("algorithm", "sigma", a.sigma);
    size_key("algorithm", "samples", a.samples);
    if (f.has("algorithm", "corruption_seed")) a.corruption_seed = f.get_u64("algorithm", "corruption_seed");

    w.validate();
    if (a.m < 1 || a.m > w.layers) throw ArgumentError("[algorithm] m must lie in 1..layers");
    if (a.m_max > w.layers) throw ArgumentError("[algorithm] m_max must be <= layers");
    if (!(a.lambda_k > 0.0) || !(a.lambda_v > 0.0)) throw ArgumentError("[algorithm] lambdas must be > 0");
    if (!std::is_sorted(a.dropout_ks.begin(), a.dropout_ks.end()))
        throw ArgumentError("[algorithm] dropout_ks must be ascending");
    if (a.sigma < 0.0) throw ArgumentError("[algorithm] sigma must be >= 0");
    if (a.samples == 0) throw ArgumentError("[algorithm] samples must be >= 1");
    return c;
}

std::string experiment_config_text(const ExperimentConfig& c) {
    KeyValueFile f;
    const WorldConfig& w = c.world;
    f.set("world", "seed", std::to_string(w.seed));
    f.set("world", "layers", std::to_string(w.layers));
    f.set("world", "m_star", std::to_string(w.m_star));
    f.set("world", "j_star", std::to_string(w.j_star));
    f.set("world", "n_attrs", std::to_string(w.n_attrs));
    f.set("world", "n_facts", std::to_string(w.n_facts));
    f.set("world", "n_prompts", std::to_string(w.n_prompts));
    f.set("world", "redundancy", loco::to_string(w.redundancy));
    f.set("world", "redundant_layers", std::to_string(w.redundant_layers));
    f.set("world", "d_latent", std::to_string(w.d_latent));
    f.set("world", "d_text", std::to_string(w.d_text));
    f.set("world", "d_attn", std::to_string(w.d_attn));
    f.set("world", "n_tokens", std::to_string(w.n_tokens));
    f.set("world", "attr_magnitude", format_double(w.attr_magnitude));
    f.set("world", "content_magnitude", format_double(w.content_magnitude));
    f.set("world", "junk_magnitude", format_double(w.junk_magnitude));
    f.set("generation", "steps", std::to_string(w.steps));
    f.set("generation", "guidance_scale", format_double(w.guidance_scale));
    const AlgorithmConfig& a = c.algorithm;
    f.set("algorithm", "m", std::to_string(a.m));
    f.set("algorithm", "m_max", std::to_string(a.m_max));
    f.set("algorithm", "threshold", to_string(a.threshold));
    f.set("algorithm", "lambda_k", format_double(a.lambda_k));
    f.set("algorithm", "lambda_v", format_double(a.lambda_v));
    f.set("algorithm", "dropout_ks", join_sizes(a.dropout_ks));
    f.set("algorithm", "sigma", format_double(a.sigma));
    f.set("algorithm", "samples", std::to_string(a.samples));
    f.set("algorithm", "corruption_seed", std::to_string(a.corruption_seed));
    return f.serialize();
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"locolab: knowledge localization and closed-form editing on planted diffusion worlds"};
    app.name("locolab");
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string world_dir;
    std::string attr_name;
    std::string mode_text;
    std::string seed_text;

    // plant
    auto* plant = app.add_subcommand("plant", "build a planted world and write its weights and manifest");
    plant->add_option("--config", config_path, "experiment config file (defaults when omitted)");
    plant->add_option("--out", out_dir, "output directory")->required();

    // localize
    std::size_t m_opt = 0;
    bool search = false;
    std::string threshold_text = "50%rel";
    std::size_t m_max = 0;
    auto* localize = app.add_subcommand("localize", "sliding-window sweep over adjacent layers");
    localize->add_option("--world", world_dir, "world directory")->required();
    localize->add_option("--attr", attr_name, "attribute name")->required();
    localize->add_option("--mode", mode_text, "suppress or update (default by attribute kind)");
    auto* m_flag = localize->add_option("--m", m_opt, "window length");
    auto* search_flag = localize->add_flag("--search-m", search, "search the smallest m meeting --threshold");
    auto* threshold_opt = localize->add_option("--threshold", threshold_text, "N%rel (of baseline) or absolute score");
    auto* m_max_opt = localize->add_option("--m-max", m_max, "largest m tried by --search-m (default M)");
    localize->add_option("--seed", seed_text, "generation seed override");
    localize->add_option("--out", out_dir, "output directory")->required();
    m_flag->excludes(search_flag);

    // edit
    std::string layers_text;
    std::string from_report;
    double lambda_k = kDefaultEditLambda;
    double lambda_v = kDefaultEditLambda;
    auto* edit = app.add_subcommand("edit", "closed-form key/value edit of selected layers");
    edit->add_option("--world", world_dir, "world directory")->required();
    edit->add_option("--attr", attr_name, "attribute to edit")->required();
    auto* layers_opt = edit->add_option("--layers", layers_text, "comma-separated target layers");
    auto* report_opt = edit->add_option("--from-report", from_report, "localization.jsonl whose best window is edited");
    auto* lambda_k_opt = edit->add_option("--lambda-k", lambda_k, "key regularizer");
    auto* lambda_v_opt = edit->add_option("--lambda-v", lambda_v, "value regularizer");
    edit->add_option("--seed", seed_text, "generation seed override");
    edit->add_option("--out", out_dir, "output world directory")->required();
    layers_opt->excludes(report_opt);

    // neuron-rank
    std::string kind_text = "value";
    std::string against = "without_attr";
    std::string ks_text;
    std::size_t top_k = 0;
    auto* neuron = app.add_subcommand("neuron-rank", "z-score ranking and dropout of embedding neurons");
    neuron->add_option("--world", world_dir, "world directory")->required();
    neuron->add_option("--attr", attr_name, "attribute name")->required();
    neuron->add_option("--layers", layers_text, "comma-separated layers (default truth window)");
    neuron->add_option("--kind", kind_text, "key or value");
    neuron->add_option("--against", against, "comparison population: without_attr or with_attr");
    auto* ks_opt = neuron->add_option("--ks", ks_text, "comma-separated ascending dropout counts");
    neuron->add_option("--top-k", top_k, "neurons per layer written to mask.txt (default scaled 50 of 1280)");
    neuron->add_option("--seed", seed_text, "generation seed override");
    neuron->add_option("--out", out_dir, "output directory")->required();

    // trace
    double sigma = 0.0;
    std::size_t samples = 16;
    std::uint64_t corruption_seed = 1;
    std::string scope_text = "all_tokens";
    std::string prompt_text = "all";
    auto* tr = app.add_subcommand("trace", "causal tracing with per-layer restoration");
    tr->add_option("--world", world_dir, "world directory")->required();
    tr->add_option("--attr", attr_name, "attribute name")->required();
    tr->add_option("--prompt", prompt_text, "prompt index or 'all' (averaged)");
    auto* sigma_opt = tr->add_option("--sigma", sigma, "noise std (0 = 3x embedding RMS)");
    auto* samples_opt = tr->add_option("--samples", samples, "noise draws per score");
    auto* corruption_seed_opt = tr->add_option("--corruption-seed", corruption_seed, "noise seed");
    tr->add_option("--scope", scope_text, "all_tokens or subject_token");
    tr->add_option("--seed", seed_text, "generation seed override");
    tr->add_option("--out", out_dir, "output directory")->required();

    // report
    std::vector<std::string> inputs;
    std::string report_out;
    auto* report = app.add_subcommand("report", "merge report CSVs into one long-format table");
    report->add_option("inputs", inputs, "CSV files or directories")->required();
    report->add_option("--out", report_out, "output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    const std::size_t threads = [&] {
        try {
            return thread_budget();
        } catch (const std::exception&) {
            return std::size_t{1};
        }
    }();

    try {
        // Flags left unset fall back to the [algorithm] section stored next to the world.
        if (!world_dir.empty()) {
            const AlgorithmConfig alg = stored_algorithm(world_dir);
            if (m_opt == 0 && !search) m_opt = alg.m;
            if (threshold_opt->count() == 0) threshold_text = to_string(alg.threshold);
            if (m_max_opt->count() == 0) m_max = alg.m_max;
            if (lambda_k_opt->count() == 0) lambda_k = alg.lambda_k;
            if (lambda_v_opt->count() == 0) lambda_v = alg.lambda_v;
            if (ks_opt->count() == 0 && !alg.dropout_ks.empty()) ks_text = join_sizes(alg.dropout_ks);
            if (sigma_opt->count() == 0) sigma = alg.sigma;
            if (samples_opt->count() == 0) samples = alg.samples;
            if (corruption_seed_opt->count() == 0) corruption_seed = alg.corruption_seed;
        }

        if (plant->parsed()) {
            ExperimentConfig config;
            if (!config_path.empty()) config = parse_experiment_config(read_file(config_path));
            const PlantedWorld world = build_world(config.world);
            save_world(world, out_dir);
            write_file(out_dir + "/experiment.conf", experiment_config_text(config));
            out << "planted " << world.attributes.size() << " attributes, truth window j="
                << world.config.j_star << " m=" << world.config.m_star << ", planted layers "
                << join_sizes(world.planted_layers) << "\n";
            return kExitOk;
        }

        if (localize->parsed()) {
            const PlantedWorld world = load_world(world_dir);
            const std::size_t a = world.attribute_index(attr_name);
            const SweepMode mode = mode_text.empty() ? default_mode(world.attributes[a]) : parse_sweep_mode(mode_text);
            const Scorer scorer = attribute_scorer(scored_attribute(world, a, mode));
            const GenerationConfig gen = generation_for(world, seed_text);
            const auto& prompts = world.prompts[a];
            ensure_dir(out_dir);
            LocalizationReport rep;
            if (search) {
                const Threshold t = parse_threshold(threshold_text);
                const double base = t.relative ? baseline_score(world.model, world.schedule, prompts, scorer, mode, gen, threads) : 0.0;
                const double thr = t.resolve(base);
                const std::size_t mm = m_max == 0 ? world.model.layer_count() : m_max;
                auto found = search_m(world.model, world.schedule, prompts, scorer, mode, thr, mm, gen, threads);
                if (!found) {
                    throw NoResult("no window length up to m = " + std::to_string(mm) + " meets threshold " +
                                   format_double(thr));
                }
                rep = std::move(found->report);
                out << "search: m=" << found->m << " threshold=" << format_double(thr) << "\n";
            } else {
                if (m_opt == 0) throw ArgumentError("give --m or --search-m");
                rep = sweep(world.model, world.schedule, prompts, m_opt, scorer, mode, gen, threads);
            }
            write_file(out_dir + "/localization.csv", report_csv(rep));
            write_file(out_dir + "/localization.jsonl", report_jsonl(rep, attr_name));
            out << "best j=" << rep.best.j << " m=" << rep.best.m << " a_j=" << format_double(rep.best.a_j) << "\n";
            return kExitOk;
        }

        if (edit->parsed()) {
            const PlantedWorld world = load_world(world_dir);
            const std::size_t a = world.attribute_index(attr_name);
            std::vector<std::size_t> layers;
            if (!from_report.empty()) {
                nlohmann::json j;
                try {
                    std::istringstream in(read_file(from_report));
                    std::string line;
                    std::getline(in, line);
                    j = nlohmann::json::parse(line);
                    const std::size_t start = j.at("best").at("j").get<std::size_t>();
                    const std::size_t len = j.at("best").at("m").get<std::size_t>();
                    for (std::size_t l = start; l < start + len; ++l) layers.push_back(l);
                } catch (const nlohmann::json::exception& e) {
                    throw IoError(from_report + ": " + e.what());
                }
            } else if (!layers_text.empty()) {
                layers = parse_size_list(layers_text, "--layers");
            } else {
                throw ArgumentError("give --layers or --from-report");
            }
            const auto stacks = collect_embeddings(world.prompts[a]);
            EditSpec spec{layers, stacks.x_orig, stacks.x_target, lambda_k, lambda_v};
            const EditOutcome outcome = apply_edit(world.model, spec);
            const SweepMode mode = default_mode(world.attributes[a]);
            const GenerationConfig gen = generation_for(world, seed_text);

            ScoredPromptSet edit_set{attr_name, scored_attribute(world, a, mode), with_prompts(world.prompts[a])};
            std::vector<ScoredPromptSet> unrelated;
            for (std::size_t b = 0; b < world.attributes.size(); ++b) {
                const auto& spec_b = world.attributes[b];
                if (b == a || spec_b.is_target || (world.attributes[a].target && *world.attributes[a].target == b)) continue;
                unrelated.push_back({spec_b.name, spec_b, with_prompts(world.prompts[b])});
            }
            const EditEvaluation ev = evaluate_edit(world.model, outcome.edited, world.schedule, edit_set, unrelated, gen, threads);

            PlantedWorld edited = world;
            edited.model = outcome.edited;
            save_world(edited, out_dir);
            write_file(out_dir + "/edit.manifest", edit_manifest(spec, outcome, attr_name, "world." + attr_name));
            std::string scores = "set,pre,post,delta\n";
            const auto row = [&](const SetScores& s) {
                scores += s.name + "," + format_double(s.pre) + "," + format_double(s.post) + "," + format_double(s.delta) + "\n";
            };
            row(ev.edited);
            for (const auto& u : ev.unrelated) row(u);
            write_file(out_dir + "/edit_scores.csv", scores);

            double max_delta = 0.0;
            for (const auto& s : outcome.layers) max_delta = std::max({max_delta, s.key_delta, s.value_delta});
            out << "edited layers " << join_sizes(layers) << ": max weight delta " << format_double(max_delta)
                << ", score " << format_double(ev.edited.pre) << " -> " << format_double(ev.edited.post) << "\n";
            return kExitOk;
        }

        if (neuron->parsed()) {
            const PlantedWorld world = load_world(world_dir);
            const std::size_t a = world.attribute_index(attr_name);
            const MatrixKind kind = parse_matrix_kind(kind_text);
            std::vector<std::size_t> layers;
            if (layers_text.empty()) {
                for (std::size_t l = 0; l < world.truth[a].length; ++l) layers.push_back(world.truth[a].start + l);
            } else {
                layers = parse_size_list(layers_text, "--layers");
            }
            const auto with = with_prompts(world.prompts[a]);
            std::vector<PromptEmbedding> other;
            if (against == "without_attr") other = without_prompts(world.prompts[a]);
            else if (against == "with_attr") other = with;
            else throw ArgumentError("--against must be without_attr or with_attr");
            const auto rankings = rank_neurons(world.model, layers, kind, subject_rows(with), subject_rows(other));
            const std::size_t width = kind == MatrixKind::key ? world.model.d_attn() : world.model.d_latent();

            std::vector<std::size_t> ks;
            if (!ks_text.empty()) {
                ks = parse_size_list(ks_text, "--ks");
            } else {
                std::set<std::size_t> s{0, width};
                for (std::size_t ref : kReferenceNeuronCounts) s.insert(std::min(width, scaled_neuron_count(ref, width)));
                ks.assign(s.begin(), s.end());
            }
            for (std::size_t k : ks)
                if (k > width) throw ArgumentError("--ks entry " + std::to_string(k) + " exceeds width " + std::to_string(width));
            const std::size_t k_mask = top_k == 0 ? scaled_neuron_count(50, width) : top_k;
            if (k_mask > width) throw ArgumentError("--top-k exceeds width " + std::to_string(width));

            const GenerationConfig gen = generation_for(world, seed_text);
            const auto curve = dropout_curve(world.model, world.schedule, rankings, ks, with, world.attributes[a], gen, threads);
            ensure_dir(out_dir);
            write_file(out_dir + "/ranking.csv", ranking_csv(rankings));
            write_file(out_dir + "/mask.txt", mask_text(top_k_mask(rankings, k_mask)));
            write_file(out_dir + "/curve.csv", curve_csv(curve));
            for (const auto& r : rankings)
                out << "layer " << r.layer << " " << loco::to_string(r.kind) << ": top neuron " << r.order.front()
                    << " |z|=" << format_double(std::abs(r.z[r.order.front()])) << "\n";
            return kExitOk;
        }

        if (tr->parsed()) {
            const PlantedWorld world = load_world(world_dir);
            const std::size_t a = world.attribute_index(attr_name);
            CorruptionConfig cc;
            cc.sigma = sigma;
            cc.samples = samples;
            cc.seed = corruption_seed;
            cc.scope = parse_corruption_scope(scope_text);
            const GenerationConfig gen = generation_for(world, seed_text);
            std::vector<std::size_t> which;
            if (prompt_text == "all") {
                for (std::size_t i = 0; i < world.prompts[a].size(); ++i) which.push_back(i);
            } else {
                const std::size_t i = parse_u64(prompt_text, "--prompt");
                if (i >= world.prompts[a].size()) throw ArgumentError("--prompt index out of range");
                which.push_back(i);
            }
            std::vector<TraceReport> reports;
            for (std::size_t i : which) {
                GenerationConfig g = gen;
                g.seed = derive_seed(gen.seed, 0x3c, i);
                reports.push_back(trace(world.model, world.schedule, world.prompts[a][i].with_attr, world.attributes[a], cc, g, threads));
            }
            const TraceReport avg = average_reports(reports);
            ensure_dir(out_dir);
            write_file(out_dir + "/trace.csv", trace_csv(avg));
            out << "clean " << format_double(avg.clean) << " corrupted " << format_double(avg.corrupted)
                << "; layers restoring >= 50% of clean: " << join_sizes(restoring_layers(avg)) << "\n";
            return kExitOk;
        }

        if (report->parsed()) {
            std::vector<std::string> files;
            for (const auto& in : inputs) {
                if (std::filesystem::is_directory(in)) {
                    std::vector<std::string> found;
                    for (const auto& e : std::filesystem::directory_iterator(in))
                        if (e.path().extension() == ".csv" && e.path().filename() != "edit_scores.csv")
                            found.push_back(e.path().string());
                    std::sort(found.begin(), found.end());
                    files.insert(files.end(), found.begin(), found.end());
                } else if (std::filesystem::exists(in)) {
                    files.push_back(in);
                } else {
                    throw IoError("'" + in + "' does not exist");
                }
            }
            if (files.empty()) throw NoResult("no report tables found");
            std::string merged = "source,experiment,series,x,variable,value\n";
            for (const auto& f : files) {
                std::string source = std::filesystem::path(f).parent_path().filename().string();
                if (source.empty()) source = ".";
                append_long(merged, source, f);
            }
            write_file(report_out, merged);
            out << "merged " << files.size() << " tables into " << report_out << "\n";
            return kExitOk;
        }
    } catch (const NoResult& e) {
        err << "no result: " << e.what() << "\n";
        return kExitNoResult;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace loco::cli
