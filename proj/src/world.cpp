#include "loco/world.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "loco/errors.hpp"
#include "loco/util.hpp"

namespace loco {

namespace {

constexpr std::size_t kSubjectDim = 4;
constexpr std::size_t kContextDim = 12;
constexpr std::size_t kMinSpare = 4;
constexpr std::size_t kMinContent = 4;

// Attention logit of the subject token in window layers, and of the start
// token / gated subject in the extra layers of redundant worlds.
constexpr double kWindowLogit = 12.0;
constexpr double kSinkLogit = 8.0;
constexpr double kGateLogit = 30.0;
// Key gain for spare text directions in planted layers; corrupted embeddings
// pick these up and scatter attention away from the subject token.
constexpr double kSpareKeyGain = 40.0;
// Carrier and gate coordinates end up at this fraction of the content magnitude.
constexpr double kCarrierFraction = 0.1;

// Image produced by DDIM when eps_hat = gamma * z + d is linear in the
// latent: z_0 = P z_T + Q d.
struct AffineDdim {
    double p = 1.0;
    double q = 0.0;
};

AffineDdim affine_ddim(const NoiseSchedule& s, double gamma) {
    AffineDdim r;
    for (std::size_t t = s.steps(); t >= 1; --t) {
        const double a = s.at(t);
        const double ap = s.at(t - 1);
        const double at = std::sqrt(ap) / std::sqrt(a);
        const double bt = std::sqrt(1.0 - ap) - at * std::sqrt(1.0 - a);
        r.p *= at + gamma * bt;
        r.q = (at + gamma * bt) * r.q + bt;
    }
    return r;
}

// Rows form an orthonormal basis of R^n (modified Gram-Schmidt, applied twice).
Matrix random_orthonormal(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix q(n, n);
    for (double& v : q.data()) v = normal(rng);
    for (std::size_t i = 0; i < n; ++i) {
        auto ri = q.row(i);
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t j = 0; j < i; ++j) {
                const double d = dot(ri, q.row(j));
                auto rj = q.row(j);
                for (std::size_t c = 0; c < n; ++c) ri[c] -= d * rj[c];
            }
        }
        const double nrm = norm2(ri);
        for (double& v : ri) v /= nrm;
    }
    return q;
}

Matrix rows_of(const Matrix& basis, std::size_t first, std::size_t count) {
    Matrix out(count, basis.cols());
    for (std::size_t r = 0; r < count; ++r) {
        auto src = basis.row(first + r);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

// Random vector in the span of basis rows with the given norm.
Vector random_in_span(const Matrix& basis, double norm, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector coeff(basis.rows());
    for (double& c : coeff) c = normal(rng);
    Vector v = row_times(coeff, basis);
    const double n = norm2(v);
    for (double& x : v) x *= norm / n;
    return v;
}

Vector unit(std::size_t n, std::size_t i) {
    Vector v(n, 0.0);
    v[i] = 1.0;
    return v;
}

// w += scale * outer(a, e_col)  (a along rows, single column)
void add_column(Matrix& w, std::span<const double> a, std::size_t col, double scale) {
    for (std::size_t r = 0; r < w.rows(); ++r) w(r, col) += scale * a[r];
}

}  // namespace

const char* to_string(AttributeKind kind) {
    switch (kind) {
        case AttributeKind::style: return "style";
        case AttributeKind::object: return "object";
        case AttributeKind::fact: return "fact";
    }
    return "?";
}

const char* to_string(Redundancy r) {
    return r == Redundancy::single_window ? "single_window" : "redundant";
}

AttributeKind parse_attribute_kind(std::string_view s) {
    if (s == "style") return AttributeKind::style;
    if (s == "object") return AttributeKind::object;
    if (s == "fact") return AttributeKind::fact;
    throw ArgumentError("unknown attribute kind '" + std::string(s) + "'");
}

Redundancy parse_redundancy(std::string_view s) {
    if (s == "single_window") return Redundancy::single_window;
    if (s == "redundant") return Redundancy::redundant;
    throw ArgumentError("unknown redundancy '" + std::string(s) +
                        "' (expected single_window or redundant)");
}

void WorldConfig::validate() const {
    if (layers == 0) throw ArgumentError("layers (M) must be >= 1");
    if (m_star == 0) throw ArgumentError("m_star must be >= 1");
    if (j_star + m_star > layers) {
        throw ArgumentError("j_star + m_star <= M violated: " + std::to_string(j_star) + " + " +
                            std::to_string(m_star) + " > " + std::to_string(layers));
    }
    if (n_prompts < 2) throw ArgumentError("n_prompts must be >= 2");
    if (n_tokens < 3) throw ArgumentError("n_tokens must be >= 3");
    if (d_attn < 2) throw ArgumentError("d_attn must be >= 2");
    if (steps == 0) throw ArgumentError("steps must be >= 1");
    if (!(guidance_scale >= 0.0) || !std::isfinite(guidance_scale))
        throw ArgumentError("guidance_scale must be finite and >= 0");
    const std::size_t n_sig = signature_count();
    if (n_sig == 0) throw ArgumentError("world needs at least one attribute");
    if (n_sig > std::min(d_latent, d_text) / 2) {
        throw ArgumentError("attribute capacity exceeded: " + std::to_string(n_sig) +
                            " signatures > min(d_latent, d_text)/2 = " +
                            std::to_string(std::min(d_latent, d_text) / 2));
    }
    const std::size_t text_needed = n_sig * (1 + kSubjectDim) + 1 + kContextDim + kMinSpare;
    if (d_text < text_needed) {
        throw ArgumentError("d_text = " + std::to_string(d_text) + " too small for " +
                            std::to_string(n_sig) + " attributes (needs " +
                            std::to_string(text_needed) + ")");
    }
    const std::size_t latent_needed = 2 * n_sig + 1 + kMinContent;
    if (d_latent < latent_needed) {
        throw ArgumentError("d_latent = " + std::to_string(d_latent) + " too small for " +
                            std::to_string(n_sig) + " attributes (needs " +
                            std::to_string(latent_needed) + ")");
    }
    if (redundancy == Redundancy::redundant) {
        if (redundant_layers < m_star) {
            throw ArgumentError("redundant_layers must be >= m_star");
        }
        const std::size_t extras = redundant_layers - m_star;
        if (extras > 0 && j_star + m_star + 2 * extras - 1 >= layers) {
            throw ArgumentError("redundant world needs layers up to " +
                                std::to_string(j_star + m_star + 2 * extras - 1) + " but M = " +
                                std::to_string(layers));
        }
    }
    if (!(attr_magnitude > 0.0) || !(content_magnitude > 0.0) || !(junk_magnitude >= 0.0))
        throw ArgumentError("planting magnitudes must be positive");
}

GenerationConfig WorldConfig::generation() const {
    GenerationConfig g;
    g.guidance_scale = guidance_scale;
    g.steps = steps;
    g.seed = seed;
    return g;
}

std::size_t PlantedWorld::attribute_index(std::string_view name) const {
    for (std::size_t i = 0; i < attributes.size(); ++i)
        if (attributes[i].name == name) return i;
    throw ArgumentError("unknown attribute '" + std::string(name) + "'");
}

PlantedWorld build_world(const WorldConfig& config) {
    config.validate();
    const std::size_t M = config.layers;
    const std::size_t dl = config.d_latent;
    const std::size_t dt = config.d_text;
    const std::size_t da = config.d_attn;
    const std::size_t n = config.n_tokens;
    const std::size_t n_sig = config.signature_count();
    const bool redundant = config.redundancy == Redundancy::redundant;

    PlantedWorld world;
    world.config = config;
    world.schedule = NoiseSchedule::linear(config.steps);
    std::mt19937_64 rng(derive_seed(config.seed, 0x77));

    // Text space.
    const Matrix basis = random_orthonormal(dt, rng);
    std::size_t next = 0;
    const Matrix signatures = rows_of(basis, next, n_sig);
    next += n_sig;
    TextLayout& layout = world.layout;
    layout.bos = basis.row_vector(next++);
    for (std::size_t a = 0; a < n_sig; ++a) {
        layout.subject_bases.push_back(rows_of(basis, next, kSubjectDim));
        next += kSubjectDim;
    }
    layout.context_basis = rows_of(basis, next, kContextDim);
    next += kContextDim;
    layout.spare_basis = rows_of(basis, next, dt - next);
    const std::size_t n_spare = layout.spare_basis.rows();

    // Latent coordinates.
    std::vector<std::size_t> perm(dl);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> attr_coord(perm.begin(), perm.begin() + n_sig);
    const std::size_t carrier = perm[n_sig];
    std::vector<std::size_t> gate_coord(perm.begin() + n_sig + 1, perm.begin() + 2 * n_sig + 1);
    std::vector<std::size_t> content(perm.begin() + 2 * n_sig + 1, perm.end());
    const std::size_t n_content = content.size();

    // Attributes.
    std::size_t n_style = 0, n_object = 0;
    for (std::size_t i = 0; i < config.n_attrs; ++i) {
        AttributeSpec a;
        a.kind = i % 2 == 0 ? AttributeKind::style : AttributeKind::object;
        a.name = a.kind == AttributeKind::style ? "style" + std::to_string(n_style++)
                                                : "object" + std::to_string(n_object++);
        world.attributes.push_back(std::move(a));
    }
    for (std::size_t f = 0; f < config.n_facts; ++f) {
        AttributeSpec old_fact;
        old_fact.kind = AttributeKind::fact;
        old_fact.name = "fact" + std::to_string(f);
        old_fact.target = config.n_attrs + 2 * f + 1;
        AttributeSpec new_fact;
        new_fact.kind = AttributeKind::fact;
        new_fact.name = "fact" + std::to_string(f) + "_updated";
        new_fact.is_target = true;
        world.attributes.push_back(std::move(old_fact));
        world.attributes.push_back(std::move(new_fact));
    }
    for (std::size_t a = 0; a < n_sig; ++a) {
        auto& spec = world.attributes[a];
        spec.token_signature = signatures.row_vector(a);
        spec.image_direction = unit(dl, attr_coord[a]);
        spec.image_neuron = attr_coord[a];
    }

    // Planted layers: the truth window, then (redundant worlds) gated extras
    // every other layer after it.
    std::vector<std::size_t> window(config.m_star);
    std::iota(window.begin(), window.end(), config.j_star);
    std::vector<std::size_t> extras;
    if (redundant) {
        for (std::size_t i = 0; i + config.m_star < config.redundant_layers; ++i)
            extras.push_back(config.j_star + config.m_star + 1 + 2 * i);
    }
    std::vector<std::size_t> planted = window;
    planted.insert(planted.end(), extras.begin(), extras.end());
    std::sort(planted.begin(), planted.end());
    world.planted_layers = planted;
    world.truth.assign(n_sig, TruthWindow{config.j_star, config.m_star});
    const auto is_planted = [&](std::size_t l) {
        return std::binary_search(planted.begin(), planted.end(), l);
    };
    const auto in_window = [&](std::size_t l) {
        return l >= config.j_star && l < config.j_star + config.m_star;
    };
    const std::size_t n_planted = planted.size();
    const std::size_t n_plain = M - n_planted;

    // Latent-unit targets converted to per-step noise-prediction constants.
    // Coordinates with identity unconditional rows follow gamma = 1; carrier
    // and gate rows are zeroed and follow gamma = 0.
    const double alpha = config.guidance_scale;
    const AffineDdim lin = affine_ddim(world.schedule, 1.0);
    const AffineDdim flat = affine_ddim(world.schedule, 0.0);
    if (std::abs(lin.q) < 1e-12 || std::abs(flat.q) < 1e-12)
        throw NumericError("schedule gives a degenerate image map");
    const double kap = 1.0 / (lin.q * (1.0 + alpha));
    const double kap0 = 1.0 / (flat.q * (1.0 + alpha));

    Matrix uncond = Matrix::identity(dl);
    uncond(carrier, carrier) = 0.0;
    for (std::size_t g : gate_coord) uncond(g, g) = 0.0;
    world.model.uncond_map = uncond;

    const double A = config.attr_magnitude;
    const double B = config.content_magnitude;
    const double J = config.junk_magnitude;
    const double carrier_total = kCarrierFraction * B;
    const double inv_sqrt_plain = n_plain > 0 ? 1.0 / std::sqrt(static_cast<double>(n_plain)) : 0.0;

    // Nominal corruption level: three times the expected prompt RMS.
    const double jit = layout.signature_jitter;
    const double mean_sq_token =
        (layout.bos_scale * layout.bos_scale +
         static_cast<double>(n - 2) * (layout.theme_norm * layout.theme_norm +
                                       layout.variation_norm * layout.variation_norm) +
         layout.subject_norm * layout.subject_norm + 1.0 + jit * jit / 3.0) /
        static_cast<double>(n);
    const double sigma_nominal = 3.0 * std::sqrt(mean_sq_token / static_cast<double>(dt));

    const double ctx_mean_norm =
        layout.theme_norm * static_cast<double>(n - 2) / static_cast<double>(n);
    const double h_ctx = B * inv_sqrt_plain / ctx_mean_norm * kap;
    const double spare_mean_norm =
        sigma_nominal * std::sqrt(static_cast<double>(n_spare) / static_cast<double>(n));
    const double h_spare = J * inv_sqrt_plain / spare_mean_norm * kap;
    const double carrier_per_layer = n_plain > 0 ? carrier_total / static_cast<double>(n_plain) : 0.0;

    std::normal_distribution<double> normal(0.0, 1.0);
    const double content_scale = 1.0 / std::sqrt(static_cast<double>(n_content));
    world.model.layers.resize(M);
    std::vector<double> carrier_in(M, 0.0);
    double carrier_val = 0.0;
    for (std::size_t l = 0; l < M; ++l) {
        CrossAttentionLayer& L = world.model.layers[l];
        L.w_q = Matrix(dl, da);
        L.w_k = Matrix(dt, da);
        L.w_v = Matrix(dt, dl);
        L.residual_gain = 1.0;
        carrier_in[l] = carrier_val;
        if (is_planted(l)) continue;

        // Attribute-blind layer: uniform attention, context -> content,
        // spare directions -> content, start token -> carrier.
        Matrix key_mix(kContextDim, da);
        for (double& v : key_mix.data()) v = normal(rng);
        L.w_k = matmul(layout.context_basis.transpose(), key_mix);

        Matrix ctx_map(kContextDim, n_content);
        for (double& v : ctx_map.data()) v = normal(rng) * content_scale;
        Matrix spare_map(n_spare, n_content);
        for (double& v : spare_map.data()) v = normal(rng) * content_scale;
        const Matrix ctx_v = matmul(layout.context_basis.transpose(), ctx_map);
        const Matrix spare_v = matmul(layout.spare_basis.transpose(), spare_map);
        for (std::size_t r = 0; r < dt; ++r)
            for (std::size_t c = 0; c < n_content; ++c)
                L.w_v(r, content[c]) = ctx_v(r, c) * h_ctx + spare_v(r, c) * h_spare;
        add_column(L.w_v, layout.bos, carrier,
                   carrier_per_layer * kap0 * static_cast<double>(n) / layout.bos_scale);
        carrier_val += carrier_per_layer * kap0;
    }

    const double gate_val = kCarrierFraction * B * kap0;
    const double sqrt_da = std::sqrt(static_cast<double>(da));
    const double share = A / static_cast<double>(n_planted);
    for (std::size_t l : planted) {
        CrossAttentionLayer& L = world.model.layers[l];
        const double cv = carrier_in[l];
        for (std::size_t a = 0; a < n_sig; ++a)
            add_column(L.w_k, world.attributes[a].token_signature, 0, 1.0);
        for (std::size_t s = 0; s < n_spare; ++s)
            add_column(L.w_k, layout.spare_basis.row(s), 0, kSpareKeyGain);

        if (in_window(l)) {
            // Carrier query selects the subject token.
            double wsub = 1.0 / static_cast<double>(n);
            if (std::abs(cv) > 0.0) {
                L.w_q(carrier, 0) = kWindowLogit * sqrt_da / cv;
                wsub = std::exp(kWindowLogit) /
                       (std::exp(kWindowLogit) + static_cast<double>(n - 1));
            }
            for (std::size_t a = 0; a < n_sig; ++a) {
                const auto& sig = world.attributes[a].token_signature;
                add_column(L.w_v, sig, attr_coord[a], share * kap / wsub);
                if (redundant)
                    add_column(L.w_v, sig, gate_coord[a],
                               gate_val / static_cast<double>(config.m_star) / wsub);
            }
        } else {
            // Extra layer: attends to the start token unless the gate written
            // by the window is present.
            add_column(L.w_k, layout.bos, 1, 1.0);
            L.w_q(carrier, 1) = kSinkLogit * sqrt_da / (cv * layout.bos_scale);
            for (std::size_t a = 0; a < n_sig; ++a) {
                L.w_q(gate_coord[a], 0) = kGateLogit * sqrt_da / gate_val;
                add_column(L.w_v, world.attributes[a].token_signature, attr_coord[a], share * kap);
            }
        }
    }
    world.model.validate();

    world.prompts.resize(n_sig);
    for (std::size_t a = 0; a < n_sig; ++a)
        world.prompts[a] = make_prompt_pairs(world, a, config.n_prompts, derive_seed(config.seed, 0x50, a));
    return world;
}

double attribute_score(std::span<const double> image, const AttributeSpec& attr) {
    const double nrm = norm2(image);
    if (!(nrm > 0.0)) throw ArgumentError("attribute_score: image is zero");
    const double c = dot(image, attr.image_direction) / (nrm * norm2(attr.image_direction));
    return 100.0 * std::max(0.0, std::min(1.0, c));
}

PromptSets make_prompt_sets(const PlantedWorld& world, std::size_t attr, std::size_t n,
                            std::uint64_t seed) {
    if (attr >= world.attributes.size()) {
        throw ArgumentError("attribute index " + std::to_string(attr) + " out of range (" +
                            std::to_string(world.attributes.size()) + " attributes)");
    }
    const auto& spec = world.attributes[attr];
    const TextLayout& layout = world.layout;
    const std::size_t nt = world.config.n_tokens;
    const std::size_t dt = world.config.d_text;
    const std::size_t subject = nt - 1;
    const bool swap = spec.target.has_value();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);

    PromptSets sets;
    for (std::size_t i = 0; i < n; ++i) {
        Matrix tokens(nt, dt);
        for (std::size_t c = 0; c < dt; ++c) tokens(0, c) = layout.bos_scale * layout.bos[c];
        const Vector theme = random_in_span(layout.context_basis, layout.theme_norm, rng);
        for (std::size_t t = 1; t + 1 < nt; ++t) {
            const Vector var = random_in_span(layout.context_basis, layout.variation_norm, rng);
            for (std::size_t c = 0; c < dt; ++c) tokens(t, c) = theme[c] + var[c];
        }
        const Vector content = random_in_span(layout.subject_bases[attr], layout.subject_norm, rng);
        const double beta = swap ? 1.0 : 1.0 + layout.signature_jitter * jitter(rng);

        Matrix with = tokens;
        Matrix without = tokens;
        for (std::size_t c = 0; c < dt; ++c) {
            with(subject, c) = content[c] + beta * spec.token_signature[c];
            without(subject, c) = content[c];
            if (swap) without(subject, c) += world.attributes[*spec.target].token_signature[c];
        }
        sets.with_attr.push_back({std::move(with), subject});
        sets.without_attr.push_back({std::move(without), subject});
    }
    return sets;
}

std::vector<PromptPair> make_prompt_pairs(const PlantedWorld& world, std::size_t attr, std::size_t n,
                                          std::uint64_t seed) {
    PromptSets sets = make_prompt_sets(world, attr, n, seed);
    std::vector<PromptPair> pairs;
    pairs.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        pairs.push_back({std::move(sets.with_attr[i]), std::move(sets.without_attr[i])});
    return pairs;
}

std::string world_manifest(const PlantedWorld& world, const std::string& weights_file) {
    const WorldConfig& c = world.config;
    KeyValueFile f;
    f.set("world", "format", "LOCO1");
    f.set("world", "weights", weights_file);
    f.set("world", "seed", std::to_string(c.seed));
    f.set("world", "layers", std::to_string(c.layers));
    f.set("world", "m_star", std::to_string(c.m_star));
    f.set("world", "j_star", std::to_string(c.j_star));
    f.set("world", "n_attrs", std::to_string(c.n_attrs));
    f.set("world", "n_facts", std::to_string(c.n_facts));
    f.set("world", "n_prompts", std::to_string(c.n_prompts));
    f.set("world", "redundancy", to_string(c.redundancy));
    f.set("world", "redundant_layers", std::to_string(c.redundant_layers));
    f.set("world", "d_latent", std::to_string(c.d_latent));
    f.set("world", "d_text", std::to_string(c.d_text));
    f.set("world", "d_attn", std::to_string(c.d_attn));
    f.set("world", "n_tokens", std::to_string(c.n_tokens));
    f.set("world", "steps", std::to_string(c.steps));
    f.set("world", "guidance_scale", format_double(c.guidance_scale));
    f.set("world", "attr_magnitude", format_double(c.attr_magnitude));
    f.set("world", "content_magnitude", format_double(c.content_magnitude));
    f.set("world", "junk_magnitude", format_double(c.junk_magnitude));

    std::string planted;
    for (std::size_t l : world.planted_layers) planted += (planted.empty() ? "" : ",") + std::to_string(l);
    f.set("truth", "start", std::to_string(c.j_star));
    f.set("truth", "length", std::to_string(c.m_star));
    f.set("truth", "planted_layers", planted);

    f.set("attributes", "count", std::to_string(world.attributes.size()));
    for (std::size_t a = 0; a < world.attributes.size(); ++a) {
        const auto& spec = world.attributes[a];
        const std::string sec = "attribute." + std::to_string(a);
        f.set(sec, "name", spec.name);
        f.set(sec, "kind", to_string(spec.kind));
        f.set(sec, "image_neuron", std::to_string(spec.image_neuron));
        f.set(sec, "truth_start", std::to_string(world.truth[a].start));
        f.set(sec, "truth_length", std::to_string(world.truth[a].length));
        if (spec.target) f.set(sec, "target", world.attributes[*spec.target].name);
        if (spec.is_target) f.set(sec, "is_target", "true");
    }
    return "# planted world manifest\n" + f.serialize();
}

WorldConfig config_from_manifest(const KeyValueFile& f) {
    const std::string w = "world";
    if (f.get(w, "format") != "LOCO1") throw IoError("manifest: unsupported weight format");
    WorldConfig c;
    c.seed = f.get_u64(w, "seed");
    c.layers = f.get_size(w, "layers");
    c.m_star = f.get_size(w, "m_star");
    c.j_star = f.get_size(w, "j_star");
    c.n_attrs = f.get_size(w, "n_attrs");
    c.n_facts = f.get_size(w, "n_facts");
    c.n_prompts = f.get_size(w, "n_prompts");
    c.redundancy = parse_redundancy(f.get(w, "redundancy"));
    c.redundant_layers = f.get_size(w, "redundant_layers");
    c.d_latent = f.get_size(w, "d_latent");
    c.d_text = f.get_size(w, "d_text");
    c.d_attn = f.get_size(w, "d_attn");
    c.n_tokens = f.get_size(w, "n_tokens");
    c.steps = f.get_size(w, "steps");
    c.guidance_scale = f.get_double(w, "guidance_scale");
    c.attr_magnitude = f.get_double(w, "attr_magnitude");
    c.content_magnitude = f.get_double(w, "content_magnitude");
    c.junk_magnitude = f.get_double(w, "junk_magnitude");
    return c;
}

void save_world(const PlantedWorld& world, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
    save_weights(dir + "/weights.loco1", world.model, world.schedule);
    write_file(dir + "/world.manifest", world_manifest(world, "weights.loco1"));
}

PlantedWorld load_world(const std::string& dir) {
    KeyValueFile manifest;
    try {
        manifest = KeyValueFile::parse(read_file(dir + "/world.manifest"));
    } catch (const ArgumentError& e) {
        throw IoError(dir + "/world.manifest: " + e.what());
    }
    WorldConfig config;
    try {
        config = config_from_manifest(manifest);
    } catch (const ArgumentError& e) {
        throw IoError(dir + "/world.manifest: " + e.what());
    }
    PlantedWorld world = build_world(config);
    DenoiserModel model;
    NoiseSchedule schedule;
    load_weights(dir + "/" + manifest.get("world", "weights"), model, schedule);
    if (model.layer_count() != world.model.layer_count() ||
        model.d_latent() != world.model.d_latent() || model.d_text() != world.model.d_text() ||
        model.d_attn() != world.model.d_attn() || schedule.steps() != world.schedule.steps()) {
        throw IoError("weights in '" + dir + "' do not match the manifest dimensions");
    }
    world.model = std::move(model);
    world.schedule = std::move(schedule);
    return world;
}

}  // namespace loco
