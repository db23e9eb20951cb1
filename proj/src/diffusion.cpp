#include "loco/diffusion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <random>

#include "loco/errors.hpp"
#include "loco/util.hpp"

namespace loco {

namespace {

void require_dim(std::span<const double> v, std::size_t n, const char* what) {
    if (v.size() != n) {
        throw ShapeError(std::string(what) + ": expected length " + std::to_string(n) + ", got " +
                         std::to_string(v.size()));
    }
}

// In-place stable softmax of scale * s.
void softmax_inplace(Vector& s, double scale) {
    double mx = scale * s[0];
    for (double v : s) mx = std::max(mx, scale * v);
    double total = 0.0;
    for (double& v : s) {
        v = std::exp(scale * v - mx);
        total += v;
    }
    for (double& v : s) v /= total;
}

Vector matvec(const Matrix& m, std::span<const double> z) {
    Vector out(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * z[c];
        out[r] = acc;
    }
    return out;
}

// Attention of one latent query over precomputed keys/values. Returns the
// weights through `weights` when non-null.
Vector attend(const CrossAttentionLayer& layer, std::span<const double> z, const Matrix& keys,
              const Matrix& values, Vector* weights_out, Vector* query_out) {
    const std::size_t d_attn = layer.w_q.cols();
    Vector q = row_times(z, layer.w_q);
    Vector s(keys.rows());
    for (std::size_t i = 0; i < keys.rows(); ++i) s[i] = dot(keys.row(i), q);
    softmax_inplace(s, 1.0 / std::sqrt(static_cast<double>(d_attn)));
    Vector out = row_times(s, values);
    for (double& v : out) v *= layer.residual_gain;
    if (weights_out != nullptr) *weights_out = std::move(s);
    if (query_out != nullptr) *query_out = std::move(q);
    return out;
}

}  // namespace

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double first, double last) {
    if (steps == 0) throw ArgumentError("NoiseSchedule::linear: steps must be >= 1");
    NoiseSchedule s;
    s.alpha_bar.resize(steps);
    if (steps == 1) {
        s.alpha_bar[0] = last;
    } else {
        for (std::size_t i = 0; i < steps; ++i) {
            const double f = static_cast<double>(i) / static_cast<double>(steps - 1);
            s.alpha_bar[i] = first + (last - first) * f;
        }
    }
    s.validate();
    return s;
}

double NoiseSchedule::at(std::size_t t) const {
    if (t == 0) return 1.0;
    if (t > alpha_bar.size()) {
        throw ArgumentError("timestep " + std::to_string(t) + " outside 1.." +
                            std::to_string(alpha_bar.size()));
    }
    return alpha_bar[t - 1];
}

void NoiseSchedule::validate() const {
    if (alpha_bar.empty()) throw ArgumentError("noise schedule is empty");
    for (std::size_t i = 0; i < alpha_bar.size(); ++i) {
        const double a = alpha_bar[i];
        if (!(a > 0.0 && a <= 1.0)) {
            throw ArgumentError("alpha_bar[" + std::to_string(i + 1) + "] = " + format_double(a) +
                                " outside (0, 1]");
        }
        if (i > 0 && !(a < alpha_bar[i - 1])) {
            throw ArgumentError("alpha_bar must be strictly decreasing (t = " +
                                std::to_string(i + 1) + ")");
        }
    }
}

void PromptEmbedding::validate() const {
    if (tokens.rows() == 0) throw ArgumentError("prompt embedding has no tokens");
    if (last_subject_index >= tokens.rows()) {
        throw ArgumentError("last_subject_index " + std::to_string(last_subject_index) +
                            " >= token count " + std::to_string(tokens.rows()));
    }
    if (!tokens.all_finite()) throw ArgumentError("prompt embedding has non-finite entries");
}

std::size_t DenoiserModel::d_text() const {
    return layers.empty() ? 0 : layers.front().w_k.rows();
}

std::size_t DenoiserModel::d_attn() const {
    return layers.empty() ? 0 : layers.front().w_q.cols();
}

void DenoiserModel::validate() const {
    if (layers.empty()) throw ArgumentError("model needs at least one layer");
    const std::size_t dl = uncond_map.rows();
    if (uncond_map.cols() != dl) {
        throw ShapeError("uncond_map must be square, got " + uncond_map.shape_string());
    }
    const std::size_t dt = d_text();
    const std::size_t da = d_attn();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& L = layers[l];
        const std::string where = "layer " + std::to_string(l) + ": ";
        if (L.w_q.rows() != dl || L.w_q.cols() != da)
            throw ShapeError(where + "w_q is " + L.w_q.shape_string());
        if (L.w_k.rows() != dt || L.w_k.cols() != da)
            throw ShapeError(where + "w_k is " + L.w_k.shape_string());
        if (L.w_v.rows() != dt || L.w_v.cols() != dl)
            throw ShapeError(where + "w_v is " + L.w_v.shape_string());
        if (!(L.residual_gain > 0.0) || !std::isfinite(L.residual_gain))
            throw ArgumentError(where + "residual_gain must be positive");
    }
}

LayerAssignment LayerAssignment::clean(PromptEmbedding base) {
    LayerAssignment a;
    a.base = std::move(base);
    return a;
}

LayerAssignment LayerAssignment::altered(PromptEmbedding base, PromptEmbedding override,
                                         std::vector<std::size_t> controlling_set) {
    std::sort(controlling_set.begin(), controlling_set.end());
    controlling_set.erase(std::unique(controlling_set.begin(), controlling_set.end()),
                          controlling_set.end());
    LayerAssignment a;
    a.base = std::move(base);
    if (!controlling_set.empty()) a.override = std::move(override);
    a.controlling_set = std::move(controlling_set);
    return a;
}

LayerAssignment LayerAssignment::window(PromptEmbedding base, PromptEmbedding override,
                                        std::size_t start, std::size_t length) {
    std::vector<std::size_t> set(length);
    for (std::size_t i = 0; i < length; ++i) set[i] = start + i;
    return altered(std::move(base), std::move(override), std::move(set));
}

bool LayerAssignment::in_controlling_set(std::size_t layer) const {
    return std::binary_search(controlling_set.begin(), controlling_set.end(), layer);
}

const PromptEmbedding& LayerAssignment::embedding_for(std::size_t layer) const {
    return override && in_controlling_set(layer) ? *override : base;
}

void LayerAssignment::validate(const DenoiserModel& model) const {
    base.validate();
    if (base.tokens.cols() != model.d_text()) {
        throw ShapeError("prompt embedding width " + std::to_string(base.tokens.cols()) +
                         " != d_text " + std::to_string(model.d_text()));
    }
    if (override.has_value() != !controlling_set.empty()) {
        throw ArgumentError("override must be present exactly when the controlling set is nonempty");
    }
    for (std::size_t l : controlling_set) {
        if (l >= model.layer_count()) {
            throw ArgumentError("controlling layer " + std::to_string(l) + " >= layer count " +
                                std::to_string(model.layer_count()));
        }
    }
    if (override) {
        override->validate();
        if (override->tokens.cols() != model.d_text()) {
            throw ShapeError("override embedding width " + std::to_string(override->tokens.cols()) +
                             " != d_text " + std::to_string(model.d_text()));
        }
    }
}

Conditioning::Conditioning(const DenoiserModel& model, const LayerAssignment& assignment) {
    assignment.validate(model);
    keys_.reserve(model.layer_count());
    values_.reserve(model.layer_count());
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        const Matrix& e = assignment.embedding_for(l).tokens;
        keys_.push_back(matmul(e, model.layers[l].w_k));
        values_.push_back(matmul(e, model.layers[l].w_v));
    }
}

Vector add_noise(std::span<const double> x0, std::size_t t, std::span<const double> eps,
                 const NoiseSchedule& schedule) {
    if (t < 1 || t > schedule.steps()) {
        throw ArgumentError("add_noise: t = " + std::to_string(t) + " outside 1.." +
                            std::to_string(schedule.steps()));
    }
    require_dim(eps, x0.size(), "add_noise eps");
    const double a = schedule.at(t);
    const double sa = std::sqrt(a);
    const double sn = std::sqrt(1.0 - a);
    Vector out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = sa * x0[i] + sn * eps[i];
    return out;
}

Vector predict_noise(const DenoiserModel& model, std::span<const double> z_t, std::size_t) {
    require_dim(z_t, model.d_latent(), "predict_noise latent");
    return matvec(model.uncond_map, z_t);
}

Vector predict_noise(const DenoiserModel& model, std::span<const double> z_t,
                     const LayerAssignment& assignment, std::size_t t) {
    const Conditioning cond(model, assignment);
    return predict_noise(model, z_t, cond, t);
}

Vector predict_noise(const DenoiserModel& model, std::span<const double> z_t,
                     const Conditioning& conditioning, std::size_t, const LayerPatch& patch) {
    require_dim(z_t, model.d_latent(), "predict_noise latent");
    Vector z = matvec(model.uncond_map, z_t);
    if (patch.record != nullptr) patch.record->assign(model.layer_count(), Vector{});
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        Vector out;
        if (patch.replay != nullptr && patch.replay_layers != nullptr && (*patch.replay_layers)[l]) {
            out = (*patch.replay)[l];
        } else {
            out = attend(model.layers[l], z, conditioning.keys(l), conditioning.values(l), nullptr,
                         nullptr);
        }
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += out[i];
        if (patch.record != nullptr) (*patch.record)[l] = std::move(out);
    }
    return z;
}

Vector combine_guidance(std::span<const double> cond, std::span<const double> uncond, double alpha) {
    require_dim(uncond, cond.size(), "combine_guidance");
    Vector out(cond.size());
    for (std::size_t i = 0; i < cond.size(); ++i) out[i] = cond[i] + alpha * (cond[i] - uncond[i]);
    return out;
}

Vector guided_noise(const DenoiserModel& model, std::span<const double> z_t,
                    const LayerAssignment& assignment, std::size_t t, const GenerationConfig& cfg) {
    const Vector cond = predict_noise(model, z_t, assignment, t);
    const Vector uncond = predict_noise(model, z_t, t);
    return combine_guidance(cond, uncond, cfg.guidance_scale);
}

Vector ddim_step(std::span<const double> z_t, std::span<const double> eps_hat, std::size_t t,
                 const NoiseSchedule& schedule) {
    require_dim(eps_hat, z_t.size(), "ddim_step");
    const double a = schedule.at(t);
    const double ap = schedule.at(t - 1);
    const double sa = std::sqrt(a);
    const double sn = std::sqrt(1.0 - a);
    const double sap = std::sqrt(ap);
    const double snp = std::sqrt(1.0 - ap);
    Vector out(z_t.size());
    for (std::size_t i = 0; i < z_t.size(); ++i) {
        const double x0 = (z_t[i] - sn * eps_hat[i]) / sa;
        out[i] = sap * x0 + snp * eps_hat[i];
    }
    return out;
}

Vector sample(const DenoiserModel& model, std::span<const double> z_T,
              const LayerAssignment& assignment, const NoiseSchedule& schedule,
              const GenerationConfig& cfg) {
    const Conditioning cond(model, assignment);
    return sample(model, z_T, cond, schedule, cfg);
}

Vector sample(const DenoiserModel& model, std::span<const double> z_T,
              const Conditioning& conditioning, const NoiseSchedule& schedule,
              const GenerationConfig& cfg, SampleHooks* hooks) {
    if (cfg.steps != schedule.steps()) {
        throw ArgumentError("generation steps " + std::to_string(cfg.steps) +
                            " != schedule length " + std::to_string(schedule.steps()));
    }
    require_dim(z_T, model.d_latent(), "sample latent");
    const std::size_t T = schedule.steps();
    if (hooks != nullptr) {
        if (hooks->record != nullptr) hooks->record->assign(T, LayerOutputs{});
        if (hooks->replay != nullptr) {
            if (hooks->replay->size() != T)
                throw ArgumentError("replay cache has " + std::to_string(hooks->replay->size()) +
                                    " steps, expected " + std::to_string(T));
            if (hooks->replay_layers.size() != model.layer_count())
                throw ArgumentError("replay layer mask has wrong length");
        }
    }
    Vector z(z_T.begin(), z_T.end());
    for (std::size_t k = 0; k < T; ++k) {
        const std::size_t t = T - k;
        LayerPatch patch;
        if (hooks != nullptr) {
            if (hooks->record != nullptr) patch.record = &(*hooks->record)[k];
            if (hooks->replay != nullptr) {
                patch.replay = &(*hooks->replay)[k];
                patch.replay_layers = &hooks->replay_layers;
            }
        }
        const Vector c = predict_noise(model, z, conditioning, t, patch);
        const Vector u = predict_noise(model, z, t);
        const Vector e = combine_guidance(c, u, cfg.guidance_scale);
        z = ddim_step(z, e, t, schedule);
    }
    return z;
}

Vector initial_latent(std::size_t d_latent, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(d_latent);
    for (double& v : z) v = normal(rng);
    return z;
}

double denoising_loss(const DenoiserModel& model, std::span<const double> z0,
                      const LayerAssignment& assignment, std::size_t t,
                      std::span<const double> eps, const NoiseSchedule& schedule) {
    const Vector zt = add_noise(z0, t, eps, schedule);
    const Vector p = predict_noise(model, zt, assignment, t);
    double loss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = eps[i] - p[i];
        loss += d * d;
    }
    return loss;
}

std::vector<LayerGradient> denoising_loss_gradient(const DenoiserModel& model,
                                                   std::span<const double> z0,
                                                   const LayerAssignment& assignment, std::size_t t,
                                                   std::span<const double> eps,
                                                   const NoiseSchedule& schedule) {
    const Vector zt = add_noise(z0, t, eps, schedule);
    require_dim(zt, model.d_latent(), "denoising_loss_gradient latent");
    const Conditioning cond(model, assignment);
    const std::size_t M = model.layer_count();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(model.d_attn()));

    // Forward, keeping each layer's input, query and attention weights.
    std::vector<Vector> inputs(M), queries(M), weights(M);
    Vector z = matvec(model.uncond_map, zt);
    for (std::size_t l = 0; l < M; ++l) {
        inputs[l] = z;
        const Vector out =
            attend(model.layers[l], z, cond.keys(l), cond.values(l), &weights[l], &queries[l]);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += out[i];
    }

    // d loss / d output = -2 (eps - p)
    Vector grad(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) grad[i] = -2.0 * (eps[i] - z[i]);

    std::vector<LayerGradient> result(M);
    for (std::size_t l = M; l-- > 0;) {
        const auto& L = model.layers[l];
        const Matrix& e = assignment.embedding_for(l).tokens;
        const Matrix& keys = cond.keys(l);
        const Matrix& values = cond.values(l);
        const Vector& w = weights[l];
        const Vector& q = queries[l];
        const std::size_t n = w.size();

        Vector g_out(grad.size());
        for (std::size_t i = 0; i < grad.size(); ++i) g_out[i] = L.residual_gain * grad[i];

        // out = w^T V
        Matrix d_values(n, values.cols());
        Vector d_w(n);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < values.cols(); ++c) d_values(r, c) = w[r] * g_out[c];
            d_w[r] = dot(values.row(r), g_out);
        }
        const double wdw = dot(w, d_w);
        Vector d_s(n);
        for (std::size_t r = 0; r < n; ++r) d_s[r] = w[r] * (d_w[r] - wdw) * inv_sqrt_d;

        // s = K q
        Vector d_q(q.size(), 0.0);
        Matrix d_keys(n, q.size());
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < q.size(); ++c) {
                d_keys(r, c) = d_s[r] * q[c];
                d_q[c] += d_s[r] * keys(r, c);
            }
        }

        const Matrix et = e.transpose();
        result[l].w_v = matmul(et, d_values);
        result[l].w_k = matmul(et, d_keys);
        Matrix d_wq(L.w_q.rows(), L.w_q.cols());
        const Vector& zin = inputs[l];
        for (std::size_t r = 0; r < d_wq.rows(); ++r)
            for (std::size_t c = 0; c < d_wq.cols(); ++c) d_wq(r, c) = zin[r] * d_q[c];
        result[l].w_q = std::move(d_wq);

        // q = z W_q feeds back into the residual stream.
        for (std::size_t r = 0; r < grad.size(); ++r) grad[r] += dot(L.w_q.row(r), d_q);
    }
    return result;
}

namespace {

constexpr char kMagic[5] = {'L', 'O', 'C', 'O', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

void put_f64(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffU));
}

void put_matrix(std::string& out, const Matrix& m) {
    for (double v : m.data()) put_f64(out, v);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > 0xffffffffULL) throw ArgumentError(std::string(what) + " does not fit in 32 bits");
    return static_cast<std::uint32_t>(v);
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    void need(std::size_t n, const char* what) const {
        if (pos_ + n > bytes_.size()) {
            throw IoError(std::string("LOCO1: truncated while reading ") + what + " at byte " +
                          std::to_string(pos_));
        }
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f64(const char* what) {
        need(8, what);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(bits);
    }
    Matrix matrix(std::size_t rows, std::size_t cols, const char* what) {
        need(rows * cols * 8, what);
        Matrix m(rows, cols);
        for (double& v : m.data()) v = f64(what);
        return m;
    }
    std::string_view take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }
    std::size_t pos() const { return pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_weights(const DenoiserModel& model, const NoiseSchedule& schedule) {
    model.validate();
    schedule.validate();
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, checked_u32(model.layer_count(), "layer count"));
    put_u32(out, checked_u32(model.d_latent(), "d_latent"));
    put_u32(out, checked_u32(model.d_text(), "d_text"));
    put_u32(out, checked_u32(model.d_attn(), "d_attn"));
    put_u32(out, checked_u32(schedule.steps(), "steps"));
    for (const auto& L : model.layers) {
        put_matrix(out, L.w_q);
        put_matrix(out, L.w_k);
        put_matrix(out, L.w_v);
        put_f64(out, L.residual_gain);
    }
    put_matrix(out, model.uncond_map);
    for (double a : schedule.alpha_bar) put_f64(out, a);
    return out;
}

void decode_weights(std::string_view bytes, DenoiserModel& model, NoiseSchedule& schedule) {
    Reader in(bytes);
    if (in.take(sizeof kMagic, "magic") != std::string_view(kMagic, sizeof kMagic)) {
        throw IoError("LOCO1: bad magic bytes");
    }
    const std::size_t M = in.u32("layer count");
    const std::size_t dl = in.u32("d_latent");
    const std::size_t dt = in.u32("d_text");
    const std::size_t da = in.u32("d_attn");
    const std::size_t T = in.u32("steps");
    if (M == 0 || dl == 0 || dt == 0 || da == 0 || T == 0) throw IoError("LOCO1: zero dimension in header");
    const std::size_t expected =
        sizeof kMagic + 20 + 8 * (M * (dl * da + dt * da + dt * dl + 1) + dl * dl + T);
    if (bytes.size() != expected) {
        throw IoError("LOCO1: size " + std::to_string(bytes.size()) + " does not match header (" +
                      std::to_string(expected) + " bytes expected)");
    }
    DenoiserModel m;
    m.layers.resize(M);
    for (auto& L : m.layers) {
        L.w_q = in.matrix(dl, da, "w_q");
        L.w_k = in.matrix(dt, da, "w_k");
        L.w_v = in.matrix(dt, dl, "w_v");
        L.residual_gain = in.f64("residual_gain");
    }
    m.uncond_map = in.matrix(dl, dl, "uncond_map");
    NoiseSchedule s;
    s.alpha_bar.resize(T);
    for (double& a : s.alpha_bar) a = in.f64("schedule");
    for (const auto& L : m.layers) {
        if (!L.w_q.all_finite() || !L.w_k.all_finite() || !L.w_v.all_finite())
            throw IoError("LOCO1: non-finite weight");
    }
    if (!m.uncond_map.all_finite()) throw IoError("LOCO1: non-finite weight");
    try {
        m.validate();
        s.validate();
    } catch (const std::exception& e) {
        throw IoError(std::string("LOCO1: invalid contents: ") + e.what());
    }
    model = std::move(m);
    schedule = std::move(s);
}

void save_weights(const std::string& path, const DenoiserModel& model,
                  const NoiseSchedule& schedule) {
    write_file(path, encode_weights(model, schedule));
}

void load_weights(const std::string& path, DenoiserModel& model, NoiseSchedule& schedule) {
    decode_weights(read_file(path), model, schedule);
}

}  // namespace loco
