#include "loco/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "loco/errors.hpp"

namespace loco {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shapes " + a.shape_string() + " and " +
                         b.shape_string() + " differ");
    }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("Matrix: " + std::to_string(data_.size()) + " values for shape " +
                         shape_string());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

Matrix Matrix::from_rows(std::span<const Vector> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.front().size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

Vector Matrix::row_vector(std::size_t r) const {
    auto s = row(r);
    return Vector(s.begin(), s.end());
}

Vector Matrix::col_vector(std::size_t c) const {
    Vector v(rows_);
    for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
    return v;
}

Matrix Matrix::transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions of " + a.shape_string() + " and " +
                         b.shape_string() + " do not agree");
    }
    Matrix out(a.rows(), b.cols());
    // i-k-j order; each output entry accumulates over k in increasing order.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            auto src = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
        }
    }
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out = a;
    auto d = out.data();
    auto s = b.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "subtract");
    Matrix out = a;
    auto d = out.data();
    auto s = b.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= s[i];
    return out;
}

Matrix scale(const Matrix& a, double s) {
    Matrix out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

double frobenius_norm(const Matrix& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v * v;
    return std::sqrt(acc);
}

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

Vector row_times(std::span<const double> v, const Matrix& m) {
    if (v.size() != m.rows()) {
        throw ShapeError("row_times: vector of length " + std::to_string(v.size()) +
                         " against " + m.shape_string());
    }
    Vector out(m.cols(), 0.0);
    for (std::size_t k = 0; k < m.rows(); ++k) {
        const double vk = v[k];
        auto src = m.row(k);
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += vk * src[j];
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Matrix solve_spd(const Matrix& a, const Matrix& b) {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw ShapeError("solve_spd: matrix " + a.shape_string() + " is not square");
    if (b.rows() != n) {
        throw ShapeError("solve_spd: right-hand side " + b.shape_string() + " against " +
                         a.shape_string());
    }

    // Lower Cholesky factor, a = L L^T.
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0) || !std::isfinite(diag)) {
            throw NumericError("solve_spd: matrix is not positive definite (pivot " +
                               std::to_string(j) + " = " + std::to_string(diag) + ")");
        }
        const double ljj = std::sqrt(diag);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }

    Matrix x = b;
    const std::size_t m = b.cols();
    // Forward substitution L y = b.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) {
            const double lik = l(i, k);
            for (std::size_t c = 0; c < m; ++c) x(i, c) -= lik * x(k, c);
        }
        const double inv = 1.0 / l(i, i);
        for (std::size_t c = 0; c < m; ++c) x(i, c) *= inv;
    }
    // Back substitution L^T x = y.
    for (std::size_t ii = n; ii-- > 0;) {
        for (std::size_t k = ii + 1; k < n; ++k) {
            const double lki = l(k, ii);
            for (std::size_t c = 0; c < m; ++c) x(ii, c) -= lki * x(k, c);
        }
        const double inv = 1.0 / l(ii, ii);
        for (std::size_t c = 0; c < m; ++c) x(ii, c) *= inv;
    }
    return x;
}

Matrix ridge_solve(const Matrix& x, const Matrix& y, const Matrix& w_hat, double lambda) {
    if (x.rows() != y.rows()) {
        throw ShapeError("ridge_solve: x " + x.shape_string() + " and y " + y.shape_string() +
                         " have different row counts");
    }
    if (w_hat.rows() != x.cols() || w_hat.cols() != y.cols()) {
        throw ShapeError("ridge_solve: w_hat " + w_hat.shape_string() + " does not match " +
                         std::to_string(x.cols()) + "x" + std::to_string(y.cols()));
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw ArgumentError("ridge_solve: lambda must be finite and non-negative, got " +
                            std::to_string(lambda));
    }
    const Matrix xt = x.transpose();
    Matrix gram = matmul(xt, x);
    for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += lambda;
    Matrix rhs = matmul(xt, y);
    if (lambda != 0.0) rhs = add(rhs, scale(w_hat, lambda));
    try {
        return solve_spd(gram, rhs);
    } catch (const NumericError& e) {
        throw NumericError(std::string("ridge_solve: x^T x + lambda I is singular; ") + e.what());
    }
}

double ridge_objective(const Matrix& x, const Matrix& y, const Matrix& w_hat, double lambda,
                       const Matrix& w) {
    const double fit = frobenius_norm(subtract(matmul(x, w), y));
    const double reg = frobenius_norm(subtract(w, w_hat));
    return fit * fit + lambda * reg * reg;
}

double ridge_normal_residual(const Matrix& x, const Matrix& y, const Matrix& w_hat, double lambda,
                             const Matrix& w) {
    const Matrix xt = x.transpose();
    Matrix lhs = matmul(matmul(xt, x), w);
    lhs = add(lhs, scale(w, lambda));
    Matrix rhs = add(matmul(xt, y), scale(w_hat, lambda));
    return max_abs(subtract(lhs, rhs));
}

Matrix softmax_rows(const Matrix& m, double scale_factor) {
    if (!std::isfinite(scale_factor)) throw ArgumentError("softmax_rows: scale must be finite");
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto src = m.row(r);
        auto dst = out.row(r);
        if (src.empty()) continue;
        double mx = scale_factor * src[0];
        for (double v : src) mx = std::max(mx, scale_factor * v);
        double total = 0.0;
        for (std::size_t c = 0; c < src.size(); ++c) {
            dst[c] = std::exp(scale_factor * src[c] - mx);
            total += dst[c];
        }
        for (double& v : dst) v /= total;
    }
    return out;
}

Vector two_sample_z(std::span<const Vector> group_a, std::span<const Vector> group_b) {
    if (group_a.size() < 2 || group_b.size() < 2) {
        throw ArgumentError("two_sample_z: each group needs at least 2 samples (got " +
                            std::to_string(group_a.size()) + " and " +
                            std::to_string(group_b.size()) + ")");
    }
    const std::size_t d = group_a.front().size();
    auto check = [d](std::span<const Vector> g) {
        for (const auto& v : g)
            if (v.size() != d) throw ShapeError("two_sample_z: inconsistent vector lengths");
    };
    check(group_a);
    check(group_b);

    auto moments = [d](std::span<const Vector> g, Vector& mean, Vector& var) {
        mean.assign(d, 0.0);
        var.assign(d, 0.0);
        for (const auto& v : g)
            for (std::size_t i = 0; i < d; ++i) mean[i] += v[i];
        for (double& m : mean) m /= static_cast<double>(g.size());
        for (const auto& v : g)
            for (std::size_t i = 0; i < d; ++i) {
                const double dev = v[i] - mean[i];
                var[i] += dev * dev;
            }
        for (double& s : var) s /= static_cast<double>(g.size() - 1);
    };

    Vector mean_a, var_a, mean_b, var_b;
    moments(group_a, mean_a, var_a);
    moments(group_b, mean_b, var_b);
    const double n_a = static_cast<double>(group_a.size());
    const double n_b = static_cast<double>(group_b.size());

    Vector z(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        const double pooled = var_a[i] / n_a + var_b[i] / n_b;
        if (pooled < 1e-24) continue;
        z[i] = (mean_a[i] - mean_b[i]) / std::sqrt(pooled);
    }
    return z;
}

}  // namespace loco
