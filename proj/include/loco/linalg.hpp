#pragma once

// Dense row-major linear algebra and the statistics used across the lab.
// Everything here is a pure function of its inputs.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace loco {

using Vector = std::vector<double>;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    // Throws ShapeError when data.size() != rows * cols.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix from_rows(std::span<const Vector> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    Vector row_vector(std::size_t r) const;
    Vector col_vector(std::size_t c) const;

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    Matrix transpose() const;
    bool all_finite() const noexcept;
    std::string shape_string() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);

// Row vector times matrix: returns v * m (length m.cols()).
Vector row_times(std::span<const double> v, const Matrix& m);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

// Solves a * x = b for symmetric positive definite a via Cholesky.
// NumericError names the failing pivot when a is not SPD.
Matrix solve_spd(const Matrix& a, const Matrix& b);

// argmin_W ||x W - y||_F^2 + lambda ||W - w_hat||_F^2, i.e.
// (x^T x + lambda I)^{-1} (x^T y + lambda w_hat).
Matrix ridge_solve(const Matrix& x, const Matrix& y, const Matrix& w_hat, double lambda);

// Value of the ridge objective above; used by oracles and residual checks.
double ridge_objective(const Matrix& x, const Matrix& y, const Matrix& w_hat, double lambda,
                       const Matrix& w);

// Max-abs residual of the ridge normal equations at w.
double ridge_normal_residual(const Matrix& x, const Matrix& y, const Matrix& w_hat, double lambda,
                             const Matrix& w);

// Row-wise softmax of scale * m, stabilized by subtracting the row max.
Matrix softmax_rows(const Matrix& m, double scale);

// Per-coordinate Welch z statistic of group_a against group_b with unbiased
// variances. Coordinates whose variance term is below 1e-24 score 0.
Vector two_sample_z(std::span<const Vector> group_a, std::span<const Vector> group_b);

}  // namespace loco
