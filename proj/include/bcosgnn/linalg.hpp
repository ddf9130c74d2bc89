#pragma once

// Dense row-major matrices, a handful of kernels, and a portable seeded RNG.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "bcosgnn/error.hpp"

namespace bcosgnn {

using Vector = std::vector<double>;

/// Rows with a Euclidean norm below this are treated as zero.
inline constexpr double kRowNormFloor = 1e-12;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        detail::require(data_.size() == rows_ * cols_, "Matrix: data length != rows*cols");
    }
    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows_ = init.size();
        cols_ = rows_ ? init.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& r : init) {
            detail::require(r.size() == cols_, "Matrix: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
    static Matrix column(const Vector& v) { return Matrix(v.size(), 1, v); }
    static Matrix row_vector(const Vector& v) { return Matrix(1, v.size(), v); }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    Matrix& operator+=(const Matrix& o) {
        detail::require(same_shape(o), "Matrix +=: shape mismatch");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Matrix& operator-=(const Matrix& o) {
        detail::require(same_shape(o), "Matrix -=: shape mismatch");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Matrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }
    /// this += s * o
    void add_scaled(const Matrix& o, double s) {
        detail::require(same_shape(o), "Matrix add_scaled: shape mismatch");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
    }

    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(Matrix a, double s) { return a *= s; }

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double frobenius_norm(const Matrix& m) { return norm(m.data()); }

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    detail::require(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

inline Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
    return t;
}

namespace detail {

using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EigenMap = Eigen::Map<EigenRowMajor>;
using EigenConstMap = Eigen::Map<const EigenRowMajor>;

inline EigenConstMap view(const Matrix& m) { return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())}; }
inline EigenMap view(Matrix& m) { return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())}; }

}  // namespace detail

/// out += a * b  (shapes must already agree).
inline void matmul_accumulate(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.empty() || b.empty()) return;
    detail::view(out).noalias() += detail::view(a) * detail::view(b);
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ContractViolation("matmul: dimension mismatch (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
    Matrix out(a.rows(), b.cols());
    matmul_accumulate(a, b, out);
    return out;
}

/// a * b^T
inline Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    detail::require(a.cols() == b.cols(), "matmul_bt: dimension mismatch");
    Matrix out(a.rows(), b.rows());
    if (!a.empty() && !b.empty()) detail::view(out).noalias() = detail::view(a) * detail::view(b).transpose();
    return out;
}

/// a^T * b
inline Matrix matmul_at(const Matrix& a, const Matrix& b) {
    detail::require(a.rows() == b.rows(), "matmul_at: dimension mismatch");
    Matrix out(a.cols(), b.cols());
    if (!a.empty() && !b.empty()) detail::view(out).noalias() = detail::view(a).transpose() * detail::view(b);
    return out;
}

inline Vector matvec(const Matrix& a, std::span<const double> x) {
    detail::require(a.cols() == x.size(), "matvec: dimension mismatch");
    Vector y(a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r) y[r] = dot(a.row(r), x);
    return y;
}

/// Unit-normalize every row. Rows below the norm floor are rejected, never rescaled.
inline Matrix row_l2_normalize(const Matrix& m) {
    Matrix out = m;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double n = norm(m.row(r));
        if (!(n >= kRowNormFloor)) throw ZeroRowError(r);
        for (double& v : out.row(r)) v /= n;
    }
    return out;
}

/// Cosine between x and each (unit-norm) row of w_hat, clamped to [-1, 1]; zeros when x = 0.
inline Vector cosine_rows(std::span<const double> x, const Matrix& w_hat) {
    detail::require(x.size() == w_hat.cols(), "cosine_rows: dimension mismatch");
    Vector out(w_hat.rows(), 0.0);
    const double xn = norm(x);
    if (xn == 0.0) return out;
    for (std::size_t j = 0; j < w_hat.rows(); ++j)
        out[j] = std::clamp(dot(x, w_hat.row(j)) / xn, -1.0, 1.0);
    return out;
}

/// Deterministic generator: std::mt19937_64 as the bit source (its output sequence is fixed by
/// the standard), with hand-written distributions so streams do not depend on the standard
/// library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t uniform_index(std::uint64_t n) {
        detail::require(n > 0, "Rng::uniform_index: empty range");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v;
        do v = engine_();
        while (v >= limit);
        return v % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(i)]);
    }

    /// Independent child seed for stream `index` (splitmix64 finalizer).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t index) {
        std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

inline Matrix random_uniform(std::size_t rows, std::size_t cols, double a, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.uniform(-a, a);
    return m;
}

}  // namespace bcosgnn
