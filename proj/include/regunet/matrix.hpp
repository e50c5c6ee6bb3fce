// Dense 2-D double matrices, elementwise/matmul/reduction kernels, and the
// seeded random generator used for every stochastic choice in the library.
//
// RNG: xoshiro256++ seeded through splitmix64. The integer stream is
// bit-identical on every platform; uniforms are derived purely from the top
// 53 bits, normals via Box-Muller (bit-exact given a correctly rounded libm).
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace regunet {

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Row-major dense matrix of doubles. Never stores NaN or infinity: every
/// constructor and every operation in this header validates its result and
/// throws NumericError instead of storing a non-finite value.
class Matrix {
public:
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {
        check_dims(rows, cols);
        if (!std::isfinite(fill)) throw NumericError("Matrix: non-finite fill value");
    }

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), data_(std::move(values)) {
        check_dims(rows, cols);
        if (data_.size() != rows * cols)
            throw ShapeError("Matrix: data length " + std::to_string(data_.size()) +
                             " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
        for (double v : data_)
            if (!std::isfinite(v)) throw NumericError("Matrix: non-finite entry in constructor");
    }

    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows_ = init.size();
        cols_ = rows_ ? init.begin()->size() : 0;
        check_dims(rows_, cols_);
        data_.reserve(rows_ * cols_);
        for (const auto& row : init) {
            if (row.size() != cols_) throw ShapeError("Matrix: ragged initializer");
            for (double v : row) {
                if (!std::isfinite(v)) throw NumericError("Matrix: non-finite entry in initializer");
                data_.push_back(v);
            }
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

private:
    static void check_dims(std::size_t rows, std::size_t cols) {
        if (rows == 0 || cols == 0) throw ShapeError("Matrix: dimensions must be positive");
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

namespace detail {

inline void check_finite(const Matrix& m, const char* op) {
    const double* p = m.data();
    for (std::size_t i = 0, n = m.size(); i < n; ++i)
        if (!std::isfinite(p[i]))
            throw NumericError(std::string(op) + ": produced a non-finite value");
}

} // namespace detail

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: shape mismatch (" + a.shape_str() + ")*(" + b.shape_str() + ")");
    Matrix c(a.rows(), b.cols());
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b.row(p);
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
    detail::check_finite(c, "matmul");
    return c;
}

enum class EwOp { add, sub, mul };

inline Matrix elementwise(const Matrix& a, const Matrix& b, EwOp op) {
    if (!a.same_shape(b))
        throw ShapeError("elementwise: shape mismatch (" + a.shape_str() + ") vs (" + b.shape_str() + ")");
    Matrix c(a.rows(), a.cols());
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    const std::size_t n = a.size();
    switch (op) {
        case EwOp::add: for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] + pb[i]; break;
        case EwOp::sub: for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] - pb[i]; break;
        case EwOp::mul: for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] * pb[i]; break;
    }
    detail::check_finite(c, "elementwise");
    return c;
}

inline Matrix add(const Matrix& a, const Matrix& b) { return elementwise(a, b, EwOp::add); }
inline Matrix sub(const Matrix& a, const Matrix& b) { return elementwise(a, b, EwOp::sub); }
inline Matrix mul(const Matrix& a, const Matrix& b) { return elementwise(a, b, EwOp::mul); }

inline double reduce_sum(const Matrix& a) {
    double s = 0.0;
    const double* p = a.data();
    for (std::size_t i = 0, n = a.size(); i < n; ++i) s += p[i];
    if (!std::isfinite(s)) throw NumericError("reduce_sum: produced a non-finite value");
    return s;
}

inline Matrix col_mean(const Matrix& a) {
    Matrix m(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* r = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) m(0, j) += r[j];
    }
    const double inv_n = 1.0 / static_cast<double>(a.rows());
    for (std::size_t j = 0; j < a.cols(); ++j) m(0, j) *= inv_n;
    detail::check_finite(m, "col_mean");
    return m;
}

/// Population variance (divide by n) per column.
inline Matrix col_var(const Matrix& a) {
    Matrix mean = col_mean(a);
    Matrix v(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* r = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double d = r[j] - mean(0, j);
            v(0, j) += d * d;
        }
    }
    const double inv_n = 1.0 / static_cast<double>(a.rows());
    for (std::size_t j = 0; j < a.cols(); ++j) v(0, j) *= inv_n;
    detail::check_finite(v, "col_var");
    return v;
}

inline Matrix col_sum(const Matrix& a) {
    Matrix s(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* r = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) s(0, j) += r[j];
    }
    detail::check_finite(s, "col_sum");
    return s;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline Matrix scale(const Matrix& a, double s) {
    Matrix c(a.rows(), a.cols());
    const double* pa = a.data();
    double* pc = c.data();
    for (std::size_t i = 0, n = a.size(); i < n; ++i) pc[i] = pa[i] * s;
    detail::check_finite(c, "scale");
    return c;
}

/// a + row broadcast down every row of a; row must be 1 x a.cols().
inline Matrix add_row_vector(const Matrix& a, const Matrix& row_vec) {
    if (row_vec.rows() != 1 || row_vec.cols() != a.cols())
        throw ShapeError("add_row_vector: expected 1x" + std::to_string(a.cols()) +
                         ", got " + row_vec.shape_str());
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ra = a.row(i);
        double* rc = c.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) rc[j] = ra[j] + row_vec(0, j);
    }
    detail::check_finite(c, "add_row_vector");
    return c;
}

/// Deterministic xoshiro256++ generator. Identical seeds give identical
/// streams on every platform; the state layout is part of the library's
/// reproducibility contract.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {
        // splitmix64 expansion of the user seed into the 256-bit state
        std::uint64_t z = seed;
        for (auto& word : state_) {
            z += 0x9e3779b97f4a7c15ULL;
            std::uint64_t x = z;
            x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
            x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
            word = x ^ (x >> 31);
        }
    }

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1) from the top 53 bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    /// Standard normal via Box-Muller; the second draw of each pair is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

enum class InitScheme { he_normal, xavier_uniform, zeros };

/// fan_in = rows, fan_out = cols, matching the fan_in x fan_out weight layout.
inline Matrix seeded_init(std::size_t rows, std::size_t cols, InitScheme scheme, Rng& rng) {
    Matrix m(rows, cols);
    switch (scheme) {
        case InitScheme::zeros:
            break;
        case InitScheme::he_normal: {
            const double sd = std::sqrt(2.0 / static_cast<double>(rows));
            for (std::size_t i = 0, n = m.size(); i < n; ++i) m.data()[i] = rng.normal() * sd;
            break;
        }
        case InitScheme::xavier_uniform: {
            const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
            for (std::size_t i = 0, n = m.size(); i < n; ++i) m.data()[i] = rng.uniform(-limit, limit);
            break;
        }
    }
    detail::check_finite(m, "seeded_init");
    return m;
}

} // namespace regunet
