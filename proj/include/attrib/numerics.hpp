#pragma once

// Dense f64 tensors, a pinned PRNG and a central-difference gradient oracle.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace attrib {

/// Thrown when tensor shapes do not conform for an operation.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation produces or receives a non-finite value.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Row-major dense tensor of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
    static Tensor identity(std::size_t n);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return values_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    std::span<const double> values() const noexcept { return values_; }
    std::span<double> data() noexcept { return values_; }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    // 2-D access; no bounds checks beyond the debug asserts of std::vector.
    double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }
    double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }

    std::span<const double> row(std::size_t r) const;
    std::span<double> row(std::size_t r);

    bool all_finite() const noexcept;
    std::string shape_string() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> values_;
};

Tensor matmul(const Tensor& a, const Tensor& b);

/// Central differences (g(x+h e_i) - g(x-h e_i)) / 2h for every coordinate of x.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& g, const Tensor& x, double h);

/// splitmix64 (Steele, Lea, Flood 2014). State advances by 0x9E3779B97F4A7C15 per draw and
/// the output is the state passed through the mix64 finalizer:
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   z =  z ^ (z >> 31)
/// Doubles take the top 53 bits; bounded integers use Lemire's multiply-shift with rejection.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1).
    double next_double() noexcept;
    /// Uniform integer in [0, bound); bound must be positive.
    std::uint64_t uniform_below(std::uint64_t bound) noexcept;
    /// Standard normal via Box-Muller (no cached spare, one value per two uniforms).
    double next_normal() noexcept;
    bool next_bool(double p_true) noexcept { return next_double() < p_true; }

    std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

/// The splitmix64 finalizer; a bijection on 64-bit integers.
std::uint64_t mix64(std::uint64_t z) noexcept;

/// Per-instance seed. For a fixed base the map id -> seed is injective.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t instance_id) noexcept;

/// Fisher-Yates shuffle of 0..n-1 driven by rng.
std::vector<std::size_t> sample_permutation(SeededRng& rng, std::size_t n);

/// FNV-1a 64-bit hash of a byte string.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;
/// "fnv1a64:" followed by the hash as 16 lowercase hex digits.
std::string checksum_tag(std::string_view bytes);

/// Neumaier-compensated running sum; the error stays O(eps) independent of the term count.
class CompensatedSum {
public:
    void add(double term) noexcept;
    double value() const noexcept { return sum_ + compensation_; }

private:
    double sum_ = 0.0;
    double compensation_ = 0.0;
};

/// 17 significant digits ("%.17g"); parses back to the identical double.
std::string format_double(double v);

}  // namespace attrib
