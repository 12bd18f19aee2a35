#include "attrib/numerics.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

namespace attrib {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const std::vector<std::size_t>& shape) {
    for (std::size_t d : shape) {
        if (d == 0) {
            throw ShapeError("tensor dimensions must be positive");
        }
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    values_.assign(product(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    check_shape(shape_);
    if (values_.size() != product(shape_)) {
        throw ShapeError("tensor of shape " + shape_string() + " needs " + std::to_string(product(shape_)) +
                         " values, got " + std::to_string(values_.size()));
    }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        t.at(i, i) = 1.0;
    }
    return t;
}

std::span<const double> Tensor::row(std::size_t r) const {
    const std::size_t cols = shape_.at(1);
    return std::span<const double>(values_).subspan(r * cols, cols);
}

std::span<double> Tensor::row(std::size_t r) {
    const std::size_t cols = shape_.at(1);
    return std::span<double>(values_).subspan(r * cols, cols);
}

bool Tensor::all_finite() const noexcept {
    for (double v : values_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

std::string Tensor::shape_string() const {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        out << (i ? "x" : "") << shape_[i];
    }
    out << ']';
    return out.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
    }
    const std::size_t m = a.dim(0);
    const std::size_t k = a.dim(1);
    const std::size_t n = b.dim(1);
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        auto out = c.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a.at(i, p);
            auto brow = b.row(p);
            for (std::size_t j = 0; j < n; ++j) {
                out[j] += aip * brow[j];
            }
        }
    }
    return c;
}

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& g, const Tensor& x, double h) {
    if (!(h > 0.0)) {
        throw std::invalid_argument("finite_diff_gradient: step must be positive");
    }
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double up = g(probe);
        probe[i] = orig - h;
        const double down = g(probe);
        probe[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("finite_diff_gradient: non-finite function value at coordinate " + std::to_string(i));
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t SeededRng::next_u64() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix64(state_);
}

double SeededRng::next_double() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::uniform_below(std::uint64_t bound) noexcept {
    // Lemire, "Fast Random Integer Generation in an Interval" (2019).
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
        const std::uint64_t threshold = (0 - bound) % bound;
        while (low < threshold) {
            m = static_cast<unsigned __int128>(next_u64()) * bound;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

double SeededRng::next_normal() noexcept {
    const double u1 = 1.0 - next_double();  // (0, 1]
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t instance_id) noexcept {
    // base + odd * (id + 1) is injective in id; mix64 is a bijection.
    return mix64(mix64(base) + 0x9E3779B97F4A7C15ULL * (instance_id + 1));
}

std::vector<std::size_t> sample_permutation(SeededRng& rng, std::size_t n) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_below(i));
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::string checksum_tag(std::string_view bytes) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    return std::string("fnv1a64:") + buf;
}

void CompensatedSum::add(double term) noexcept {
    const double t = sum_ + term;
    if (std::abs(sum_) >= std::abs(term)) {
        compensation_ += (sum_ - t) + term;
    } else {
        compensation_ += (term - t) + sum_;
    }
    sum_ = t;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace attrib
