#pragma once

#include "ttae/tensor.hpp"

#include <cstdint>
#include <random>

namespace ttae {

/// Seeded generator shared by every stochastic routine in the library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal(double mean = 0.0, double stddev = 1.0) { return std::normal_distribution<double>(mean, stddev)(engine_); }
    std::uint64_t next() { return engine_(); }
    /// Uniform integer in [0, n).
    std::int64_t index(std::int64_t n) { return std::uniform_int_distribution<std::int64_t>(0, n - 1)(engine_); }

    Tensor normal_tensor(Shape shape, double stddev = 1.0);
    Tensor uniform_tensor(Shape shape, double lo, double hi);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

inline Tensor Rng::normal_tensor(Shape shape, double stddev) {
    std::vector<Real> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) x = static_cast<Real>(normal(0.0, stddev));
    return Tensor(std::move(shape), std::move(v));
}

inline Tensor Rng::uniform_tensor(Shape shape, double lo, double hi) {
    std::vector<Real> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) x = static_cast<Real>(uniform(lo, hi));
    return Tensor(std::move(shape), std::move(v));
}

}  // namespace ttae
