#pragma once

#include <cstdint>
#include <random>

#include "cadtrack/tensor.hpp"

namespace cadtrack {

// Seeded generator used for every parameter init and synthetic draw.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  std::uint64_t next() { return engine_(); }

  template <typename T>
  Tensor<T> normal_tensor(Shape s, double stddev) {
    Tensor<T> t(std::move(s));
    for (auto& v : t.values()) v = static_cast<T>(normal(0.0, stddev));
    return t;
  }

  template <typename T>
  Tensor<T> uniform_tensor(Shape s, double lo, double hi) {
    Tensor<T> t(std::move(s));
    for (auto& v : t.values()) v = static_cast<T>(uniform(lo, hi));
    return t;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cadtrack
