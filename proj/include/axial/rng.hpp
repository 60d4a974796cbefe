#pragma once

#include <cstdint>
#include <span>

#include "axial/tensor.hpp"

namespace axial {

/// Counter-based generator: draw n is a pure function of (seed, n), so any
/// two consumers that agree on the draw order see identical values on every
/// platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();

  /// Standard normal via Box-Muller; consumes two uniforms.
  double normal();

  /// Uniform integer in [0, n).
  std::int64_t uniform_int(std::int64_t n);

  /// Independent child stream.
  Rng split(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z);

namespace detail {
std::int32_t categorical_from_logits(std::span<const double> logits, double temperature, double u);
}

/// Draws a symbol from softmax(logits / temperature) by inverse CDF on one
/// uniform draw. temperature == 0 selects the argmax (lowest index on ties);
/// the uniform is still consumed so draw counts do not depend on temperature.
template <typename Scalar>
std::int32_t categorical_sample(std::span<const Scalar> logits, double temperature, Rng& rng) {
  std::vector<double> z(logits.begin(), logits.end());
  const double u = rng.uniform();
  return detail::categorical_from_logits(z, temperature, u);
}

template <typename Scalar>
std::int32_t categorical_sample(const Tensor<Scalar>& logits, double temperature, Rng& rng) {
  return categorical_sample(logits.values(), temperature, rng);
}

}  // namespace axial
