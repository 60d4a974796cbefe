#include "axial/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace axial {

namespace {
constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(seed_ + counter_ * kGamma);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::int64_t Rng::uniform_int(std::int64_t n) {
  if (n <= 0) throw UsageError("uniform_int needs a positive bound");
  return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
}

Rng Rng::split(std::uint64_t stream) const {
  return Rng(mix64(seed_ ^ mix64(stream + 0x632BE59BD9B4E019ULL)));
}

namespace detail {

std::int32_t categorical_from_logits(std::span<const double> logits, double temperature, double u) {
  if (logits.empty()) throw UsageError("categorical_sample: empty logits");
  if (temperature < 0.0) throw UsageError("categorical_sample: negative temperature");
  double mx = -std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (std::isnan(logits[k])) throw NumericError("categorical_sample: NaN logit");
    if (logits[k] > mx) {
      mx = logits[k];
      arg = k;
    }
  }
  if (!std::isfinite(mx)) throw NumericError("categorical_sample: no finite logit");
  if (temperature == 0.0) return static_cast<std::int32_t>(arg);

  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp((logits[k] - mx) / temperature);
    total += p[k];
  }
  const double target = u * total;
  double cum = 0.0;
  std::size_t last_positive = arg;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] <= 0.0) continue;
    cum += p[k];
    last_positive = k;
    if (target < cum) return static_cast<std::int32_t>(k);
  }
  return static_cast<std::int32_t>(last_positive);
}

}  // namespace detail
}  // namespace axial
