#pragma once

// Empirical checks of the model's structure: perturbation-based causality
// audits, attention scaling benchmarks, and naive vs semi-parallel sampler
// equivalence.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "axial/attention.hpp"
#include "axial/model.hpp"
#include "axial/parallel.hpp"
#include "axial/sampler.hpp"

namespace axial {

// ---------------------------------------------------------------------------
// Causality

/// Positions are numbered t = c*H*W + i*W + j (raster order within a
/// channel, channels in order).
struct CausalityReport {
  Index height = 0, width = 0, channels = 0;
  Index trials = 0;
  /// dep[s * T + t]: perturbing input s changed some logit at t.
  std::vector<std::uint8_t> dep;
  bool pass = true;
  /// First (s, t) with s >= t and a detected dependency.
  std::optional<std::pair<Index, Index>> first_violation;

  Index positions() const { return height * width * channels; }
  bool depends(Index s, Index t) const { return dep[static_cast<std::size_t>(s * positions() + t)] != 0; }
  Index dependency_count() const;
  std::string summary() const;
  std::string csv() const;
};

struct Position {
  Index row = 0, col = 0, channel = 0;
};

Position position_of(Index t, Index height, Index width);

/// For every input position s and trial k, replaces x[s] by a different
/// random symbol and records which logit positions change (exact
/// comparison). Passes iff no position depends on itself or a later one.
template <typename Scalar>
CausalityReport causality_audit(const AxialTransformer<Scalar>& model, Index trials, std::uint64_t seed) {
  const auto& cfg = model.config();
  CausalityReport report;
  report.height = cfg.height;
  report.width = cfg.width;
  report.channels = cfg.channels;
  report.trials = trials;
  const Index total = report.positions();
  const Index hw = cfg.height * cfg.width;
  report.dep.assign(static_cast<std::size_t>(total * total), 0);

  Rng base_rng(seed);
  DataTensor base({cfg.height, cfg.width, cfg.channels});
  for (auto& v : base.values()) v = static_cast<std::int32_t>(base_rng.uniform_int(cfg.vocab));

  auto all_logits = [&](const DataTensor& x) {
    std::vector<Tensor<Scalar>> out;
    for (Index c = 0; c < cfg.channels; ++c) out.push_back(model.logits(x, c));
    return out;
  };
  const auto reference = all_logits(base);

  if (cfg.vocab > 1) {
    parallel_for(static_cast<std::size_t>(total), [&](std::size_t su) {
      const auto s = static_cast<Index>(su);
      const Position p = position_of(s, cfg.height, cfg.width);
      for (Index k = 0; k < trials; ++k) {
        // Trial k of position s uses its own stream, so fewer trials is
        // always a prefix of more trials.
        Rng rng = Rng(seed).split(static_cast<std::uint64_t>(s * trials + k + 1));
        DataTensor x = base;
        auto& sym = x(p.row, p.col, p.channel);
        sym = static_cast<std::int32_t>((sym + 1 + rng.uniform_int(cfg.vocab - 1)) % cfg.vocab);
        const auto logits = all_logits(x);
        for (Index c = 0; c < cfg.channels; ++c) {
          const auto& a = logits[static_cast<std::size_t>(c)];
          const auto& b = reference[static_cast<std::size_t>(c)];
          for (Index q = 0; q < hw; ++q) {
            bool changed = false;
            for (Index v = 0; v < cfg.vocab && !changed; ++v) {
              changed = a[q * cfg.vocab + v] != b[q * cfg.vocab + v];
            }
            if (changed) report.dep[static_cast<std::size_t>(s * total + c * hw + q)] = 1;
          }
        }
      }
    });
  }

  for (Index s = 0; s < total && report.pass; ++s) {
    for (Index t = 0; t <= s; ++t) {
      if (report.depends(s, t)) {
        report.pass = false;
        report.first_violation = {s, t};
        break;
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Scaling benchmark

struct BenchRow {
  Index extent = 0;
  AttentionMode mode = AttentionMode::axial;
  std::uint64_t pairs = 0;
  double ms = 0.0;
};

struct ScalingResult {
  std::vector<BenchRow> rows;
  double slope = 0.0;
};

struct BenchOptions {
  unsigned rank = 2;
  Index head_dim = 16;
  /// Each timing sample repeats the kernel until at least this long.
  double min_sample_ms = 20.0;
  int samples = 5;
  std::uint64_t seed = 0;
};

/// Times the attention core (scores, softmax, weighted sum; no
/// projections) for each extent S: axial mode attends along one axis of an
/// S^rank tensor, full mode over all S^rank elements at once. Reports the
/// per-call minimum over samples and the least-squares slope of log(ms)
/// against log(S).
ScalingResult scaling_bench(std::span<const Index> extents, AttentionMode mode, const BenchOptions& opt = {});

/// Least-squares slope of log(y) on log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

inline constexpr const char* kBenchHeader = "S,mode,pairs,ms";
std::string bench_csv(std::span<const BenchRow> rows, bool header = true);
const char* mode_name(AttentionMode mode);
AttentionMode parse_attention_mode(const std::string& name);

// ---------------------------------------------------------------------------
// Sampler equivalence

struct EquivalenceCase {
  ModelConfig config;
  std::uint64_t seed = 0;
  bool identical = true;
  double max_logit_diff = 0.0;
  std::optional<Position> first_divergence;
  double divergence_logit_diff = 0.0;
};

struct EquivalenceReport {
  std::vector<EquivalenceCase> cases;
  bool pass = true;
  std::string summary() const;
};

struct EquivalenceOptions {
  double temperature = 1.0;
  std::uint64_t model_seed = 1234;
  ModelFaults faults;
};

/// Samples every (config, seed) pair with both samplers from the same seed
/// on a randomly initialized real64 model and compares symbols and the
/// logits behind every draw.
EquivalenceReport sampler_equivalence_suite(std::span<const ModelConfig> configs,
                                            std::span<const std::uint64_t> seeds,
                                            const EquivalenceOptions& opt = {});

}  // namespace axial
