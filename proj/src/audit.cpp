#include "axial/audit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace axial {

Position position_of(Index t, Index height, Index width) {
  const Index hw = height * width;
  return {(t % hw) / width, t % width, t / hw};
}

Index CausalityReport::dependency_count() const {
  return static_cast<Index>(std::count(dep.begin(), dep.end(), std::uint8_t{1}));
}

std::string CausalityReport::summary() const {
  std::ostringstream os;
  os << "causality " << height << 'x' << width << 'x' << channels << " trials=" << trials
     << " dependencies=" << dependency_count() << ": " << (pass ? "PASS" : "FAIL");
  if (first_violation) {
    const auto [s, t] = *first_violation;
    const Position ps = position_of(s, height, width), pt = position_of(t, height, width);
    os << " (logits at (" << pt.row << ',' << pt.col << ',' << pt.channel << ") depend on input ("
       << ps.row << ',' << ps.col << ',' << ps.channel << "))";
  }
  return os.str();
}

std::string CausalityReport::csv() const {
  std::ostringstream os;
  os << "source,target,source_row,source_col,source_channel,target_row,target_col,target_channel,allowed\n";
  const Index total = positions();
  for (Index s = 0; s < total; ++s) {
    for (Index t = 0; t < total; ++t) {
      if (!depends(s, t)) continue;
      const Position ps = position_of(s, height, width), pt = position_of(t, height, width);
      os << s << ',' << t << ',' << ps.row << ',' << ps.col << ',' << ps.channel << ',' << pt.row << ','
         << pt.col << ',' << pt.channel << ',' << (s < t ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw UsageError("loglog_slope needs at least two points");
  double mx = 0, my = 0;
  const auto n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

const char* mode_name(AttentionMode mode) { return mode == AttentionMode::full ? "full" : "axial"; }

AttentionMode parse_attention_mode(const std::string& name) {
  if (name == "full") return AttentionMode::full;
  if (name == "axial") return AttentionMode::axial;
  throw UsageError("unknown attention mode '" + name + "' (expected axial or full)");
}

ScalingResult scaling_bench(std::span<const Index> extents, AttentionMode mode, const BenchOptions& opt) {
  using Clock = std::chrono::steady_clock;
  ScalingResult result;
  std::vector<double> xs, ys;
  for (std::size_t k = 0; k < extents.size(); ++k) {
    if (k > 0 && extents[k] <= extents[k - 1]) throw UsageError("scaling_bench: extents must increase");
  }
  for (const Index s : extents) {
    Index elements = 1;
    for (unsigned r = 0; r < opt.rank; ++r) elements *= s;
    const Index batch = mode == AttentionMode::axial ? elements / s : 1;
    const Index length = mode == AttentionMode::axial ? s : elements;
    Tensor<float> x({batch, length, opt.head_dim});
    Rng rng(opt.seed);
    for (auto& v : x.values()) v = static_cast<float>(rng.normal());

    volatile float sink = 0;
    auto run_once = [&] { sink = sink + attention_core(x, false)[0]; };
    // Calibrate repetitions so one sample lasts at least min_sample_ms.
    int reps = 1;
    for (;;) {
      const auto t0 = Clock::now();
      for (int r = 0; r < reps; ++r) run_once();
      const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
      if (ms >= opt.min_sample_ms || reps >= (1 << 20)) break;
      reps *= 2;
    }
    double best = std::numeric_limits<double>::infinity();
    for (int smp = 0; smp < opt.samples; ++smp) {
      const auto t0 = Clock::now();
      for (int r = 0; r < reps; ++r) run_once();
      best = std::min(best, std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / reps);
    }
    result.rows.push_back({s, mode, pair_count(static_cast<std::uint64_t>(s), opt.rank, mode), best});
    xs.push_back(static_cast<double>(s));
    ys.push_back(best);
  }
  if (xs.size() >= 2) result.slope = loglog_slope(xs, ys);
  return result;
}

std::string bench_csv(std::span<const BenchRow> rows, bool header) {
  std::ostringstream os;
  if (header) os << kBenchHeader << '\n';
  os.precision(6);
  for (const auto& r : rows) os << r.extent << ',' << mode_name(r.mode) << ',' << r.pairs << ',' << r.ms << '\n';
  return os.str();
}

std::string EquivalenceReport::summary() const {
  std::ostringstream os;
  std::size_t bad = 0;
  for (const auto& c : cases) bad += c.identical ? 0 : 1;
  os << "sampler equivalence: " << cases.size() << " cases, " << bad << " mismatched: " << (pass ? "PASS" : "FAIL");
  for (const auto& c : cases) {
    if (c.identical) continue;
    os << "\n  " << describe(c.config) << " seed=" << c.seed;
    if (c.first_divergence) {
      os << " first divergence at (row " << c.first_divergence->row << ", col " << c.first_divergence->col
         << ", channel " << c.first_divergence->channel << "), logit diff " << c.divergence_logit_diff;
    }
    break;
  }
  return os.str();
}

EquivalenceReport sampler_equivalence_suite(std::span<const ModelConfig> configs,
                                            std::span<const std::uint64_t> seeds, const EquivalenceOptions& opt) {
  EquivalenceReport report;
  for (std::size_t ci = 0; ci < configs.size(); ++ci) {
    AxialTransformer<double> model(configs[ci], InitScheme::dense_random, opt.model_seed + ci);
    model.faults() = opt.faults;
    for (const auto seed : seeds) {
      EquivalenceCase ec;
      ec.config = configs[ci];
      ec.seed = seed;
      SampleTrace naive_trace, semi_trace;
      naive_trace.record_logits = semi_trace.record_logits = true;
      Rng r1(seed), r2(seed);
      const DataTensor a = sample_naive(model, r1, opt.temperature, &naive_trace);
      const DataTensor b = sample_semi_parallel(model, r2, opt.temperature, &semi_trace);
      const auto& cfg = configs[ci];
      const Index total = cfg.dims();
      for (Index t = 0; t < total; ++t) {
        const Position p = position_of(t, cfg.height, cfg.width);
        const auto& la = naive_trace.logits[static_cast<std::size_t>(t)];
        const auto& lb = semi_trace.logits[static_cast<std::size_t>(t)];
        double diff = 0.0;
        for (std::size_t v = 0; v < la.size(); ++v) diff = std::max(diff, std::abs(la[v] - lb[v]));
        ec.max_logit_diff = std::max(ec.max_logit_diff, diff);
        if (a(p.row, p.col, p.channel) != b(p.row, p.col, p.channel) || diff >= 1e-10) {
          ec.identical = false;
          ec.first_divergence = p;
          ec.divergence_logit_diff = diff;
          break;
        }
      }
      if (!(a == b)) ec.identical = false;
      report.pass = report.pass && ec.identical;
      report.cases.push_back(ec);
    }
  }
  return report;
}

}  // namespace axial
