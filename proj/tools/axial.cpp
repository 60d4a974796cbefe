// axial: train, sample, evaluate, audit and benchmark Axial Transformers.
//
// Exit codes: 0 success / audit pass, 1 audit failure or runtime error,
// 2 usage error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "axial/audit.hpp"
#include "axial/config.hpp"
#include "axial/sampler.hpp"
#include "axial/serialize.hpp"
#include "axial/trainer.hpp"

namespace fs = std::filesystem;
using namespace axial;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct Options {
  std::string config, data, out, checkpoint, mode, dtype, kind = "stripes", csv;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> steps;
  double temperature = 1.0;
  Index n = 1;
  Index trials = 3;
  std::vector<Index> sizes{16, 32, 64};
};

std::optional<DType> requested_dtype(const Options& o) {
  if (o.dtype.empty()) return std::nullopt;
  const DType d = parse_dtype(o.dtype);
  if (d == DType::int32) throw UsageError("--dtype must be real32 or real64");
  return d;
}

template <typename Scalar>
AxialTransformer<Scalar> convert(const AxialTransformer<double>& src) {
  ParameterStore<Scalar> store;
  for (const auto& e : src.params().entries()) {
    auto& dst = store.entry(store.add(e.name, e.value.template cast<Scalar>()));
    dst.moment1 = e.moment1.template cast<Scalar>();
    dst.moment2 = e.moment2.template cast<Scalar>();
  }
  return AxialTransformer<Scalar>(src.config(), store);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
int train_with(const RunConfig& rc, const Dataset& data, const fs::path& out, const fs::path& resume) {
  const ModelConfig& mc = rc.model;
  std::optional<AxialTransformer<Scalar>> model;
  std::int64_t start = 0;
  if (!resume.empty()) {
    auto loaded = load_checkpoint<Scalar>(resume);
    if (!(loaded.model.config() == mc)) {
      throw UsageError("checkpoint " + resume.string() + " holds " + describe(loaded.model.config()) +
                       ", config asks for " + describe(mc));
    }
    model.emplace(std::move(loaded.model));
    start = loaded.step;
    std::cout << "resuming from " << resume.string() << " at step " << start << '\n';
  } else {
    model.emplace(mc, InitScheme::zero_branch, rc.train.seed);
  }

  Trainer<Scalar> trainer(*model, rc.train);
  trainer.fast_forward(data.train, start);
  const fs::path ckpt = out / "checkpoint.axt";
  const fs::path metrics = out / "metrics.csv";
  const bool fresh_metrics = !fs::exists(metrics) || start == 0;
  std::ofstream mf(metrics, fresh_metrics ? std::ios::trunc : std::ios::app);
  if (!mf) throw std::runtime_error("cannot write " + metrics.string());
  if (fresh_metrics) mf << kMetricsHeader << '\n';

  if (start == 0) save_checkpoint(ckpt, *model, 0);
  const auto t0 = Clock::now();
  double running = 0.0;
  std::int64_t since_log = 0;
  while (trainer.step() < rc.train.steps) {
    running += trainer.train_step(data.train);
    ++since_log;
    const std::int64_t s = trainer.step();
    const bool last = s == rc.train.steps;
    const bool log = last || (rc.train.log_every > 0 && s % rc.train.log_every == 0);
    const bool eval = !data.valid.empty() && (last || (rc.train.eval_every > 0 && s % rc.train.eval_every == 0));
    if (log || eval) {
      MetricsRow row;
      row.step = s;
      row.train_bits = running / static_cast<double>(since_log);
      row.valid_bits = eval ? evaluate(*model, data.valid) : std::numeric_limits<double>::quiet_NaN();
      row.wall_ms = ms_since(t0);
      mf << format_metrics_row(row) << '\n' << std::flush;
      std::cout << "step " << s << " train " << row.train_bits << " bits/dim";
      if (eval) std::cout << " valid " << row.valid_bits << " bits/dim";
      std::cout << '\n';
      running = 0.0;
      since_log = 0;
    }
    if (last || (rc.train.checkpoint_every > 0 && s % rc.train.checkpoint_every == 0)) {
      save_checkpoint(ckpt, *model, s);
    }
  }
  std::cout << "checkpoint " << ckpt.string() << " (step " << trainer.step() << ")\n";
  return 0;
}

int cmd_train(const Options& o) {
  RunConfig rc = load_config(o.config);
  if (o.seed) rc.train.seed = *o.seed;
  if (o.steps) {
    if (*o.steps < 0) throw UsageError("--steps must be >= 0");
    rc.train.steps = *o.steps;
  }
  if (const auto d = requested_dtype(o)) rc.dtype = *d;
  const Dataset data = load_dataset(o.data);
  const ModelConfig& mc = rc.model;
  if (data.height != mc.height || data.width != mc.width || data.channels != mc.channels) {
    throw UsageError("dataset images are " + std::to_string(data.height) + "x" + std::to_string(data.width) + "x" +
                     std::to_string(data.channels) + ", config expects " + describe(mc));
  }
  if (data.vocab > mc.vocab) {
    throw UsageError("dataset uses symbol " + std::to_string(data.vocab - 1) + " but vocab is " +
                     std::to_string(mc.vocab));
  }
  const fs::path out(o.out);
  fs::create_directories(out);
  {
    std::ofstream cf(out / "config.cfg");
    cf << format_config(rc);
  }
  fs::path resume = o.checkpoint;
  if (resume.empty() && fs::exists(out / "checkpoint.axt")) resume = out / "checkpoint.axt";
  return rc.dtype == DType::real32 ? train_with<float>(rc, data, out, resume)
                                   : train_with<double>(rc, data, out, resume);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
int sample_with(const AxialTransformer<Scalar>& model, const Options& o, SamplerMode mode) {
  const auto& cfg = model.config();
  const fs::path out(o.out);
  if (o.n > 0) fs::create_directories(out);
  Rng rng(o.seed.value_or(0));
  for (Index k = 0; k < o.n; ++k) {
    Rng stream = rng.split(static_cast<std::uint64_t>(k));
    const auto t0 = Clock::now();
    const DataTensor x = mode == SamplerMode::naive ? sample_naive(model, stream, o.temperature)
                                                    : sample_semi_parallel(model, stream, o.temperature);
    const double ms = ms_since(t0);
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03lld", static_cast<long long>(k));
    save_data_tensors(out / (std::string(name) + ".axt"), {x});
    if (cfg.channels == 1) write_pnm(out / (std::string(name) + ".pgm"), x, cfg.vocab);
    if (cfg.channels == 3) write_pnm(out / (std::string(name) + ".ppm"), x, cfg.vocab);
    std::printf("%s %.3f ms\n", name, ms);
  }
  return 0;
}

int cmd_sample(const Options& o) {
  const SamplerMode mode = parse_sampler_mode(o.mode.empty() ? "semi" : o.mode);
  if (o.n < 0) throw UsageError("--n must be >= 0");
  if (o.temperature < 0) throw UsageError("--temperature must be >= 0");
  const DType dtype = requested_dtype(o).value_or(checkpoint_dtype(o.checkpoint));
  auto loaded = load_checkpoint<double>(o.checkpoint);
  if (dtype == DType::real32) return sample_with(convert<float>(loaded.model), o, mode);
  return sample_with(loaded.model, o, mode);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
int eval_with(const AxialTransformer<Scalar>& model, const Dataset& data) {
  if (!data.train.empty()) std::printf("train %.6f bits/dim (%zu images)\n", evaluate(model, data.train), data.train.size());
  if (!data.valid.empty()) std::printf("valid %.6f bits/dim (%zu images)\n", evaluate(model, data.valid), data.valid.size());
  return 0;
}

int cmd_eval(const Options& o) {
  const DType dtype = requested_dtype(o).value_or(checkpoint_dtype(o.checkpoint));
  auto loaded = load_checkpoint<double>(o.checkpoint);
  const Dataset data = load_dataset(o.data);
  const auto& mc = loaded.model.config();
  if (data.height != mc.height || data.width != mc.width || data.channels != mc.channels || data.vocab > mc.vocab) {
    throw UsageError("dataset does not match checkpoint model " + describe(mc));
  }
  if (dtype == DType::real32) return eval_with(convert<float>(loaded.model), data);
  return eval_with(loaded.model, data);
}

// ---------------------------------------------------------------------------

int cmd_audit(const Options& o) {
  if (o.config.empty() == o.checkpoint.empty()) throw UsageError("audit needs exactly one of --config, --checkpoint");
  if (o.trials < 1) throw UsageError("--trials must be >= 1");
  if (!o.dtype.empty() && requested_dtype(o) != DType::real64) {
    std::cerr << "note: audit always runs in real64\n";
  }
  const std::uint64_t seed = o.seed.value_or(0);
  std::optional<AxialTransformer<double>> model;
  if (!o.checkpoint.empty()) {
    model.emplace(load_checkpoint<double>(o.checkpoint).model);
  } else {
    const RunConfig rc = load_config(o.config);
    // Zero-branch init hides most of the network; audit a dense model.
    model.emplace(rc.model, InitScheme::dense_random, seed);
  }
  const auto report = causality_audit(*model, o.trials, seed);
  std::cout << report.summary() << '\n';
  if (!o.csv.empty()) {
    std::ofstream f(o.csv);
    if (!f) throw std::runtime_error("cannot write " + o.csv);
    f << report.csv();
  }

  const std::vector<ModelConfig> configs{model->config()};
  const std::vector<std::uint64_t> seeds{seed, seed + 1, seed + 2};
  EquivalenceOptions eo;
  eo.model_seed = seed;
  const auto eq = sampler_equivalence_suite(configs, seeds, eo);
  std::cout << eq.summary() << '\n';
  const bool pass = report.pass && eq.pass;
  std::cout << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? 0 : kExitFail;
}

// ---------------------------------------------------------------------------

int cmd_bench(const Options& o) {
  std::vector<AttentionMode> modes;
  if (o.mode.empty() || o.mode == "both") {
    modes = {AttentionMode::axial, AttentionMode::full};
  } else {
    modes = {parse_attention_mode(o.mode)};
  }
  if (!o.dtype.empty()) requested_dtype(o);
  BenchOptions bo;
  bo.seed = o.seed.value_or(0);
  std::vector<BenchRow> rows;
  std::vector<std::pair<AttentionMode, double>> slopes;
  for (const auto m : modes) {
    const auto r = scaling_bench(o.sizes, m, bo);
    rows.insert(rows.end(), r.rows.begin(), r.rows.end());
    slopes.emplace_back(m, r.slope);
  }
  const std::string csv = bench_csv(rows);
  if (o.out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(o.out);
    if (!f) throw std::runtime_error("cannot write " + o.out);
    f << csv;
  }
  if (o.sizes.size() >= 2) {
    for (const auto& [m, s] : slopes) std::cerr << mode_name(m) << " log-log slope " << s << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Options& o, Index height, Index width, Index channels, Index vocab, Index period) {
  if (!o.config.empty()) {
    const RunConfig rc = load_config(o.config);
    height = rc.model.height;
    width = rc.model.width;
    channels = rc.model.channels;
    vocab = rc.model.vocab;
  }
  const Dataset d = synth_dataset(parse_synth_kind(o.kind), height, width, channels, vocab, o.n, o.seed.value_or(0),
                                  period);
  const fs::path manifest = save_dataset(o.out, d);
  std::cout << manifest.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Axial Transformer toolkit"};
  app.require_subcommand(1);
  Options o;
  Index height = 8, width = 8, channels = 1, vocab = 2, period = 2, synth_n = 16;

  auto seed_opt = [&](CLI::App* c) {
    c->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { o.seed = s; }, "random seed");
  };
  auto dtype_opt = [&](CLI::App* c) { c->add_option("--dtype", o.dtype, "real32 or real64"); };

  auto* train = app.add_subcommand("train", "train a model, resuming from --out/checkpoint.axt if present");
  train->add_option("--config", o.config, "config file")->required();
  train->add_option("--data", o.data, "dataset manifest")->required();
  train->add_option("--out", o.out, "output directory")->required();
  train->add_option("--checkpoint", o.checkpoint, "resume from this checkpoint");
  train->add_option_function<std::int64_t>("--steps", [&](std::int64_t s) { o.steps = s; }, "total steps");
  seed_opt(train);
  dtype_opt(train);

  auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
  sample->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  sample->add_option("--out", o.out, "output directory")->required();
  sample->add_option("--n", o.n, "number of samples");
  sample->add_option("--temperature", o.temperature, "softmax temperature");
  sample->add_option("--mode", o.mode, "naive or semi");
  seed_opt(sample);
  dtype_opt(sample);

  auto* eval = app.add_subcommand("eval", "report bits/dim of a checkpoint on a dataset");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  eval->add_option("--data", o.data, "dataset manifest")->required();
  dtype_opt(eval);

  auto* audit = app.add_subcommand("audit", "causality audit and sampler equivalence");
  audit->add_option("--config", o.config, "audit a dense random model with this config");
  audit->add_option("--checkpoint", o.checkpoint, "audit a trained checkpoint");
  audit->add_option("--trials", o.trials, "perturbations per position");
  audit->add_option("--csv", o.csv, "write the dependency list here");
  seed_opt(audit);
  dtype_opt(audit);

  auto* bench = app.add_subcommand("bench", "attention scaling benchmark (CSV)");
  bench->add_option("--mode", o.mode, "axial, full or both");
  bench->add_option("--sizes", o.sizes, "extents S")->delimiter(',');
  bench->add_option("--out", o.out, "write CSV here instead of stdout");
  seed_opt(bench);
  dtype_opt(bench);

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  synth->add_option("--kind", o.kind, "stripes, gradients or shifted-constant-video");
  synth->add_option("--out", o.out, "output directory")->required();
  synth->add_option("--config", o.config, "take the image shape from this config");
  synth->add_option("--height", height);
  synth->add_option("--width", width);
  synth->add_option("--channels", channels);
  synth->add_option("--vocab", vocab);
  synth->add_option("--period", period, "stripe period");
  synth->add_option("--n", synth_n, "training images");
  seed_opt(synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train(o);
    if (*sample) return cmd_sample(o);
    if (*eval) return cmd_eval(o);
    if (*audit) return cmd_audit(o);
    if (*bench) return cmd_bench(o);
    if (*synth) {
      o.n = synth_n;
      return cmd_synth(o, height, width, channels, vocab, period);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFail;
  }
  return kExitUsage;
}
