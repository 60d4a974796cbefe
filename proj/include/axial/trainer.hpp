#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "axial/autodiff.hpp"
#include "axial/model.hpp"
#include "axial/parallel.hpp"
#include "axial/serialize.hpp"

namespace axial {

// ---------------------------------------------------------------------------
// Datasets

enum class SynthKind { stripes, gradients, shifted_constant_video };

SynthKind parse_synth_kind(const std::string& name);
const char* synth_kind_name(SynthKind kind);

struct Dataset {
  Index height = 0, width = 0, channels = 0, vocab = 0;
  std::vector<DataTensor> train;
  std::vector<DataTensor> valid;

  /// Throws UsageError on empty splits, mixed shapes or out-of-range symbols.
  void validate() const;
};

/// Deterministic synthetic images. `n` training images plus max(1, n / 4)
/// validation images from the same generator stream.
///
///   stripes    horizontal bands: row r holds ((r + phase) mod period) * V / period
///   gradients  diagonal ramps (a*i + b*j + offset) mod V
///   shifted-constant-video  channel 0 is uniform noise; channel t is
///              channel t-1 rolled one pixel to the right
Dataset synth_dataset(SynthKind kind, Index height, Index width, Index channels, Index vocab, Index n,
                      std::uint64_t seed, Index period = 2);

struct ManifestEntry {
  std::filesystem::path path;
  std::string split;
};

/// Lines of `path<TAB>split`; relative paths resolve against the manifest's
/// directory. Blank lines and lines starting with '#' are skipped.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestEntry>& entries);

/// Writes train.axt / valid.axt and manifest.tsv into `dir`; returns the
/// manifest path.
std::filesystem::path save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& manifest);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  AdamConfig adam;
  std::int64_t warmup = 1000;
  Index batch = 8;
  std::int64_t steps = 1000;
  std::uint64_t seed = 0;
  std::int64_t log_every = 100;
  std::int64_t eval_every = 500;
  std::int64_t checkpoint_every = 1000;
};

/// Mean joint bits/dim over images, enumerating every channel slice.
template <typename Scalar>
double evaluate(const AxialTransformer<Scalar>& model, const std::vector<DataTensor>& images) {
  if (images.empty()) throw UsageError("evaluate: empty image list");
  std::vector<double> per(images.size());
  parallel_for(images.size(), [&](std::size_t k) { per[k] = model.bits_per_dim(images[k]); });
  double total = 0.0;
  for (double v : per) total += v;
  return total / static_cast<double>(images.size());
}

template <typename Scalar>
class Trainer {
 public:
  Trainer(AxialTransformer<Scalar>& model, TrainConfig cfg)
      : model_(model), cfg_(cfg), rng_(Rng(cfg.seed).split(0x7472)) {}

  std::int64_t step() const noexcept { return step_; }
  void set_step(std::int64_t s) { step_ = s; }
  const TrainConfig& config() const noexcept { return cfg_; }

  /// One optimizer step on `batch`: each example draws a channel slice
  /// uniformly from rng; the loss is the batch mean of slice bits/dim.
  /// Returns that loss.
  double train_step(const std::vector<const DataTensor*>& batch, Rng& rng) {
    if (batch.empty()) throw UsageError("train_step: empty batch");
    const auto& mcfg = model_.config();
    std::vector<Index> slices(batch.size());
    for (auto& c : slices) c = static_cast<Index>(rng.uniform_int(mcfg.channels));

    auto& store = model_.params();
    const Scalar weight = Scalar(1) / static_cast<Scalar>(static_cast<double>(mcfg.positions()) *
                                                          static_cast<double>(batch.size()));
    std::vector<GradientSet<Scalar>> grads(batch.size());
    std::vector<double> losses(batch.size());
    parallel_for(batch.size(), [&](std::size_t k) {
      Tape<Scalar> tape(&store);
      const Var loss = scale(tape, model_.nll_bits(tape, *batch[k], slices[k]), weight);
      losses[k] = static_cast<double>(tape.value(loss).item());
      grads[k] = store.make_gradient_set();
      tape.backward(loss, grads[k]);
    });

    double loss = 0.0;
    for (double l : losses) loss += l;
    if (!std::isfinite(loss)) {
      throw NumericError("train_step " + std::to_string(step_ + 1) + ": non-finite loss " + std::to_string(loss));
    }
    store.zero_grads();
    for (const auto& g : grads) store.accumulate(g);
    ++step_;
    AdamConfig adam = cfg_.adam;
    adam.lr = warmup_lr(cfg_.adam.lr, step_, cfg_.warmup);
    adam_step(store, adam, step_);
    return loss;
  }

  /// Draws the next batch from `images` (epoch-wise shuffles) and steps.
  double train_step(const std::vector<DataTensor>& images) {
    std::vector<const DataTensor*> batch;
    const auto b = static_cast<std::size_t>(std::min<Index>(cfg_.batch, static_cast<Index>(images.size())));
    for (std::size_t k = 0; k < b; ++k) batch.push_back(&images[next_index(images.size())]);
    return train_step(batch, rng_);
  }

  /// Replays the batch and slice draws of `steps` calls to
  /// train_step(images) without touching the parameters, then advances the
  /// step counter. A resumed run continues the same data stream.
  void fast_forward(const std::vector<DataTensor>& images, std::int64_t steps) {
    const auto b = static_cast<std::size_t>(std::min<Index>(cfg_.batch, static_cast<Index>(images.size())));
    for (std::int64_t s = 0; s < steps; ++s) {
      for (std::size_t k = 0; k < b; ++k) next_index(images.size());
      for (std::size_t k = 0; k < b; ++k) rng_.uniform_int(model_.config().channels);
    }
    step_ += steps;
  }

 private:
  std::size_t next_index(std::size_t n) {
    if (order_.size() != n || cursor_ >= n) {
      order_.resize(n);
      for (std::size_t i = 0; i < n; ++i) order_[i] = i;
      for (std::size_t i = n; i > 1; --i) {
        std::swap(order_[i - 1], order_[static_cast<std::size_t>(rng_.uniform_int(static_cast<std::int64_t>(i)))]);
      }
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

  AxialTransformer<Scalar>& model_;
  TrainConfig cfg_;
  Rng rng_;
  std::int64_t step_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: an AXT1 container holding a "config" record, a "train.step"
// record, then "param/<name>", "adam.m/<name>" and "adam.v/<name>" for every
// parameter in store order.

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const AxialTransformer<Scalar>& model,
                     std::int64_t step = 0) {
  NamedTensors out;
  out.records.emplace_back("config", model.config().to_record());
  out.records.emplace_back("train.step",
                           DataTensor({2}, std::vector<std::int32_t>{static_cast<std::int32_t>(step & 0x7FFFFFFF),
                                                                     static_cast<std::int32_t>(step >> 31)}));
  for (const auto& e : model.params().entries()) out.records.emplace_back("param/" + e.name, e.value);
  for (const auto& e : model.params().entries()) out.records.emplace_back("adam.m/" + e.name, e.moment1);
  for (const auto& e : model.params().entries()) out.records.emplace_back("adam.v/" + e.name, e.moment2);
  save_container(path, out);
}

template <typename Scalar>
struct LoadedCheckpoint {
  AxialTransformer<Scalar> model;
  std::int64_t step = 0;
};

ModelConfig checkpoint_config(const NamedTensors& records);
std::int64_t checkpoint_step(const NamedTensors& records);

template <typename Scalar>
LoadedCheckpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
  const NamedTensors records = load_container(path);
  const ModelConfig cfg = checkpoint_config(records);
  ParameterStore<Scalar> store;
  for (const auto& [name, tensor] : records.records) {
    if (name.rfind("param/", 0) != 0) continue;
    const std::string pname = name.substr(6);
    const ParamRef ref = store.add(pname, as_real<Scalar>(tensor));
    auto& e = store.entry(ref);
    if (const auto* m = records.find("adam.m/" + pname)) e.moment1 = as_real<Scalar>(*m);
    if (const auto* v = records.find("adam.v/" + pname)) e.moment2 = as_real<Scalar>(*v);
  }
  return {AxialTransformer<Scalar>(cfg, store), checkpoint_step(records)};
}

/// Saves then reloads.
template <typename Scalar>
AxialTransformer<Scalar> checkpoint_roundtrip(const AxialTransformer<Scalar>& model, const std::filesystem::path& path) {
  save_checkpoint(path, model);
  return load_checkpoint<Scalar>(path).model;
}

/// Dtype tag of the stored parameters.
DType checkpoint_dtype(const std::filesystem::path& path);

struct MetricsRow {
  std::int64_t step = 0;
  double train_bits = 0.0;
  double valid_bits = 0.0;
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,train_bits,valid_bits,wall_ms";
std::string format_metrics_row(const MetricsRow& row);

}  // namespace axial
