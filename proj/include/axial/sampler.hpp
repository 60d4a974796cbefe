#pragma once

// Ancestral sampling in raster-then-channel order: for each channel c, rows
// top to bottom, columns left to right, one uniform draw per symbol.
//
// sample_naive re-runs the whole network for every symbol. The
// semi-parallel sampler runs the channel encoder once per channel, the outer
// decoder once per row, and only the inner decoder (on the current row
// prefix) per symbol. Both read identical logits, so with the same Rng they
// produce identical tensors.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "axial/model.hpp"
#include "axial/rng.hpp"

namespace axial {

struct SampleTrace {
  std::int64_t encoder_evals = 0;
  std::int64_t outer_evals = 0;
  std::int64_t inner_evals = 0;
  std::int64_t full_evals = 0;
  std::int64_t uniforms = 0;
  /// When set, the logits used for every draw, in draw order ([T][V]).
  bool record_logits = false;
  std::vector<std::vector<double>> logits;
};

namespace detail {

template <typename Scalar>
void draw_symbol(DataTensor& x, Index i, Index j, Index c, const Scalar* logits, Index vocab, double temperature,
                 Rng& rng, SampleTrace* trace) {
  const std::uint64_t before = rng.counter();
  x(i, j, c) = categorical_sample(std::span<const Scalar>(logits, static_cast<std::size_t>(vocab)), temperature, rng);
  if (trace) {
    trace->uniforms += static_cast<std::int64_t>(rng.counter() - before);
    if (trace->record_logits) trace->logits.emplace_back(logits, logits + vocab);
  }
}

}  // namespace detail

template <typename Scalar>
DataTensor sample_naive(const AxialTransformer<Scalar>& model, Rng& rng, double temperature,
                        SampleTrace* trace = nullptr) {
  const auto& cfg = model.config();
  DataTensor x({cfg.height, cfg.width, cfg.channels});
  for (Index c = 0; c < cfg.channels; ++c) {
    for (Index i = 0; i < cfg.height; ++i) {
      for (Index j = 0; j < cfg.width; ++j) {
        const Tensor<Scalar> logits = model.logits(x, c);
        if (trace) {
          ++trace->full_evals;
          trace->outer_evals += cfg.upper_context ? 1 : 0;
          trace->encoder_evals += model.has_encoder() ? 1 : 0;
          ++trace->inner_evals;
        }
        detail::draw_symbol(x, i, j, c, logits.data() + (i * cfg.width + j) * cfg.vocab, cfg.vocab, temperature,
                            rng, trace);
      }
    }
  }
  return x;
}

template <typename Scalar>
DataTensor sample_semi_parallel(const AxialTransformer<Scalar>& model, Rng& rng, double temperature,
                                SampleTrace* trace = nullptr) {
  const auto& cfg = model.config();
  const auto* store = &model.params();
  DataTensor x({cfg.height, cfg.width, cfg.channels});

  Tensor<Scalar> pos;
  {
    Tape<Scalar> t(store);
    pos = t.value(model.positions(t));
  }

  for (Index c = 0; c < cfg.channels; ++c) {
    std::optional<Tensor<Scalar>> ctx;
    if (model.has_encoder()) {
      Tape<Scalar> t(store);
      ctx = t.value(model.channel_encoder(t, x, c));
      if (trace) ++trace->encoder_evals;
    }
    for (Index i = 0; i < cfg.height; ++i) {
      // Row i of ShiftDown(u) only sees rows < i, which are final.
      std::optional<Tensor<Scalar>> upper;
      if (cfg.upper_context) {
        Tape<Scalar> t(store);
        Var h = model.embed(t, channel_plane(x, c));
        if (ctx) h = add(t, h, t.constant(*ctx));
        upper = t.value(model.outer_decoder(t, h, t.constant(pos)));
        if (trace) ++trace->outer_evals;
      }
      for (Index j = 0; j < cfg.width; ++j) {
        const Index len = j + 1;
        DataTensor row({1, len});
        for (Index k = 0; k < len; ++k) row[k] = x(i, k, c);
        Tape<Scalar> t(store);
        const Var e = model.embed(t, row);
        std::optional<Var> up, cx;
        if (upper) up = t.constant(row_prefix(*upper, i, len));
        if (ctx) cx = t.constant(row_prefix(*ctx, i, len));
        const Var h = model.inner_decoder(t, e, up, t.constant(row_prefix(pos, i, len)), cx);
        const Tensor<Scalar>& logits = t.value(model.logit_head(t, h));
        if (trace) ++trace->inner_evals;
        detail::draw_symbol(x, i, j, c, logits.data() + j * cfg.vocab, cfg.vocab, temperature, rng, trace);
      }
    }
  }
  return x;
}

enum class SamplerMode { naive, semi_parallel };

SamplerMode parse_sampler_mode(const std::string& name);

/// Analytic cost in position-layer units for a square S x S image
/// (N = S^2): naive N^2 sqrt(N) (L_upper + L_row), semi-parallel
/// N^2 (L_upper + L_row).
std::uint64_t sampling_cost(const ModelConfig& cfg, SamplerMode mode);

/// Plain-text PGM (C = 1) or PPM (C = 3) with maxval V - 1.
void write_pnm(const std::filesystem::path& path, const DataTensor& image, Index vocab);

}  // namespace axial
