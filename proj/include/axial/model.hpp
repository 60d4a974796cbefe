#pragma once

// The Axial Transformer over H x W x C symbol tensors.
//
// For target channel c:
//
//   e    = Embed(x[:, :, c])
//   ctx  = ChannelEncoder(x[:, :, <c])                      (C > 1 only)
//   u    = e + ctx + P
//   u    = MaskedBlock_height(Block_width(u))      x L_upper / 2
//   h    = ShiftDown(u) + ShiftRight(e) + P + ctx
//   h    = MaskedBlock_width(h)                    x L_row
//   logits = Dense_V(LayerNorm(h))
//
// P is the additively factorized position grid. Logits at (i, j) depend on
// rows above i through ShiftDown(u), on columns left of j in row i through
// ShiftRight(e) and the masked row blocks, and on every position of earlier
// channels through ctx.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "axial/layers.hpp"
#include "axial/tensor.hpp"

namespace axial {

struct ModelConfig {
  Index height = 8;
  Index width = 8;
  Index channels = 1;
  Index vocab = 256;
  Index embed_dim = 32;
  Index ffn_factor = 2;
  Index heads = 4;
  Index encoder_layers = 4;
  Index upper_layers = 4;
  Index row_layers = 2;
  /// false drops the outer decoder entirely, leaving H independent
  /// row-wise models.
  bool upper_context = true;

  Index hidden_dim() const { return ffn_factor * embed_dim; }
  Index positions() const { return height * width; }
  Index dims() const { return height * width * channels; }

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;

  /// Integer record used in checkpoints (field order is part of the format).
  DataTensor to_record() const;
  static ModelConfig from_record(const DataTensor& record);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string describe(const ModelConfig& cfg);

/// Test-only fault injection.
struct ModelFaults {
  /// Rows ShiftDown moves the upper context by; the correct value is 1.
  Index upper_shift = 1;
};

/// x[:, :, c] as an H x W tensor.
DataTensor channel_plane(const DataTensor& x, Index c);

/// Row i, columns [0, length) of an H x W x D tensor, as 1 x length x D.
template <typename Scalar>
Tensor<Scalar> row_prefix(const Tensor<Scalar>& t, Index row, Index length) {
  const Index w = t.extent(1), d = t.extent(2);
  Tensor<Scalar> out({1, length, d});
  std::copy_n(t.data() + row * w * d, length * d, out.data());
  return out;
}

template <typename Scalar>
class AxialTransformer {
 public:
  AxialTransformer(const ModelConfig& cfg, InitScheme scheme, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Initializer init(scheme, Rng(seed));
    build(init);
  }

  /// Adopts existing parameter values (e.g. from a checkpoint). Every
  /// expected name must be present with the expected shape.
  AxialTransformer(const ModelConfig& cfg, const ParameterStore<Scalar>& values) : cfg_(cfg) {
    cfg_.validate();
    Initializer init(InitScheme::zero_branch, Rng(0));
    build(init);
    for (auto& e : store_.entries()) {
      const auto& src = values.value(e.name);
      if (src.shape() != e.value.shape()) {
        throw FormatError("parameter '" + e.name + "' has shape " + shape_string(src.shape()) + ", expected " +
                          shape_string(e.value.shape()));
      }
      e.value = src;
      const auto& se = values.entry(values.ref(e.name));
      e.moment1 = se.moment1;
      e.moment2 = se.moment2;
    }
    if (values.size() != store_.size()) throw FormatError("checkpoint has unexpected extra parameters");
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterStore<Scalar>& params() noexcept { return store_; }
  const ParameterStore<Scalar>& params() const noexcept { return store_; }
  ModelFaults& faults() noexcept { return faults_; }

  // -- tape-level pieces ----------------------------------------------------

  Var embed(Tape<Scalar>& t, const DataTensor& plane) const { return embedding(t, t.param(embed_), plane); }

  Var positions(Tape<Scalar>& t) const { return position_grid(t, t.param(pos_row_), t.param(pos_col_)); }

  /// Context for channel c from channels < c: one slot table per channel
  /// plane (padding symbol V for planes >= c), an index-plane table, and
  /// alternating unmasked row/column blocks.
  Var channel_encoder(Tape<Scalar>& t, const DataTensor& x, Index c) const {
    check_input(x);
    if (c < 0 || c >= cfg_.channels) {
      throw UsageError("channel index " + std::to_string(c) + " outside [0, " + std::to_string(cfg_.channels) + ")");
    }
    if (!has_encoder()) throw UsageError("single-channel model has no channel encoder");
    const DataTensor padding({cfg_.height, cfg_.width}, static_cast<std::int32_t>(cfg_.vocab));
    Var h = embedding(t, t.param(enc_index_), DataTensor({cfg_.height, cfg_.width}, static_cast<std::int32_t>(c)));
    for (Index s = 0; s < cfg_.channels; ++s) {
      const DataTensor plane = s < c ? channel_plane(x, s) : padding;
      h = add(t, h, embedding(t, t.param(enc_slots_[static_cast<std::size_t>(s)]), plane));
    }
    h = add(t, h, position_grid(t, t.param(enc_pos_row_), t.param(enc_pos_col_)));
    for (const auto& block : encoder_) h = transformer_block(t, block, h);
    return h;
  }

  /// ShiftDown of the upper context computed from `h` (= Embed(x) + ctx).
  Var outer_decoder(Tape<Scalar>& t, Var h, Var pos) const {
    Var u = add(t, h, pos);
    for (const auto& block : outer_) u = transformer_block(t, block, u);
    return shift(t, u, 0, faults_.upper_shift);
  }

  /// Masked row stack over ShiftDown(u) + ShiftRight(e) + P (+ ctx). All
  /// inputs share a shape (H x W x D, or 1 x L x D for a single row prefix).
  Var inner_decoder(Tape<Scalar>& t, Var embedded, std::optional<Var> upper_shifted, Var pos,
                    std::optional<Var> ctx) const {
    Var h = shift(t, embedded, 1);
    if (upper_shifted) h = add(t, *upper_shifted, h);
    h = add(t, h, pos);
    if (ctx) h = add(t, h, *ctx);
    for (const auto& block : inner_) h = transformer_block(t, block, h);
    return h;
  }

  Var logit_head(Tape<Scalar>& t, Var h) const { return dense(t, head_dense_, layer_norm(t, head_norm_, h)); }

  /// Logits [H, W, V] for channel c.
  Var forward_logits(Tape<Scalar>& t, const DataTensor& x, Index c) const {
    check_input(x);
    if (c < 0 || c >= cfg_.channels) throw UsageError("channel index out of range");
    const Var e = embed(t, channel_plane(x, c));
    const Var pos = positions(t);
    std::optional<Var> ctx;
    if (has_encoder()) ctx = channel_encoder(t, x, c);
    std::optional<Var> upper;
    if (cfg_.upper_context) upper = outer_decoder(t, ctx ? add(t, e, *ctx) : e, pos);
    return logit_head(t, inner_decoder(t, e, upper, pos, ctx));
  }

  /// Sum over the H*W positions of channel c of -log2 p(x_ijc | context).
  Var nll_bits(Tape<Scalar>& t, const DataTensor& x, Index c) const {
    return cross_entropy_bits(t, forward_logits(t, x, c), channel_plane(x, c));
  }

  // -- value-level conveniences --------------------------------------------

  Tensor<Scalar> logits(const DataTensor& x, Index c) const {
    Tape<Scalar> t(&store_);
    return t.value(forward_logits(t, x, c));
  }

  /// Conditional bits/dim of slice c.
  double slice_bits_per_dim(const DataTensor& x, Index c) const {
    Tape<Scalar> t(&store_);
    return static_cast<double>(t.value(nll_bits(t, x, c)).item()) / static_cast<double>(cfg_.positions());
  }

  /// Joint bits/dim: sum of channel-conditional NLLs over H*W*C.
  double bits_per_dim(const DataTensor& x) const {
    double total = 0.0;
    for (Index c = 0; c < cfg_.channels; ++c) {
      Tape<Scalar> t(&store_);
      total += static_cast<double>(t.value(nll_bits(t, x, c)).item());
    }
    return total / static_cast<double>(cfg_.dims());
  }

  bool has_encoder() const noexcept { return cfg_.channels > 1; }

  void check_input(const DataTensor& x) const {
    if (x.shape() != Shape{cfg_.height, cfg_.width, cfg_.channels}) {
      throw DimensionError("model expects data of shape " +
                           shape_string({cfg_.height, cfg_.width, cfg_.channels}) + ", got " +
                           shape_string(x.shape()));
    }
    for (auto v : x.values()) {
      if (v < 0 || v >= cfg_.vocab) throw UsageError("symbol " + std::to_string(v) + " outside vocabulary");
    }
  }

 private:
  void build(Initializer& init) {
    const Index d = cfg_.embed_dim, dh = cfg_.hidden_dim();
    embed_ = store_.add("embed", init.embedding<Scalar>(cfg_.vocab, d));
    pos_row_ = store_.add("pos.row", init.embedding<Scalar>(cfg_.height, d));
    pos_col_ = store_.add("pos.col", init.embedding<Scalar>(cfg_.width, d));
    if (has_encoder()) {
      for (Index s = 0; s < cfg_.channels; ++s) {
        enc_slots_.push_back(store_.add("enc.slot" + std::to_string(s), init.embedding<Scalar>(cfg_.vocab + 1, d)));
      }
      enc_index_ = store_.add("enc.index", init.embedding<Scalar>(cfg_.channels, d));
      enc_pos_row_ = store_.add("enc.pos.row", init.embedding<Scalar>(cfg_.height, d));
      enc_pos_col_ = store_.add("enc.pos.col", init.embedding<Scalar>(cfg_.width, d));
      for (Index k = 0; k < cfg_.encoder_layers; ++k) {
        const AxisSpec spec{k % 2 == 0 ? Axis::width : Axis::height, false};
        encoder_.push_back(add_transformer_block(store_, "enc.block" + std::to_string(k), spec, d, dh, cfg_.heads, init));
      }
    }
    if (cfg_.upper_context) {
      for (Index k = 0; k < cfg_.upper_layers; ++k) {
        const AxisSpec spec = k % 2 == 0 ? AxisSpec{Axis::width, false} : AxisSpec{Axis::height, true};
        outer_.push_back(add_transformer_block(store_, "outer.block" + std::to_string(k), spec, d, dh, cfg_.heads, init));
      }
    }
    for (Index k = 0; k < cfg_.row_layers; ++k) {
      inner_.push_back(add_transformer_block(store_, "inner.block" + std::to_string(k), AxisSpec{Axis::width, true},
                                             d, dh, cfg_.heads, init));
    }
    head_norm_ = add_layer_norm(store_, "head.norm", d, init);
    head_dense_ = add_dense(store_, "head.dense", d, cfg_.vocab, init);
  }

  ModelConfig cfg_;
  ModelFaults faults_;
  ParameterStore<Scalar> store_;
  ParamRef embed_, pos_row_, pos_col_;
  std::vector<ParamRef> enc_slots_;
  ParamRef enc_index_, enc_pos_row_, enc_pos_col_;
  std::vector<TransformerBlockParams> encoder_, outer_, inner_;
  LayerNormParams head_norm_;
  DenseParams head_dense_;
};

}  // namespace axial
