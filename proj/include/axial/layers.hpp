#pragma once

// Residual axial blocks:
//
//   FeedforwardBlock(x)  = x + Dense_D(GeLU(Dense_D'(LayerNorm(x))))
//   AttentionBlock_k(x)  = x + Dense_D(Attention_k(LayerNorm(x)))
//   TransformerBlock_k(x) = FeedforwardBlock(AttentionBlock_k(x))
//
// Parameters live in a ParameterStore; the *Params structs hold references
// into it so a block can be replayed on any tape bound to that store.

#include <string>

#include "axial/attention.hpp"
#include "axial/autodiff.hpp"
#include "axial/rng.hpp"

namespace axial {

inline constexpr double kLayerNormEps = 1e-6;

enum class InitScheme {
  /// N(0, 0.02) weights, zero biases, and a zeroed final Dense in every
  /// residual branch so each block starts as the identity.
  zero_branch,
  /// Every parameter random and O(1) in effect; no branch is silent. Used by
  /// the causality audits, which need all paths live.
  dense_random,
};

struct LayerNormParams {
  ParamRef gamma, beta;
};

struct DenseParams {
  ParamRef w, b;
};

struct AttentionBlockParams {
  LayerNormParams norm;
  ParamRef wq, wk, wv, wo;
  DenseParams proj;
  Index heads = 1;
};

struct FeedforwardParams {
  LayerNormParams norm;
  DenseParams in, out;
};

struct TransformerBlockParams {
  AxisSpec spec;
  AttentionBlockParams attn;
  FeedforwardParams ffn;
};

/// Draws initial values in registration order from one Rng.
class Initializer {
 public:
  Initializer(InitScheme scheme, Rng rng) : scheme_(scheme), rng_(rng) {}

  InitScheme scheme() const noexcept { return scheme_; }

  template <typename Scalar>
  Tensor<Scalar> normal(Shape shape, double stddev, double mean = 0.0) {
    Tensor<Scalar> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<Scalar>(mean + stddev * rng_.normal());
    return t;
  }

  /// Matrix with `fan_in` rows. `branch_output` marks the last Dense of a
  /// residual branch.
  template <typename Scalar>
  Tensor<Scalar> weight(Index fan_in, Index fan_out, bool branch_output = false) {
    if (scheme_ == InitScheme::zero_branch) {
      if (branch_output) return Tensor<Scalar>({fan_in, fan_out});
      return normal<Scalar>({fan_in, fan_out}, 0.02);
    }
    return normal<Scalar>({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  }

  template <typename Scalar>
  Tensor<Scalar> bias(Index n) {
    if (scheme_ == InitScheme::zero_branch) return Tensor<Scalar>({n});
    return normal<Scalar>({n}, 0.1);
  }

  template <typename Scalar>
  Tensor<Scalar> gain(Index n) {
    if (scheme_ == InitScheme::zero_branch) return Tensor<Scalar>({n}, Scalar(1));
    return normal<Scalar>({n}, 0.1, 1.0);
  }

  template <typename Scalar>
  Tensor<Scalar> embedding(Index rows, Index d) {
    return normal<Scalar>({rows, d}, scheme_ == InitScheme::zero_branch ? 0.02 : 1.0);
  }

 private:
  InitScheme scheme_;
  Rng rng_;
};

template <typename Scalar>
LayerNormParams add_layer_norm(ParameterStore<Scalar>& store, const std::string& prefix, Index d,
                               Initializer& init) {
  return {store.add(prefix + ".gamma", init.gain<Scalar>(d)), store.add(prefix + ".beta", init.bias<Scalar>(d))};
}

template <typename Scalar>
DenseParams add_dense(ParameterStore<Scalar>& store, const std::string& prefix, Index din, Index dout,
                      Initializer& init, bool branch_output = false) {
  return {store.add(prefix + ".w", init.weight<Scalar>(din, dout, branch_output)),
          store.add(prefix + ".b", init.bias<Scalar>(dout))};
}

template <typename Scalar>
AttentionBlockParams add_attention_block(ParameterStore<Scalar>& store, const std::string& prefix, Index d,
                                         Index heads, Initializer& init) {
  if (heads <= 0 || d % heads != 0) {
    throw ConfigError("heads (" + std::to_string(heads) + ") must divide D (" + std::to_string(d) + ")");
  }
  AttentionBlockParams p;
  p.norm = add_layer_norm(store, prefix + ".norm", d, init);
  p.wq = store.add(prefix + ".wq", init.weight<Scalar>(d, d));
  p.wk = store.add(prefix + ".wk", init.weight<Scalar>(d, d));
  p.wv = store.add(prefix + ".wv", init.weight<Scalar>(d, d));
  p.wo = store.add(prefix + ".wo", init.weight<Scalar>(d, d));
  p.proj = add_dense(store, prefix + ".proj", d, d, init, /*branch_output=*/true);
  p.heads = heads;
  return p;
}

template <typename Scalar>
FeedforwardParams add_feedforward_block(ParameterStore<Scalar>& store, const std::string& prefix, Index d,
                                        Index d_hidden, Initializer& init) {
  FeedforwardParams p;
  p.norm = add_layer_norm(store, prefix + ".norm", d, init);
  p.in = add_dense(store, prefix + ".in", d, d_hidden, init);
  p.out = add_dense(store, prefix + ".out", d_hidden, d, init, /*branch_output=*/true);
  return p;
}

template <typename Scalar>
TransformerBlockParams add_transformer_block(ParameterStore<Scalar>& store, const std::string& prefix,
                                             AxisSpec spec, Index d, Index d_hidden, Index heads,
                                             Initializer& init) {
  TransformerBlockParams p;
  p.spec = spec;
  p.attn = add_attention_block(store, prefix + ".attn", d, heads, init);
  p.ffn = add_feedforward_block(store, prefix + ".ffn", d, d_hidden, init);
  return p;
}

template <typename Scalar>
Var layer_norm(Tape<Scalar>& t, const LayerNormParams& p, Var x) {
  return layer_norm(t, x, t.param(p.gamma), t.param(p.beta), static_cast<Scalar>(kLayerNormEps));
}

template <typename Scalar>
Var dense(Tape<Scalar>& t, const DenseParams& p, Var x) {
  return dense(t, x, t.param(p.w), std::optional<Var>(t.param(p.b)));
}

template <typename Scalar>
Var feedforward_block(Tape<Scalar>& t, const FeedforwardParams& p, Var x) {
  Var h = layer_norm(t, p.norm, x);
  h = gelu(t, dense(t, p.in, h));
  return add(t, x, dense(t, p.out, h));
}

template <typename Scalar>
Var attention_block(Tape<Scalar>& t, const AttentionBlockParams& p, AxisSpec spec, Var x) {
  Var h = layer_norm(t, p.norm, x);
  h = axial_attention(t, h, spec, t.param(p.wq), t.param(p.wk), t.param(p.wv), t.param(p.wo), p.heads);
  return add(t, x, dense(t, p.proj, h));
}

template <typename Scalar>
Var transformer_block(Tape<Scalar>& t, const TransformerBlockParams& p, Var x) {
  return feedforward_block(t, p.ffn, attention_block(t, p.attn, p.spec, x));
}

}  // namespace axial
