#pragma once

// Multi-head self-attention along one axis of an H x W x D tensor.
//
// attention_1d works on [B, N, D]: every batch row is an independent
// sequence. attention_axis realizes row (width) attention directly and
// column (height) attention by swapping the two spatial axes, attending,
// and swapping back.

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "axial/autodiff.hpp"
#include "axial/tensor.hpp"

namespace axial {

enum class Axis : int { height = 1, width = 2 };

struct AxisSpec {
  Axis axis = Axis::width;
  bool masked = false;
};

inline const char* axis_name(Axis a) { return a == Axis::height ? "height" : "width"; }

/// Non-owning view of the four D x D projections.
template <typename Scalar>
struct AttentionWeights {
  const Tensor<Scalar>& wq;
  const Tensor<Scalar>& wk;
  const Tensor<Scalar>& wv;
  const Tensor<Scalar>& wo;
  Index heads;

  Index model_dim() const { return wq.extent(0); }
  Index head_dim() const { return model_dim() / heads; }

  void validate() const {
    const Index d = wq.rank() == 2 ? wq.extent(0) : -1;
    for (const auto* w : {&wq, &wk, &wv, &wo}) {
      if (w->rank() != 2 || w->extent(0) != d || w->extent(1) != d) {
        throw ConfigError("attention projections must all be D x D");
      }
    }
    if (heads <= 0 || d % heads != 0) {
      throw ConfigError("attention: heads (" + std::to_string(heads) + ") must divide D (" +
                        std::to_string(d) + ")");
    }
  }
};

/// Owning parameter set.
template <typename Scalar>
struct AttentionParams {
  Tensor<Scalar> wq, wk, wv, wo;
  Index heads = 1;

  AttentionWeights<Scalar> view() const { return {wq, wk, wv, wo, heads}; }
};

/// Intermediates kept for the backward pass.
template <typename Scalar>
struct AttentionCache {
  Tensor<Scalar> q, k, v;  // [B, N, D]
  Tensor<Scalar> probs;    // [B, heads, N, N]
  Tensor<Scalar> mixed;    // [B, N, D], heads concatenated before W_O
};

namespace detail {

/// One head over one sequence. Rows of q/k/v/out are `stride` apart.
/// Scores and the weighted sum are accumulated left to right over keys so a
/// query's result depends only on the keys it can see, never on how many
/// masked keys follow it.
template <typename Scalar>
void attend_head(const Scalar* q, const Scalar* k, const Scalar* v, Index stride, Index n, Index dh,
                 Scalar scale, bool masked, Scalar* out, std::type_identity_t<Scalar>* probs,
                 std::vector<Scalar>& scratch) {
  scratch.resize(static_cast<std::size_t>(n));
  const Scalar mask = static_cast<Scalar>(kMaskValue);
  for (Index i = 0; i < n; ++i) {
    const Scalar* qi = q + i * stride;
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Index j = 0; j < n; ++j) {
      const Scalar* kj = k + j * stride;
      Scalar s = 0;
      for (Index t = 0; t < dh; ++t) s += qi[t] * kj[t];
      s *= scale;
      if (masked && j > i) s += mask;
      scratch[static_cast<std::size_t>(j)] = s;
      mx = std::max(mx, s);
    }
    Scalar total = 0;
    for (Index j = 0; j < n; ++j) {
      auto& e = scratch[static_cast<std::size_t>(j)];
      e = std::exp(e - mx);
      total += e;
    }
    ArrayMap<Scalar> oi(out + i * stride, dh);
    oi.setZero();
    for (Index j = 0; j < n; ++j) {
      const Scalar a = scratch[static_cast<std::size_t>(j)] / total;
      if (probs) probs[i * n + j] = a;
      oi += a * ConstArrayMap<Scalar>(v + j * stride, dh);
    }
  }
}

}  // namespace detail

/// Multi-head attention over axis 1 of x: [B, N, D] -> [B, N, D].
/// Scores are scaled by 1/sqrt(head_dim); masked attention lets position i
/// see positions 0..i inclusive.
template <typename Scalar>
Tensor<Scalar> attention_1d(const Tensor<Scalar>& x, const AttentionWeights<Scalar>& w, bool masked,
                            AttentionCache<Scalar>* cache = nullptr) {
  w.validate();
  if (x.rank() != 3 || x.extent(2) != w.model_dim()) {
    throw DimensionError("attention_1d: input " + shape_string(x.shape()) + " vs model dim " +
                         std::to_string(w.model_dim()));
  }
  const Index b = x.extent(0), n = x.extent(1), d = x.extent(2);
  const Index heads = w.heads, dh = w.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  Tensor<Scalar> q = dense_forward(x, w.wq, nullptr);
  Tensor<Scalar> k = dense_forward(x, w.wk, nullptr);
  Tensor<Scalar> v = dense_forward(x, w.wv, nullptr);
  Tensor<Scalar> mixed(x.shape());
  Tensor<Scalar> probs;
  if (cache) probs = Tensor<Scalar>({b, heads, n, n});

  std::vector<Scalar> scratch;
  for (Index bi = 0; bi < b; ++bi) {
    for (Index h = 0; h < heads; ++h) {
      const Index off = bi * n * d + h * dh;
      detail::attend_head(q.data() + off, k.data() + off, v.data() + off, d, n, dh, scale, masked,
                          mixed.data() + off, cache ? probs.data() + (bi * heads + h) * n * n : nullptr,
                          scratch);
    }
  }
  Tensor<Scalar> y = dense_forward(mixed, w.wo, nullptr);
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->mixed = std::move(mixed);
  }
  return y;
}

/// Gradient of attention_1d. Output pointers may be null; all are added to.
/// The additive mask is a constant: masked probabilities are exactly zero,
/// so no gradient reaches masked scores.
template <typename Scalar>
void attention_1d_backward(const Tensor<Scalar>& x, const AttentionWeights<Scalar>& w,
                           const AttentionCache<Scalar>& cache, const Tensor<Scalar>& dy, Tensor<Scalar>* dx,
                           Tensor<Scalar>* dwq, Tensor<Scalar>* dwk, Tensor<Scalar>* dwv,
                           Tensor<Scalar>* dwo) {
  const Index b = x.extent(0), n = x.extent(1), d = x.extent(2);
  const Index heads = w.heads, dh = w.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const Index rows = b * n;

  ConstMatrixMap<Scalar> dym(dy.data(), rows, d);
  ConstMatrixMap<Scalar> mixed(cache.mixed.data(), rows, d);
  if (dwo) dwo->matrix().noalias() += mixed.transpose() * dym;
  RowMatrix<Scalar> dmixed = dym * w.wo.matrix().transpose();

  RowMatrix<Scalar> dq = RowMatrix<Scalar>::Zero(rows, d);
  RowMatrix<Scalar> dk = RowMatrix<Scalar>::Zero(rows, d);
  RowMatrix<Scalar> dv = RowMatrix<Scalar>::Zero(rows, d);
  ConstMatrixMap<Scalar> q(cache.q.data(), rows, d), k(cache.k.data(), rows, d), v(cache.v.data(), rows, d);

  for (Index bi = 0; bi < b; ++bi) {
    for (Index h = 0; h < heads; ++h) {
      ConstMatrixMap<Scalar> a(cache.probs.data() + (bi * heads + h) * n * n, n, n);
      const auto qh = q.block(bi * n, h * dh, n, dh);
      const auto kh = k.block(bi * n, h * dh, n, dh);
      const auto vh = v.block(bi * n, h * dh, n, dh);
      const auto doh = dmixed.block(bi * n, h * dh, n, dh);
      RowMatrix<Scalar> da = doh * vh.transpose();
      dv.block(bi * n, h * dh, n, dh).noalias() += a.transpose() * doh;
      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rowdot = (da.array() * a.array()).rowwise().sum();
      RowMatrix<Scalar> ds = (a.array() * (da.array().colwise() - rowdot.array())).matrix() * scale;
      dq.block(bi * n, h * dh, n, dh).noalias() += ds * kh;
      dk.block(bi * n, h * dh, n, dh).noalias() += ds.transpose() * qh;
    }
  }

  ConstMatrixMap<Scalar> xm(x.data(), rows, d);
  if (dwq) dwq->matrix().noalias() += xm.transpose() * dq;
  if (dwk) dwk->matrix().noalias() += xm.transpose() * dk;
  if (dwv) dwv->matrix().noalias() += xm.transpose() * dv;
  if (dx) {
    MatrixMap<Scalar> dxm(dx->data(), rows, d);
    dxm.noalias() += dq * w.wq.matrix().transpose();
    dxm.noalias() += dk * w.wk.matrix().transpose();
    dxm.noalias() += dv * w.wv.matrix().transpose();
  }
}

/// Attention along one spatial axis of x: [H, W, D] -> [H, W, D]. Slices
/// along the other spatial axis never interact.
template <typename Scalar>
Tensor<Scalar> attention_axis(const Tensor<Scalar>& x, const AxisSpec& spec, const AttentionWeights<Scalar>& w,
                              AttentionCache<Scalar>* cache = nullptr) {
  if (x.rank() != 3) throw DimensionError("attention_axis expects H x W x D, got " + shape_string(x.shape()));
  switch (spec.axis) {
    case Axis::width: return attention_1d(x, w, spec.masked, cache);
    case Axis::height: return swap_leading_axes(attention_1d(swap_leading_axes(x), w, spec.masked, cache));
  }
  throw ConfigError("attention_axis: invalid axis");
}

namespace ops {

/// inputs: x [H, W, D], W_Q, W_K, W_V, W_O.
template <typename Scalar>
class AxialAttention final : public Function<Scalar> {
 public:
  AxialAttention(AxisSpec spec, Index heads) : spec_(spec), heads_(heads) {}
  const char* name() const override { return "axial_attention"; }

  Tensor<Scalar> forward(TensorPtrs<Scalar> in) override {
    return attention_axis(*in[0], spec_, weights(in), &cache_);
  }

  void backward(TensorPtrs<Scalar> in, const Tensor<Scalar>&, const Tensor<Scalar>& g,
                GradPtrs<Scalar> gin) override {
    const bool col = spec_.axis == Axis::height;
    const Tensor<Scalar> x = col ? swap_leading_axes(*in[0]) : *in[0];
    const Tensor<Scalar> dy = col ? swap_leading_axes(g) : g;
    Tensor<Scalar> dx;
    if (gin[0]) dx = Tensor<Scalar>(x.shape());
    attention_1d_backward(x, weights(in), cache_, dy, gin[0] ? &dx : nullptr, gin[1], gin[2], gin[3], gin[4]);
    if (gin[0]) gin[0]->array() += (col ? swap_leading_axes(dx) : dx).array();
  }

 private:
  AttentionWeights<Scalar> weights(TensorPtrs<Scalar> in) const {
    return {*in[1], *in[2], *in[3], *in[4], heads_};
  }

  AxisSpec spec_;
  Index heads_;
  AttentionCache<Scalar> cache_;
};

}  // namespace ops

template <typename Scalar>
Var axial_attention(Tape<Scalar>& t, Var x, AxisSpec spec, Var wq, Var wk, Var wv, Var wo, Index heads) {
  return t.apply(std::make_unique<ops::AxialAttention<Scalar>>(spec, heads), {x, wq, wk, wv, wo});
}

enum class AttentionMode { full, axial };

/// Query-key pairs for one attention layer over an S^d tensor: full
/// attention pairs every element with every other (S^(2d)); axial attention
/// along one axis pairs within S^(d-1) sequences of length S (S^(d+1)).
std::uint64_t pair_count(std::uint64_t extent, unsigned rank, AttentionMode mode);

/// Attention without projections over [B, N, dh] (q = k = v = x, one head).
/// Used to time the pairwise core in isolation.
template <typename Scalar>
Tensor<Scalar> attention_core(const Tensor<Scalar>& x, bool masked) {
  const Index b = x.extent(0), n = x.extent(1), dh = x.extent(2);
  Tensor<Scalar> out(x.shape());
  std::vector<Scalar> scratch;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  for (Index bi = 0; bi < b; ++bi) {
    const Scalar* base = x.data() + bi * n * dh;
    detail::attend_head(base, base, base, dh, n, dh, scale, masked, out.data() + bi * n * dh, nullptr, scratch);
  }
  return out;
}

}  // namespace axial
