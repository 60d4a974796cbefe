#pragma once

// Reverse-mode differentiation over a dynamically recorded tape.
//
// A Tape records nodes in creation order, which is a topological order.
// Leaves are either constants or references into a ParameterStore; every
// other node owns a Function with a forward and a backward rule. backward()
// walks the tape in reverse and accumulates parameter gradients into a
// GradientSet (one tensor per store entry), so several tapes can share a
// read-only store and be reduced explicitly afterwards.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "axial/rng.hpp"
#include "axial/tensor.hpp"

namespace axial {

struct ParamRef {
  std::size_t index = 0;
};

template <typename Scalar>
using GradientSet = std::vector<Tensor<Scalar>>;

template <typename Scalar>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    Tensor<Scalar> moment1;
    Tensor<Scalar> moment2;
  };

  ParamRef add(std::string name, Tensor<Scalar> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    const ParamRef ref{entries_.size()};
    index_.emplace(name, ref.index);
    Tensor<Scalar> zeros(value.shape());
    entries_.push_back(Entry{std::move(name), std::move(value), zeros, zeros, zeros});
    return ref;
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  ParamRef ref(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
    return {it->second};
  }

  std::size_t size() const noexcept { return entries_.size(); }
  Entry& entry(ParamRef r) { return entries_.at(r.index); }
  const Entry& entry(ParamRef r) const { return entries_.at(r.index); }
  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  Tensor<Scalar>& value(ParamRef r) { return entry(r).value; }
  const Tensor<Scalar>& value(ParamRef r) const { return entry(r).value; }
  Tensor<Scalar>& grad(ParamRef r) { return entry(r).grad; }
  const Tensor<Scalar>& grad(ParamRef r) const { return entry(r).grad; }
  Tensor<Scalar>& value(std::string_view name) { return value(ref(name)); }
  const Tensor<Scalar>& value(std::string_view name) const { return value(ref(name)); }
  const Tensor<Scalar>& grad(std::string_view name) const { return grad(ref(name)); }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.grad.set_zero();
  }

  GradientSet<Scalar> make_gradient_set() const {
    GradientSet<Scalar> g;
    g.reserve(entries_.size());
    for (const auto& e : entries_) g.emplace_back(e.value.shape());
    return g;
  }

  void accumulate(const GradientSet<Scalar>& grads) {
    if (grads.size() != entries_.size()) throw DimensionError("gradient set size mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].grad.array() += grads[i].array();
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Var {
  std::int32_t id = -1;
};

template <typename Scalar>
using TensorPtrs = std::span<const Tensor<Scalar>* const>;
template <typename Scalar>
using GradPtrs = std::span<Tensor<Scalar>* const>;

/// A differentiable operation. backward() adds into each non-null grad_in.
template <typename Scalar>
class Function {
 public:
  virtual ~Function() = default;
  virtual const char* name() const = 0;
  virtual Tensor<Scalar> forward(TensorPtrs<Scalar> in) = 0;
  virtual void backward(TensorPtrs<Scalar> in, const Tensor<Scalar>& out,
                        const Tensor<Scalar>& grad_out, GradPtrs<Scalar> grad_in) = 0;
};

template <typename Scalar>
class Tape {
 public:
  explicit Tape(const ParameterStore<Scalar>* store = nullptr) : store_(store) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  const ParameterStore<Scalar>* store() const noexcept { return store_; }

  Var constant(Tensor<Scalar> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  Var param(ParamRef ref) {
    if (!store_) throw UsageError("tape has no parameter store");
    Node n;
    n.param = static_cast<std::int64_t>(ref.index);
    n.requires_grad = true;
    return push(std::move(n));
  }

  Var param(std::string_view name) { return param(store_->ref(name)); }

  Var apply(std::unique_ptr<Function<Scalar>> fn, std::initializer_list<Var> inputs) {
    return apply(std::move(fn), std::vector<Var>(inputs));
  }

  Var apply(std::unique_ptr<Function<Scalar>> fn, const std::vector<Var>& inputs) {
    Node n;
    n.inputs.reserve(inputs.size());
    for (Var v : inputs) {
      check(v);
      n.inputs.push_back(v.id);
      n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
    }
    const auto ptrs = input_values(n);
    n.value = fn->forward(ptrs);
    n.fn = std::move(fn);
    return push(std::move(n));
  }

  const Tensor<Scalar>& value(Var v) const {
    check(v);
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.param >= 0) return store_->value(ParamRef{static_cast<std::size_t>(n.param)});
    return n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Re-runs every recorded forward rule against current leaf values.
  void replay() {
    for (auto& n : nodes_) {
      if (!n.fn) continue;
      const auto ptrs = input_values(n);
      n.value = n.fn->forward(ptrs);
    }
  }

  /// Accumulates d(loss)/d(param) into grads (indexed like the store).
  void backward(Var loss, GradientSet<Scalar>& grads) const {
    check(loss);
    if (value(loss).size() != 1) {
      throw UsageError("backward needs a scalar loss, got shape " + shape_string(value(loss).shape()));
    }
    if (store_ && grads.size() != store_->size()) throw DimensionError("gradient set size mismatch");
    std::vector<std::optional<Tensor<Scalar>>> adj(nodes_.size());
    adj[static_cast<std::size_t>(loss.id)] = Tensor<Scalar>(value(loss).shape(), Scalar(1));
    for (std::int64_t id = loss.id; id >= 0; --id) {
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      auto& g = adj[static_cast<std::size_t>(id)];
      if (!g || !n.requires_grad) continue;
      if (n.param >= 0) {
        grads[static_cast<std::size_t>(n.param)].array() += g->array();
        continue;
      }
      if (!n.fn) continue;
      std::vector<Tensor<Scalar>*> grad_in(n.inputs.size(), nullptr);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const auto in = static_cast<std::size_t>(n.inputs[k]);
        if (!nodes_[in].requires_grad) continue;
        if (!adj[in]) adj[in] = Tensor<Scalar>(value(Var{n.inputs[k]}).shape());
        grad_in[k] = &*adj[in];
      }
      const auto ptrs = input_values(n);
      n.fn->backward(ptrs, n.value, *g, grad_in);
      g.reset();
    }
  }

 private:
  struct Node {
    std::unique_ptr<Function<Scalar>> fn;
    std::vector<std::int32_t> inputs;
    Tensor<Scalar> value;
    std::int64_t param = -1;
    bool requires_grad = false;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  void check(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw UsageError("invalid tape variable");
  }

  std::vector<const Tensor<Scalar>*> input_values(const Node& n) const {
    std::vector<const Tensor<Scalar>*> ptrs;
    ptrs.reserve(n.inputs.size());
    for (auto id : n.inputs) ptrs.push_back(&value(Var{id}));
    return ptrs;
  }

  const ParameterStore<Scalar>* store_;
  std::vector<Node> nodes_;
};

/// Accumulates gradients of `loss` into the store's own accumulators.
template <typename Scalar>
void backward(const Tape<Scalar>& tape, Var loss, ParameterStore<Scalar>& store) {
  auto grads = store.make_gradient_set();
  tape.backward(loss, grads);
  store.accumulate(grads);
}

// ---------------------------------------------------------------------------
// Kernels shared by the differentiable ops and by plain forward code.

/// y = x W (+ b) over the last axis of x. Row-wise so that each output row
/// depends only on its own input row and is computed identically for any
/// number of rows.
template <typename Scalar>
Tensor<Scalar> dense_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                             const std::type_identity_t<Tensor<Scalar>>* b = nullptr) {
  if (w.rank() != 2 || x.rank() < 1 || x.extent(x.rank() - 1) != w.extent(0)) {
    throw DimensionError("dense: input " + shape_string(x.shape()) + " vs weight " + shape_string(w.shape()));
  }
  const Index din = w.extent(0), dout = w.extent(1);
  if (b && b->size() != dout) throw DimensionError("dense: bias " + shape_string(b->shape()));
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor<Scalar> y(out_shape);
  const Index rows = x.size() / din;
  auto xm = x.matrix();
  auto wm = w.matrix();
  auto ym = y.matrix();
  for (Index r = 0; r < rows; ++r) {
    if (b) ym.row(r) = b->matrix().row(0);
    for (Index k = 0; k < din; ++k) ym.row(r) += xm(r, k) * wm.row(k);
  }
  return y;
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x * Scalar((std::numbers::sqrt2 / 2))));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * Scalar((std::numbers::sqrt2 / 2))));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * Scalar(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

// ---------------------------------------------------------------------------
// Differentiable ops.

namespace ops {

template <typename Scalar>
class Add final : public Function<Scalar> {
 public:
  const char* name() const override { return "add"; }
  Tensor<Scalar> forward(TensorPtrs<Scalar> in) override {
    if (in[0]->shape() != in[1]->shape()) {
      throw DimensionError("add: " + shape_string(in[0]->shape()) + " vs " + shape_string(in[1]->shape()));
    }
    Tensor<Scalar> out(in[0]->shape());
    out.array() = in[0]->array() + in[1]->array();
    return out;
  }
  void backward(TensorPtrs<Scalar>, const Tensor<Scalar>&, const Tensor<Scalar>& g,
                GradPtrs<Scalar> gin) override {
    for (auto* gi : gin) {
      if (gi) gi->array() += g.array();
    }
  }
};

template <typename Scalar>
class Mul final : public Function<Scalar> {
 public:
  const char* name() const override { return "mul"; }
  Tensor<Scalar> forward(TensorPtrs<Scalar> in) override {
    if (in[0]->shape() != in[1]->shape()) throw DimensionError("mul: shape mismatch");
    Tensor<Scalar> out(in[0]->shape());
    out.array() = in[0]->array() * in[1]->array();
    return out;
  }
  void backward(TensorPtrs<Scalar> in, const Tensor<Scalar>&, const Tensor<Scalar>& g,
                GradPtrs<Scalar> gin) override {
    if (gin[0]) gin[0]->array() += g.array() * in[1]->array();
    if (gin[1]) gin[1]->array() += g.array() * in[0]->array();
  }
};

template <typename Scalar>
class Scale final : public Function<Scalar> {
 public:
  explicit Scale(Scalar factor) : factor_(factor) {}
  const char* name() const override { return "scale"; }
  Tensor<Scalar> forward(TensorPtrs<Scalar> in) override {
    Tensor<Scalar> out(in[0]->shape());
    out.array() = in[0]->array() * factor_;
    return out;
  }
  void backward(TensorPtrs<Scalar>, const Tensor<Scalar>&, const Tensor<Scalar>& g,
                GradPtrs<Scalar> gin) override {
    if (gin[0]) gin[0]->array() += g.array() * factor_;
  }

 private:
  Scalar factor_;
};

template <typename Scalar>
class Sum final : public Function<Scalar> {
 public:
  const char* name() const override { return "sum"; }
  Tensor<Scalar> forward(TensorPtrs<Scalar> in) override {
    Scalar total = 0;
    for (Scalar v : in[0]->values()) total += v;
    return Tensor<Scalar>::scalar(total);
  }
  void backward(TensorPtrs<Scalar>, const Tensor<Scalar>&, const Tensor<Scalar>& g,
                GradPtrs<Scalar> gin) override {
    if (gin[0]) gin[0]->array() += g.item();
  }
};

/// sum(x * weights) with constant weights.
template <typename Scalar>
class WeightedSum final : public Function<Scalar> {
 public:
  explicit WeightedSum(Tensor<Scalar> weights) : weights_(std::move(weights)) {}
  const char* name() const override { return "weighted_sum"; }
  Tensor<Scalar> forward(TensorPtrs<Scalar> in) override {
    if (in[0]->shape() != weights_.shape()) throw DimensionError("weighted_sum: shape mismatch");
    Scalar total = 0;
    for (Index i = 0; i < weights_.size(); ++i) total += (*in[0])[i] * weights_[i];
    return Tensor<Scalar>::scalar(total);
  }
  void backward(TensorPtrs<Scalar>, const Tensor<Scalar>&, const Tensor<Scalar>& g,
                GradPtrs<Scalar> gin) override {
    if (gin[0]) gin[0]->array() += g.item() * weights_.array();
  }

 private:
  Tensor<Scalar> weights_;
};

template <typename Scalar>
class Softmax final : public Function<Scalar> {
 public:
  explicit Softmax(Index axis) : axis_(axis) {}
  const char* name() const override { return "softmax"; }
  Tensor<Scalar> forward(TensorPtrs<Scalar> in) override { return axial::softmax(*in[0], axis_); }
  void backward(TensorPtrs<Scalar> in, const Tensor<Scalar>& y, const Tensor<Scalar>& g,
                GradPtrs<Scalar> gin) override {
    if (!gin[0]) return;
    const auto s = detail::split_at(y.shape(), detail::normalize_axis(axis_, in[0]->rank()));
    for (Index o = 0; o < s.outer; ++o) {
      for (Index r = 0; r < s.inner; ++r) {
        const Index base = o * s.extent * s.inner + r;
        Scalar dot = 0;
        for (Index k = 0; k < s.extent; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
        for (Index k = 0; k < s.extent; ++k) {
          const Index i = base + k * s.inner;
          (*gin[0])[i] += y[i] * (g[i] - dot);
        }
      }
    }
  }

 private:
  Index axis_;
};

template <typename Scalar>
class Shift final : public Function<Scalar> {
 public:
  Shift(Index axis, Index offset) : axis_(axis), offset_(offset) {}
  const char* name() const override { return "shift"; }
  Tensor<Scalar> forward(TensorPtrs<Scalar> in) override { return axial::shift(*in[0], axis_, offset_); }
  void backward(TensorPtrs<Scalar> in, const Tensor<Scalar>&, const Tensor<Scalar>& g,
                GradPtrs<Scalar> gin) override {
    if (!gin[0]) return;
    const auto s = detail::split_at(g.shape(), detail::normalize_axis(axis_, in[0]->rank()));
    for (Index o = 0; o < s.outer; ++o) {
      for (Index k = offset_; k < s.extent; ++k) {
        ArrayMap<Scalar> dst(gin[0]->data() + (o * s.extent + k - offset_) * s.inner, s.inner);
        ConstArrayMap<Scalar> src(g.data() + (o * s.extent + k) * s.inner, s.inner);
        dst += src;
      }
    }
  }

 private:
  Index axis_, offset_;
};

/// inputs: x, W, optional b.
template <typename Scalar>
class Dense final : public Function<Scalar> {
 public:
  const char* name() const override { return "dense"; }
  Tensor<Scalar> forward(TensorPtrs<Scalar> in) override {
    return dense_forward(*in[0], *in[1], in.size() > 2 ? in[2] : nullptr);
  }
  void backward(TensorPtrs<Scalar> in, const Tensor<Scalar>&, const Tensor<Scalar>& g,
                GradPtrs<Scalar> gin) override {
    const auto& w = *in[1];
    const Index din = w.extent(0), dout = w.extent(1);
    ConstMatrixMap<Scalar> x(in[0]->data(), in[0]->size() / din, din);
    ConstMatrixMap<Scalar> dy(g.data(), g.size() / dout, dout);
    if (gin[0]) {
      MatrixMap<Scalar> dx(gin[0]->data(), x.rows(), din);
      dx.noalias() += dy * w.matrix().transpose();
    }
    if (gin[1]) gin[1]->matrix().noalias() += x.transpose() * dy;
    if (gin.size() > 2 && gin[2]) gin[2]->array() += dy.colwise().sum().transpose().array();
  }
};

template <typename Scalar>
class Gelu final : public Function<Scalar> {
 public:
  const char* name() const override { return "gelu"; }
  Tensor<Scalar> forward(TensorPtrs<Scalar> in) override {
    Tensor<Scalar> out(in[0]->shape());
    out.array() = in[0]->array().unaryExpr([](Scalar v) { return gelu(v); });
    return out;
  }
  void backward(TensorPtrs<Scalar> in, const Tensor<Scalar>&, const Tensor<Scalar>& g,
                GradPtrs<Scalar> gin) override {
    if (gin[0]) gin[0]->array() += g.array() * in[0]->array().unaryExpr([](Scalar v) { return gelu_grad(v); });
  }
};

/// inputs: x, gamma, beta.
template <typename Scalar>
class LayerNorm final : public Function<Scalar> {
 public:
  explicit LayerNorm(Scalar eps) : eps_(eps) {}
  const char* name() const override { return "layer_norm"; }
  Tensor<Scalar> forward(TensorPtrs<Scalar> in) override {
    return normalize_lastaxis(*in[0], *in[1], *in[2], eps_);
  }
  void backward(TensorPtrs<Scalar> in, const Tensor<Scalar>&, const Tensor<Scalar>& g,
                GradPtrs<Scalar> gin) override {
    const auto& x = *in[0];
    const auto& gamma = *in[1];
    const Index d = gamma.size();
    const Index rows = x.size() / d;
    std::vector<Scalar> xhat(static_cast<std::size_t>(d)), dxhat(static_cast<std::size_t>(d));
    for (Index r = 0; r < rows; ++r) {
      const Scalar* xr = x.data() + r * d;
      const Scalar* gr = g.data() + r * d;
      Scalar mean = 0;
      for (Index k = 0; k < d; ++k) mean += xr[k];
      mean /= static_cast<Scalar>(d);
      Scalar var = 0;
      for (Index k = 0; k < d; ++k) var += (xr[k] - mean) * (xr[k] - mean);
      var /= static_cast<Scalar>(d);
      const Scalar rstd = Scalar(1) / std::sqrt(var + eps_);
      Scalar mean_dxhat = 0, mean_dxhat_xhat = 0;
      for (Index k = 0; k < d; ++k) {
        const auto u = static_cast<std::size_t>(k);
        xhat[u] = (xr[k] - mean) * rstd;
        dxhat[u] = gr[k] * gamma[k];
        mean_dxhat += dxhat[u];
        mean_dxhat_xhat += dxhat[u] * xhat[u];
        if (gin[1]) (*gin[1])[k] += gr[k] * xhat[u];
        if (gin[2]) (*gin[2])[k] += gr[k];
      }
      if (!gin[0]) continue;
      mean_dxhat /= static_cast<Scalar>(d);
      mean_dxhat_xhat /= static_cast<Scalar>(d);
      Scalar* dx = gin[0]->data() + r * d;
      for (Index k = 0; k < d; ++k) {
        const auto u = static_cast<std::size_t>(k);
        dx[k] += rstd * (dxhat[u] - mean_dxhat - xhat[u] * mean_dxhat_xhat);
      }
    }
  }

 private:
  Scalar eps_;
};

/// Row gather: out[..., :] = table[symbols[...], :].
template <typename Scalar>
class Embedding final : public Function<Scalar> {
 public:
  explicit Embedding(DataTensor symbols) : symbols_(std::move(symbols)) {}
  const char* name() const override { return "embedding"; }
  Tensor<Scalar> forward(TensorPtrs<Scalar> in) override {
    const auto& table = *in[0];
    if (table.rank() != 2) throw DimensionError("embedding table must be rank 2");
    const Index rows = table.extent(0), d = table.extent(1);
    Shape shape = symbols_.shape();
    shape.push_back(d);
    Tensor<Scalar> out(shape);
    for (Index i = 0; i < symbols_.size(); ++i) {
      const Index s = symbols_[i];
      if (s < 0 || s >= rows) {
        throw UsageError("embedding symbol " + std::to_string(s) + " outside [0, " + std::to_string(rows) + ")");
      }
      std::copy_n(table.data() + s * d, d, out.data() + i * d);
    }
    return out;
  }
  void backward(TensorPtrs<Scalar> in, const Tensor<Scalar>&, const Tensor<Scalar>& g,
                GradPtrs<Scalar> gin) override {
    if (!gin[0]) return;
    const Index d = in[0]->extent(1);
    for (Index i = 0; i < symbols_.size(); ++i) {
      ArrayMap<Scalar> dst(gin[0]->data() + symbols_[i] * d, d);
      dst += ConstArrayMap<Scalar>(g.data() + i * d, d);
    }
  }

 private:
  DataTensor symbols_;
};

/// Additively factorized grid: out[i, j, :] = rows[i, :] + cols[j, :].
template <typename Scalar>
class PositionGrid final : public Function<Scalar> {
 public:
  const char* name() const override { return "position_grid"; }
  Tensor<Scalar> forward(TensorPtrs<Scalar> in) override {
    const auto& r = *in[0];
    const auto& c = *in[1];
    if (r.rank() != 2 || c.rank() != 2 || r.extent(1) != c.extent(1)) {
      throw DimensionError("position_grid: " + shape_string(r.shape()) + " vs " + shape_string(c.shape()));
    }
    const Index h = r.extent(0), w = c.extent(0), d = r.extent(1);
    Tensor<Scalar> out({h, w, d});
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        ArrayMap<Scalar>(out.data() + (i * w + j) * d, d) =
            ConstArrayMap<Scalar>(r.data() + i * d, d) + ConstArrayMap<Scalar>(c.data() + j * d, d);
      }
    }
    return out;
  }
  void backward(TensorPtrs<Scalar> in, const Tensor<Scalar>&, const Tensor<Scalar>& g,
                GradPtrs<Scalar> gin) override {
    const Index h = in[0]->extent(0), w = in[1]->extent(0), d = in[0]->extent(1);
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        ConstArrayMap<Scalar> src(g.data() + (i * w + j) * d, d);
        if (gin[0]) ArrayMap<Scalar>(gin[0]->data() + i * d, d) += src;
        if (gin[1]) ArrayMap<Scalar>(gin[1]->data() + j * d, d) += src;
      }
    }
  }
};

/// Sum over positions of -log2 softmax(logits)[target]. logits: [..., V].
template <typename Scalar>
class CrossEntropyBits final : public Function<Scalar> {
 public:
  explicit CrossEntropyBits(DataTensor targets) : targets_(std::move(targets)) {}
  const char* name() const override { return "cross_entropy_bits"; }
  Tensor<Scalar> forward(TensorPtrs<Scalar> in) override {
    const auto& z = *in[0];
    const Index v = z.extent(z.rank() - 1);
    if (z.size() / v != targets_.size()) {
      throw DimensionError("cross_entropy: logits " + shape_string(z.shape()) + " vs targets " +
                           shape_string(targets_.shape()));
    }
    Scalar total = 0;
    for (Index p = 0; p < targets_.size(); ++p) total += position_bits(z.data() + p * v, v, target(p, v));
    if (!std::isfinite(total)) throw NumericError("cross_entropy: non-finite loss");
    return Tensor<Scalar>::scalar(total);
  }
  void backward(TensorPtrs<Scalar> in, const Tensor<Scalar>&, const Tensor<Scalar>& g,
                GradPtrs<Scalar> gin) override {
    if (!gin[0]) return;
    const auto& z = *in[0];
    const Index v = z.extent(z.rank() - 1);
    const Scalar scale = g.item() / Scalar(std::numbers::ln2);
    for (Index p = 0; p < targets_.size(); ++p) {
      const Scalar* zp = z.data() + p * v;
      Scalar mx = zp[0];
      for (Index k = 1; k < v; ++k) mx = std::max(mx, zp[k]);
      Scalar total = 0;
      for (Index k = 0; k < v; ++k) total += std::exp(zp[k] - mx);
      Scalar* dz = gin[0]->data() + p * v;
      for (Index k = 0; k < v; ++k) dz[k] += scale * std::exp(zp[k] - mx) / total;
      dz[target(p, v)] -= scale;
    }
  }

  /// -log2 p(target); exact log2(V) for uniform logits.
  static Scalar position_bits(const Scalar* z, Index v, Index t) {
    Scalar mx = z[0];
    for (Index k = 1; k < v; ++k) mx = std::max(mx, z[k]);
    Scalar total = 0;
    for (Index k = 0; k < v; ++k) total += std::exp(z[k] - mx);
    return std::log2(total) + (mx - z[t]) / Scalar(std::numbers::ln2);
  }

 private:
  Index target(Index p, Index v) const {
    const Index t = targets_[p];
    if (t < 0 || t >= v) throw UsageError("target symbol " + std::to_string(t) + " outside vocabulary");
    return t;
  }

  DataTensor targets_;
};

}  // namespace ops

template <typename Scalar>
Var add(Tape<Scalar>& t, Var a, Var b) {
  return t.apply(std::make_unique<ops::Add<Scalar>>(), {a, b});
}
template <typename Scalar>
Var mul(Tape<Scalar>& t, Var a, Var b) {
  return t.apply(std::make_unique<ops::Mul<Scalar>>(), {a, b});
}
template <typename Scalar>
Var scale(Tape<Scalar>& t, Var a, Scalar factor) {
  return t.apply(std::make_unique<ops::Scale<Scalar>>(factor), {a});
}
template <typename Scalar>
Var sum(Tape<Scalar>& t, Var a) {
  return t.apply(std::make_unique<ops::Sum<Scalar>>(), {a});
}
template <typename Scalar>
Var weighted_sum(Tape<Scalar>& t, Var a, Tensor<Scalar> weights) {
  return t.apply(std::make_unique<ops::WeightedSum<Scalar>>(std::move(weights)), {a});
}
template <typename Scalar>
Var softmax(Tape<Scalar>& t, Var a, Index axis) {
  return t.apply(std::make_unique<ops::Softmax<Scalar>>(axis), {a});
}
template <typename Scalar>
Var shift(Tape<Scalar>& t, Var a, Index axis, Index offset = 1) {
  return t.apply(std::make_unique<ops::Shift<Scalar>>(axis, offset), {a});
}
template <typename Scalar>
Var dense(Tape<Scalar>& t, Var x, Var w, std::optional<Var> b = std::nullopt) {
  if (b) return t.apply(std::make_unique<ops::Dense<Scalar>>(), {x, w, *b});
  return t.apply(std::make_unique<ops::Dense<Scalar>>(), {x, w});
}
template <typename Scalar>
Var gelu(Tape<Scalar>& t, Var x) {
  return t.apply(std::make_unique<ops::Gelu<Scalar>>(), {x});
}
template <typename Scalar>
Var layer_norm(Tape<Scalar>& t, Var x, Var gamma, Var beta, Scalar eps) {
  return t.apply(std::make_unique<ops::LayerNorm<Scalar>>(eps), {x, gamma, beta});
}
template <typename Scalar>
Var embedding(Tape<Scalar>& t, Var table, DataTensor symbols) {
  return t.apply(std::make_unique<ops::Embedding<Scalar>>(std::move(symbols)), {table});
}
template <typename Scalar>
Var position_grid(Tape<Scalar>& t, Var rows, Var cols) {
  return t.apply(std::make_unique<ops::PositionGrid<Scalar>>(), {rows, cols});
}
template <typename Scalar>
Var cross_entropy_bits(Tape<Scalar>& t, Var logits, DataTensor targets) {
  return t.apply(std::make_unique<ops::CrossEntropyBits<Scalar>>(std::move(targets)), {logits});
}

// ---------------------------------------------------------------------------
// Gradient checking.

template <typename Scalar>
using LossBuilder = std::function<Var(Tape<Scalar>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates sampled across the whole store; every coordinate is
  /// checked when the store is at most this large.
  std::size_t max_coords = 256;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_error = 0.0;
  std::string worst_param;
  std::size_t coords_checked = 0;
};

/// Compares tape gradients to central differences. Error per coordinate is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
template <typename Scalar>
GradCheckResult grad_check(const LossBuilder<Scalar>& f, ParameterStore<Scalar>& store,
                           const GradCheckOptions& opt = {}) {
  auto analytic = store.make_gradient_set();
  {
    Tape<Scalar> tape(&store);
    const Var loss = f(tape);
    tape.backward(loss, analytic);
  }
  auto eval = [&] {
    Tape<Scalar> tape(&store);
    return static_cast<double>(tape.value(f(tape)).item());
  };

  std::vector<std::pair<std::size_t, Index>> coords;
  const auto total = static_cast<std::size_t>(store.parameter_count());
  if (total <= opt.max_coords) {
    for (std::size_t p = 0; p < store.size(); ++p) {
      for (Index i = 0; i < store.entries()[p].value.size(); ++i) coords.emplace_back(p, i);
    }
  } else {
    // At least one coordinate per tensor, the rest spread uniformly.
    Rng rng(opt.seed);
    for (std::size_t p = 0; p < store.size(); ++p) {
      coords.emplace_back(p, rng.uniform_int(store.entries()[p].value.size()));
    }
    while (coords.size() < opt.max_coords) {
      auto flat = static_cast<Index>(rng.uniform_int(static_cast<std::int64_t>(total)));
      std::size_t p = 0;
      while (flat >= store.entries()[p].value.size()) flat -= store.entries()[p++].value.size();
      coords.emplace_back(p, flat);
    }
  }

  GradCheckResult result;
  for (auto [p, i] : coords) {
    Scalar& w = store.entries()[p].value[i];
    const Scalar saved = w;
    w = saved + static_cast<Scalar>(opt.step);
    const double up = eval();
    w = saved - static_cast<Scalar>(opt.step);
    const double down = eval();
    w = saved;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double a = static_cast<double>(analytic[p][i]);
    const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (result.worst_param.empty() || err > result.max_error) {
      result.max_error = err;
      result.worst_param = store.entries()[p].name;
    }
    ++result.coords_checked;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Adam.

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update using the store's gradient accumulators;
/// `step` counts from 1.
template <typename Scalar>
void adam_step(ParameterStore<Scalar>& store, const AdamConfig& cfg, std::int64_t step) {
  if (step < 1) throw UsageError("adam_step: step index starts at 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const auto b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  for (auto& e : store.entries()) {
    const auto& g = e.grad.array();
    e.moment1.array() = b1 * e.moment1.array() + (Scalar(1) - b1) * g;
    e.moment2.array() = b2 * e.moment2.array() + (Scalar(1) - b2) * g * g;
    e.value.array() -= static_cast<Scalar>(cfg.lr) * (e.moment1.array() / static_cast<Scalar>(c1)) /
                       ((e.moment2.array() / static_cast<Scalar>(c2)).sqrt() + static_cast<Scalar>(cfg.eps));
  }
}

/// Linear warmup to cfg.lr over `warmup` steps.
inline double warmup_lr(double lr, std::int64_t step, std::int64_t warmup) {
  if (warmup <= 0 || step >= warmup) return lr;
  return lr * static_cast<double>(step) / static_cast<double>(warmup);
}

}  // namespace axial
