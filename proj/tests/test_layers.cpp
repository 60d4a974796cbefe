#include <gtest/gtest.h>

#include "axial/layers.hpp"

using namespace axial;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

Tensor<double> run(const ParameterStore<double>& store, const std::function<Var(Tape<double>&, Var)>& f,
                   const Tensor<double>& x) {
  Tape<double> t(&store);
  return t.value(f(t, t.constant(x)));
}

}  // namespace

TEST(Layers, ZeroBranchBlocksAreIdentity) {
  ParameterStore<double> store;
  Initializer init(InitScheme::zero_branch, Rng(1));
  const auto ffn = add_feedforward_block(store, "ffn", 4, 8, init);
  const auto attn = add_attention_block(store, "attn", 4, 2, init);
  const auto block = add_transformer_block(store, "block", {Axis::height, true}, 4, 8, 2, init);
  Rng rng(2);
  const auto x = random_tensor({3, 2, 4}, rng);
  EXPECT_EQ(run(store, [&](Tape<double>& t, Var v) { return feedforward_block(t, ffn, v); }, x), x);
  EXPECT_EQ(run(store, [&](Tape<double>& t, Var v) { return attention_block(t, attn, {Axis::width, false}, v); }, x), x);
  EXPECT_EQ(run(store, [&](Tape<double>& t, Var v) { return transformer_block(t, block, v); }, x), x);
}

TEST(Layers, AllZeroWeightsAreIdentity) {
  ParameterStore<double> store;
  Initializer init(InitScheme::dense_random, Rng(3));
  const auto block = add_transformer_block(store, "block", {Axis::width, true}, 4, 8, 2, init);
  for (auto& e : store.entries()) e.value.set_zero();
  Rng rng(4);
  const auto x = random_tensor({2, 3, 4}, rng);
  EXPECT_EQ(run(store, [&](Tape<double>& t, Var v) { return transformer_block(t, block, v); }, x), x);
}

TEST(Layers, FeedforwardResidualLiesInOutputRowSpan) {
  // D' = 2 < D = 4, so the branch output h W_out (bias zero) spans at most two
  // directions; project the residual onto the row space and check nothing is left.
  ParameterStore<double> store;
  Initializer init(InitScheme::dense_random, Rng(5));
  const auto ffn = add_feedforward_block(store, "ffn", 4, 2, init);
  store.value(ffn.out.b).set_zero();
  Rng rng(6);
  const auto x = random_tensor({2, 2, 4}, rng);
  const auto y = run(store, [&](Tape<double>& t, Var v) { return feedforward_block(t, ffn, v); }, x);
  const auto w = store.value(ffn.out.w).matrix();  // 2 x 4
  const Eigen::MatrixXd basis = w.transpose();     // columns span the row space
  for (Index p = 0; p < 4; ++p) {
    Eigen::VectorXd r(4);
    for (Index k = 0; k < 4; ++k) r[k] = y[p * 4 + k] - x[p * 4 + k];
    const Eigen::VectorXd coef = basis.colPivHouseholderQr().solve(r);
    EXPECT_LT((basis * coef - r).norm(), 1e-12);
    EXPECT_GT(r.norm(), 1e-6);
  }
}

TEST(Layers, AttentionBlockMatchesHandComposition) {
  ParameterStore<double> store;
  Initializer init(InitScheme::dense_random, Rng(7));
  const auto p = add_attention_block(store, "attn", 4, 2, init);
  Rng rng(8);
  const auto x = random_tensor({3, 3, 4}, rng);
  const AxisSpec spec{Axis::height, true};
  const auto y = run(store, [&](Tape<double>& t, Var v) { return attention_block(t, p, spec, v); }, x);

  const auto normed = normalize_lastaxis(x, store.value(p.norm.gamma), store.value(p.norm.beta), kLayerNormEps);
  const AttentionWeights<double> w{store.value(p.wq), store.value(p.wk), store.value(p.wv), store.value(p.wo), 2};
  const auto attended = attention_axis(normed, spec, w);
  auto expected = dense_forward(attended, store.value(p.proj.w), &store.value(p.proj.b));
  expected.array() = x.array() + expected.array();
  EXPECT_EQ(y, expected);
}

TEST(Layers, MaskedBlocksAreCausalAlongAxis) {
  ParameterStore<double> store;
  Initializer init(InitScheme::dense_random, Rng(9));
  const auto b1 = add_transformer_block(store, "b1", {Axis::width, true}, 4, 8, 2, init);
  const auto b2 = add_transformer_block(store, "b2", {Axis::width, true}, 4, 8, 2, init);
  auto stack = [&](Tape<double>& t, Var v) { return transformer_block(t, b2, transformer_block(t, b1, v)); };
  Rng rng(10);
  const auto x = random_tensor({2, 5, 4}, rng);
  const auto y = run(store, stack, x);
  for (Index j = 0; j < 5; ++j) {
    auto xp = x;
    for (Index k = 0; k < 4; ++k) xp(1, j, k) += rng.normal();
    const auto yp = run(store, stack, xp);
    for (Index q = 0; q < 5; ++q) {
      bool same = true;
      for (Index k = 0; k < 4; ++k) same = same && yp(1, q, k) == y(1, q, k);
      EXPECT_EQ(same, q < j) << "perturb column " << j << ", query " << q;
      for (Index k = 0; k < 4; ++k) EXPECT_EQ(yp(0, q, k), y(0, q, k));
    }
  }
}

TEST(Layers, BlocksPreserveShape) {
  ParameterStore<double> store;
  Initializer init(InitScheme::dense_random, Rng(11));
  const auto block = add_transformer_block(store, "b", {Axis::height, false}, 8, 16, 4, init);
  Rng rng(12);
  for (int trial = 0; trial < 3; ++trial) {
    const Index h = 1 + rng.uniform_int(5), w = 1 + rng.uniform_int(5);
    const auto y = run(store, [&](Tape<double>& t, Var v) { return transformer_block(t, block, v); },
                       random_tensor({h, w, 8}, rng));
    EXPECT_EQ(y.shape(), (Shape{h, w, 8}));
  }
}

class BlockGradCheck : public ::testing::TestWithParam<int> {};

TEST_P(BlockGradCheck, BelowTolerance) {
  ParameterStore<double> store;
  Initializer init(InitScheme::dense_random, Rng(13));
  Rng rng(14);
  const auto x = store.add("x", random_tensor({2, 2, 4}, rng));
  const auto ffn = add_feedforward_block(store, "ffn", 4, 8, init);
  const auto attn = add_attention_block(store, "attn", 4, 2, init);
  const auto block = add_transformer_block(store, "block", {Axis::height, true}, 4, 8, 2, init);
  const auto weights = random_tensor({2, 2, 4}, rng);
  const int which = GetParam();
  const auto res = grad_check<double>(
      [&](Tape<double>& t) {
        const Var v = t.param(x);
        Var y;
        if (which == 0) y = feedforward_block(t, ffn, v);
        else if (which == 1) y = attention_block(t, attn, {Axis::width, false}, v);
        else if (which == 2) y = attention_block(t, attn, {Axis::height, true}, v);
        else y = transformer_block(t, block, v);
        return weighted_sum(t, y, weights);
      },
      store, {.step = 1e-5, .max_coords = 100000, .seed = 0});
  EXPECT_LT(res.max_error, 1e-6) << res.worst_param;
}

INSTANTIATE_TEST_SUITE_P(Blocks, BlockGradCheck, ::testing::Values(0, 1, 2, 3));
