// Core plumbing: arrays, RNG streams, autograd engine, and per-op gradient
// checks (double precision, central differences).

#include <gtest/gtest.h>

#include "segattn/nn_ops.hpp"
#include "segattn/verify.hpp"

using namespace segattn;

namespace {

Rng make_rng(int salt) { return Rng(derive_seed(1234, "test_core", salt)); }

double gradcheck(std::vector<TensorD> leaves,
                 const std::function<TensorD()>& loss) {
  return verify::finite_diff_max_rel_error(std::move(leaves), loss);
}

// Projects the op output through a fixed random head so every coordinate
// participates in the scalar loss. The head is drawn once: the loss must be
// the same function on every finite-difference evaluation.
double gradcheck_op(std::vector<TensorD> leaves, std::function<TensorD()> fwd,
                    int salt) {
  Rng hr(derive_seed(555, "head", salt));
  ArrayD head;
  bool ready = false;
  auto loss = [&]() {
    TensorD y = fwd();
    if (!ready) {
      head = ArrayD::random_normal(y.value().shape(), hr);
      ready = true;
    }
    return sum_all(mul_const(y, head));
  };
  return verify::finite_diff_max_rel_error(std::move(leaves), loss);
}

}  // namespace

TEST(Rng, DeterministicStreams) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(43);
  EXPECT_NE(Rng(42).next_u64(), c.next_u64());
  EXPECT_NE(derive_seed(1, "x"), derive_seed(1, "y"));
  EXPECT_NE(derive_seed(1, "x", 0), derive_seed(1, "x", 1));
}

TEST(Rng, StateRoundTrip) {
  Rng a(7);
  a.normal();
  const auto st = a.save_state();
  std::vector<double> expect;
  for (int i = 0; i < 10; ++i) expect.push_back(a.normal());
  Rng b(999);
  b.restore_state(st);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(expect[i], b.normal());
}

TEST(Array, ShapeAndIndexing) {
  ArrayD a({2, 3, 4, 5});
  EXPECT_EQ(a.size(), 120);
  a.at(1, 2, 3, 4) = 7.5;
  EXPECT_EQ(a[119], 7.5);
  ArrayD b = a.reshaped({6, 20});
  EXPECT_EQ(b.at(5, 19), 7.5);
  EXPECT_THROW(a.reshaped({7, 20}), CheckError);
}

TEST(Autograd, BackwardAccumulatesThroughSharedNodes) {
  TensorD x = TensorD::leaf(ArrayD({1}, 3.0), true);
  TensorD y = mul(x, x);          // x^2
  TensorD z = add(y, mul(x, x));  // 2x^2, x used twice more
  z.backward();
  ASSERT_TRUE(x.has_grad());
  EXPECT_NEAR(x.grad()[0], 12.0, 1e-12);  // d(2x^2)/dx = 4x
}

TEST(Autograd, DetachStopsGradients) {
  TensorD x = TensorD::leaf(ArrayD({1}, 2.0), true);
  TensorD y = mul(x.detach(), x);
  y.backward();
  EXPECT_NEAR(x.grad()[0], 2.0, 1e-12);  // only the attached factor
}

TEST(OpGradients, Elementwise) {
  Rng rng = make_rng(1);
  TensorD a = TensorD::leaf(ArrayD::random_normal({3, 4}, rng), true);
  TensorD b = TensorD::leaf(ArrayD::random_normal({3, 4}, rng), true);
  EXPECT_LT(gradcheck_op({a, b}, [&] { return mul(add(a, b), sub(a, b)); }, 101), 1e-4);
  EXPECT_LT(gradcheck_op({a}, [&] { return tanh(a); }, 102), 1e-4);
  EXPECT_LT(gradcheck_op({a}, [&] { return sigmoid(a); }, 103), 1e-4);
  EXPECT_LT(gradcheck_op({a}, [&] { return softplus(a); }, 104), 1e-4);
  EXPECT_LT(gradcheck_op({a}, [&] { return exp(scale(a, 0.3)); }, 105), 1e-4);
  EXPECT_LT(gradcheck_op({a}, [&] { return leaky_relu(a, 0.2); }, 106), 1e-3);
}

TEST(OpGradients, MatmulFamily) {
  Rng rng = make_rng(2);
  TensorD a = TensorD::leaf(ArrayD::random_normal({3, 4}, rng), true);
  TensorD b = TensorD::leaf(ArrayD::random_normal({4, 5}, rng), true);
  EXPECT_LT(gradcheck_op({a, b}, [&] { return matmul(a, b); }, 107), 1e-4);
  TensorD bt = TensorD::leaf(ArrayD::random_normal({5, 4}, rng), true);
  EXPECT_LT(gradcheck_op({a, bt}, [&] { return matmul(a, bt, false, true); }, 108), 1e-4);
  TensorD at = TensorD::leaf(ArrayD::random_normal({4, 3}, rng), true);
  EXPECT_LT(gradcheck_op({at, b}, [&] { return matmul(at, b, true, false); }, 109), 1e-4);
  EXPECT_LT(gradcheck_op({at, bt}, [&] { return matmul(at, bt, true, true); }, 110), 1e-4);

  TensorD ba = TensorD::leaf(ArrayD::random_normal({2, 3, 4}, rng), true);
  TensorD bb = TensorD::leaf(ArrayD::random_normal({2, 4, 5}, rng), true);
  EXPECT_LT(gradcheck_op({ba, bb}, [&] { return bmm(ba, bb); }, 111), 1e-4);
  TensorD bbt = TensorD::leaf(ArrayD::random_normal({2, 5, 4}, rng), true);
  EXPECT_LT(gradcheck_op({ba, bbt}, [&] { return bmm(ba, bbt, false, true); }, 112), 1e-4);
}

TEST(OpGradients, ReductionsAndShape) {
  Rng rng = make_rng(3);
  TensorD a = TensorD::leaf(ArrayD::random_normal({4, 6}, rng), true);
  EXPECT_LT(gradcheck({a}, [&] { return mean_all(square(a)); }), 1e-4);
  EXPECT_LT(gradcheck_op({a}, [&] { return row_sum(a); }, 113), 1e-4);
  EXPECT_LT(gradcheck_op({a}, [&] { return slice_cols(a, 1, 4); }, 114), 1e-4);
  EXPECT_LT(gradcheck_op({a}, [&] { return slice_rows(a, 1, 3); }, 115), 1e-4);
  EXPECT_LT(gradcheck_op({a}, [&] { return transpose2d(a); }, 116), 1e-4);
  EXPECT_LT(gradcheck_op({a}, [&] { return reshape(a, {2, 12}); }, 117), 1e-4);
  TensorD b = TensorD::leaf(ArrayD::random_normal({4, 2}, rng), true);
  EXPECT_LT(gradcheck_op({a, b}, [&] { return concat_cols<double>({a, b}); }, 118), 1e-4);
  TensorD c3 = TensorD::leaf(ArrayD::random_normal({2, 3, 4}, rng), true);
  EXPECT_LT(gradcheck_op({c3}, [&] { return permute_021(c3); }, 119), 1e-4);
  TensorD bias = TensorD::leaf(ArrayD::random_normal({6}, rng), true);
  EXPECT_LT(gradcheck_op({a, bias}, [&] { return add_rowvec(a, bias); }, 120), 1e-4);
  EXPECT_LT(gradcheck_op({a, b}, [&] { return rowwise_dot(a, reshape(concat_cols<double>({b, b, b}), {4, 6})); }, 121), 1e-4);
}

TEST(OpGradients, SoftmaxFamily) {
  Rng rng = make_rng(4);
  TensorD a = TensorD::leaf(ArrayD::random_normal({3, 5}, rng), true);
  EXPECT_LT(gradcheck_op({a}, [&] { return softmax_rows(a, 2.0); }, 122), 1e-4);
  EXPECT_LT(gradcheck_op({a}, [&] { return l2_normalize_rows(a); }, 123), 1e-4);

  TensorD sc = TensorD::leaf(ArrayD::random_normal({2, 3, 4}, rng), true);
  ArrayD mask({2, 4}, 1.0);
  mask.at(0, 3) = 0.0;
  EXPECT_LT(gradcheck_op({sc}, [&] { return attn_softmax(sc, mask); }, 124), 1e-4);

  TensorD x4 = TensorD::leaf(ArrayD::random_normal({2, 3, 2, 2}, rng), true);
  EXPECT_LT(gradcheck_op({x4}, [&] { return softmax_channels(x4); }, 125), 1e-4);
}

TEST(OpGradients, ConvAndSpatial) {
  Rng rng = make_rng(5);
  TensorD x = TensorD::leaf(ArrayD::random_normal({2, 3, 5, 5}, rng), true);
  TensorD w = TensorD::leaf(ArrayD::random_normal({4, 3, 3, 3}, rng, 0.5), true);
  TensorD b = TensorD::leaf(ArrayD::random_normal({4}, rng), true);
  EXPECT_LT(gradcheck_op({x, w, b}, [&] { return conv2d(x, w, b, 1, 1); }, 126), 1e-4);

  TensorD xs = TensorD::leaf(ArrayD::random_normal({1, 2, 6, 6}, rng), true);
  TensorD ws = TensorD::leaf(ArrayD::random_normal({3, 2, 4, 4}, rng, 0.5), true);
  TensorD bs = TensorD::leaf(ArrayD::random_normal({3}, rng), true);
  EXPECT_LT(gradcheck_op({xs, ws, bs}, [&] { return conv2d(xs, ws, bs, 2, 1); }, 127), 1e-4);

  EXPECT_LT(gradcheck_op({x}, [&] { return upsample_nearest2(x); }, 128), 1e-4);
  TensorD xe = TensorD::leaf(ArrayD::random_normal({1, 2, 4, 4}, rng), true);
  EXPECT_LT(gradcheck_op({xe}, [&] { return downsample_nearest2(xe); }, 129), 1e-4);
  EXPECT_LT(gradcheck_op({x}, [&] { return global_avg_pool(x); }, 130), 1e-4);

  TensorD s2 = TensorD::leaf(ArrayD::random_normal({2, 3}, rng), true);
  EXPECT_LT(gradcheck_op({s2}, [&] { return broadcast_spatial(s2, 2, 2); }, 131), 1e-4);
  TensorD c4a = TensorD::leaf(ArrayD::random_normal({2, 2, 3, 3}, rng), true);
  TensorD c4b = TensorD::leaf(ArrayD::random_normal({2, 3, 3, 3}, rng), true);
  EXPECT_LT(gradcheck_op({c4a, c4b}, [&] { return concat_channels(c4a, c4b); }, 132), 1e-4);

  TensorD table = TensorD::leaf(ArrayD::random_normal({6, 3}, rng), true);
  EXPECT_LT(gradcheck({table}, [&] {
              return head_loss(embedding_lookup(table, {1, 4, 1, 0}), rng);
            }),
            1e-4);
}

TEST(OpGradients, BatchNormModes) {
  Rng rng = make_rng(6);
  TensorD x = TensorD::leaf(ArrayD::random_normal({2, 3, 4, 4}, rng, 1.5, 0.3), true);
  BnState<double> st(3);
  EXPECT_LT(gradcheck({x}, [&] {
              return head_loss(batch_norm(x, st, BnMode::kTrain), rng);
            }),
            1e-4);
  // Populate running stats, then check the eval path.
  batch_norm(x, st, BnMode::kTrain);
  EXPECT_LT(gradcheck({x}, [&] {
              return head_loss(batch_norm(x, st, BnMode::kEval), rng);
            }),
            1e-4);
  EXPECT_LT(gradcheck({x}, [&] {
              return head_loss(batch_norm(x, st, BnMode::kIdentity), rng);
            }),
            1e-4);
}

TEST(Conv, MatchesReferenceLoops) {
  Rng rng = make_rng(7);
  for (auto [stride, pad] : {std::pair<Index, Index>{1, 1}, {2, 1}, {1, 0}}) {
    ArrayD x = ArrayD::random_normal({2, 3, 7, 6}, rng);
    ArrayD w = ArrayD::random_normal({4, 3, 3, 3}, rng);
    ArrayD b = ArrayD::random_normal({4}, rng);
    TensorD got = conv2d(TensorD::constant(x), TensorD::constant(w),
                         TensorD::constant(b), stride, pad);
    ArrayD want = verify::reference_conv2d(x, w, b, stride, pad);
    ASSERT_TRUE(got.value().same_shape(want));
    for (Index i = 0; i < want.size(); ++i)
      ASSERT_NEAR(got.value()[i], want[i], 1e-10);
  }
}

TEST(BatchNorm, TrainModeRequiresTwoValues) {
  BnState<double> st(2);
  TensorD x = TensorD::constant(ArrayD({1, 2, 1, 1}, 3.0));
  EXPECT_THROW(batch_norm(x, st, BnMode::kTrain), CheckError);
}

TEST(BatchNorm, IdentityModeIsBitExact) {
  Rng rng = make_rng(8);
  ArrayD x = ArrayD::random_normal({2, 2, 3, 3}, rng);
  BnState<double> st(2);
  TensorD y = batch_norm(TensorD::constant(x), st, BnMode::kIdentity);
  for (Index i = 0; i < x.size(); ++i) EXPECT_EQ(y.value()[i], x[i]);
}

TEST(AttnSoftmax, AllPadRowThrows) {
  TensorD sc = TensorD::constant(ArrayD({1, 2, 3}, 0.5));
  ArrayD mask({1, 3}, 0.0);
  EXPECT_THROW(attn_softmax(sc, mask), CheckError);
}

TEST(Normalize, ZeroNormRowThrows) {
  ArrayD x({2, 3});
  x.at(0, 1) = 1.0;  // row 1 stays zero
  EXPECT_THROW(l2_normalize_rows(TensorD::constant(x)), CheckError);
}
