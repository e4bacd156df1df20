#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "instformer/autodiff.hpp"
#include "instformer/error.hpp"
#include "instformer/gradcheck.hpp"
#include "instformer/grad_suite.hpp"
#include "support.hpp"

using namespace instformer;
using namespace instformer::ad;
using testing_support::Rng;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Tensor random_param(Rng& rng, ad::Shape shape) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::parameter(std::move(shape), std::move(v));
}

RowMat as_matrix(const Tensor& t) {
  return Eigen::Map<const RowMat>(t.value().data(), static_cast<Eigen::Index>(t.dim(0)),
                                  static_cast<Eigen::Index>(t.dim(1)));
}

}  // namespace

TEST(Tensor, ConstructionChecksShape) {
  EXPECT_THROW(Tensor::constant({2, 3}, std::vector<double>(5)), ShapeError);
  const auto t = Tensor::zeros({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_THROW(t.dim(2), ShapeError);
  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor().value(), InvalidArgument);
}

TEST(Ops, MatmulMatchesEigen) {
  Rng rng(41);
  const auto a = random_param(rng, {3, 4});
  const auto b = random_param(rng, {4, 5});
  const auto c = random_param(rng, {5, 4});
  EXPECT_LT((as_matrix(matmul(a, b)) - as_matrix(a) * as_matrix(b)).norm(), 1e-13);
  EXPECT_LT((as_matrix(matmul_nt(a, c)) - as_matrix(a) * as_matrix(c).transpose()).norm(), 1e-13);
  EXPECT_EQ(as_matrix(transpose(a)), RowMat(as_matrix(a).transpose()));
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Ops, BroadcastAddAlongLeadingAxis) {
  const auto a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto b = Tensor::constant({3}, {10, 20, 30});
  EXPECT_EQ(add(a, b).value(), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  EXPECT_THROW(add(a, Tensor::constant({2}, {1, 2})), ShapeError);
}

TEST(Ops, SoftmaxRowsSumToOneAndMaskGivesExactZero) {
  const auto a = Tensor::constant({2, 3}, {1, 2, 3, -1, 0, 100});
  const auto s = softmax(a, 1);
  for (int r = 0; r < 2; ++r) EXPECT_NEAR(s.at(r, 0) + s.at(r, 1) + s.at(r, 2), 1.0, 1e-15);
  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<double> mask{0, -inf, 0, -inf, 0, 0};
  const auto m = softmax(a, 1, mask);
  EXPECT_EQ(m.at(0, 1), 0.0);
  EXPECT_EQ(m.at(1, 0), 0.0);
  EXPECT_NEAR(m.at(0, 0), 1.0 / (1.0 + std::exp(2.0)), 1e-15);
  const std::vector<double> all_masked{-inf, -inf, -inf, 0, 0, 0};
  EXPECT_THROW(softmax(a, 1, all_masked), NumericError);
}

TEST(Ops, LayerNormHasZeroMeanUnitVariance) {
  Rng rng(42);
  const auto x = random_param(rng, {4, 16});
  const auto y = layer_norm(x, Tensor::constant({16}, std::vector<double>(16, 1.0)), Tensor::zeros({16}));
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 16; ++c) mean += y.at(r, c);
    mean /= 16;
    for (std::size_t c = 0; c < 16; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var / 16, 1.0, 1e-3);
  }
}

TEST(Ops, ReductionsSliceGatherConcat) {
  const auto a = Tensor::constant({2, 3}, {1, 5, 3, 4, 2, 6});
  EXPECT_EQ(reduce_max(a, 0).value(), (std::vector<double>{4, 5, 6}));
  EXPECT_EQ(reduce_max(a, 1).value(), (std::vector<double>{5, 6}));
  EXPECT_EQ(reduce_mean(a, 1).value(), (std::vector<double>{3, 4}));
  EXPECT_EQ(sum(a).item(), 21.0);
  EXPECT_EQ(slice(a, 1, 1, 3).value(), (std::vector<double>{5, 3, 2, 6}));
  const std::vector<std::size_t> rows{1, 1, 0};
  EXPECT_EQ(gather_rows(a, rows).value(), (std::vector<double>{4, 2, 6, 4, 2, 6, 1, 5, 3}));
  EXPECT_EQ(concat({a, a}, 1).shape(), (ad::Shape{2, 6}));
  EXPECT_EQ(concat({a, a}, 0).value()[6], 1.0);
  EXPECT_EQ(reshape(a, {3, 2}).shape(), (ad::Shape{3, 2}));
  EXPECT_THROW(reshape(a, {4, 2}), ShapeError);
  EXPECT_THROW(slice(a, 1, 2, 4), ShapeError);
}

TEST(Ops, L2NormalizeGivesUnitRows) {
  const auto a = Tensor::constant({2, 4}, {1, 2, 3, 4, -1, 0, 0, 0});
  const auto n = l2_normalize(a, 1);
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 4; ++c) s += n.at(r, c) * n.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-10);
  }
}

TEST(Ops, NonFiniteOutputIsRejected) {
  const auto a = Tensor::constant({1}, {std::numeric_limits<double>::max()});
  EXPECT_THROW(scale(a, 10.0), NumericError);
}

TEST(Tape, NothingRecordedWithoutTapeOrGradient) {
  Rng rng(43);
  const auto a = random_param(rng, {2, 2});
  Tape tape;
  {
    TapeScope scope(tape);
    (void)matmul(Tensor::constant({2, 2}, {1, 2, 3, 4}), Tensor::constant({2, 2}, {1, 0, 0, 1}));
    EXPECT_TRUE(tape.empty());
    {
      NoGradScope off;
      (void)matmul(a, a);
      EXPECT_TRUE(tape.empty());
    }
    (void)matmul(a, a);
    EXPECT_EQ(tape.size(), 1u);
  }
  EXPECT_EQ(active_tape(), nullptr);
  (void)matmul(a, a);
  EXPECT_EQ(tape.size(), 1u);
}

TEST(Tape, GradientsAccumulateUntilZeroed) {
  auto x = Tensor::parameter({2}, {1.0, -2.0});
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    TapeScope scope(tape);
    const auto loss = sum(mul(x, x));
    tape.backward(loss);
    EXPECT_TRUE(tape.empty());
  }
  EXPECT_EQ(x.grad(), (std::vector<double>{4.0, -8.0}));
  x.zero_grad();
  EXPECT_EQ(x.grad(), (std::vector<double>{0.0, 0.0}));
}

TEST(Tape, BackwardRejectsBadLoss) {
  auto x = Tensor::parameter({2}, {1.0, 2.0});
  Tape tape;
  TapeScope scope(tape);
  EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), InvalidArgument);
  const auto y = scale(x, 2.0);
  EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Tape, SharedSubexpressionGetsBothContributions) {
  auto x = Tensor::parameter({1}, {3.0});
  Tape tape;
  TapeScope scope(tape);
  const auto y = mul(x, x);
  const auto loss = sum(add(y, mul(y, x)));  // x^2 + x^3
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 3.0 + 3 * 9.0);
}

TEST(GradCheck, DetectsAWrongGradient) {
  const auto bad = [](const Tensor& x) {
    const auto y = mul(x, x);
    // Forward is x^2 but backward pretends the derivative is x.
    return make_result("bad", {}, {sum(Tensor::constant(y.shape(), y.value())).item()}, {x},
                       [x](Node& n) {
                         std::vector<double> g(x.size());
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[0] * x.value()[i];
                         accumulate(*x.node(), g);
                       });
  };
  const auto x = Tensor::parameter({3}, {1.0, 2.0, -1.5});
  EXPECT_GT(grad_check(bad, x), 0.1);
  EXPECT_LT(grad_check([](const Tensor& t) { return sum(mul(t, t)); }, x), 1e-8);
}

TEST(GradCheck, BranchSkippingOnlyDropsKinkCrossings) {
  // relu at 5e-5 straddles zero for eps 1e-4.
  std::vector<Tensor> leaves{Tensor::parameter({3}, {5e-5, 1.0, -1.0})};
  const auto f = [&] { return sum(relu(leaves[0])); };
  const auto strict = grad_check_detailed(f, leaves, {1e-4, 0, 0, false});
  EXPECT_GT(strict.max_error, 0.1);
  EXPECT_EQ(strict.skipped, 0u);
  const auto skipping = grad_check_detailed(f, leaves, {1e-4, 0, 0, true});
  EXPECT_EQ(skipping.skipped, 1u);
  EXPECT_EQ(skipping.probes, 3u);
  EXPECT_LT(skipping.max_error, 1e-9);
}

TEST(GradCheck, EveryOpPassesCentralDifferences) {
  const auto report = op_grad_suite(3);
  EXPECT_GE(report.entries.size(), 20u);
  for (const auto& e : report.entries) {
    EXPECT_LT(e.max_error, 1e-3) << e.name;
    EXPECT_EQ(e.skipped, 0u) << e.name;
    EXPECT_GT(e.probes, 0u) << e.name;
  }
}

TEST(GradCheck, OpApplyKnowsEveryName) {
  const auto a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  EXPECT_THROW(op_apply("no_such_op", std::vector<Tensor>{a}), InvalidArgument);
  EXPECT_FALSE(op_names().empty());
  EXPECT_EQ(op_apply("relu", std::vector<Tensor>{a}).value(), a.value());
}
