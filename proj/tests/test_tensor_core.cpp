#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "pcnn/error.hpp"
#include "pcnn/grad_check.hpp"
#include "pcnn/ops.hpp"
#include "pcnn/tape.hpp"
#include "pcnn/tensor.hpp"
#include "support.hpp"

using namespace pcnn;
using pcnn::test::random_tensor;

namespace {

Tensor scalar_tensor(double v) { return Tensor::scalar(v); }

std::vector<double> values(const Var& v) { return {v.value().data().begin(), v.value().data().end()}; }

}  // namespace

TEST(TensorTest, ShapeAndSizeAgree) {
  Tensor t({2, 3, 4}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.dim(2), 4u);
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5, 0.0)), DimensionError);
  EXPECT_THROW(t.reshaped({5, 5}), DimensionError);
  EXPECT_EQ(t.reshaped({6, 4}).shape(), (Shape{6, 4}));
}

TEST(TensorTest, CheckFiniteNamesTheTensor) {
  Tensor t({2}, {1.0, std::nan("")});
  EXPECT_FALSE(t.all_finite());
  try {
    t.check_finite("weights");
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("weights"), std::string::npos);
  }
}

TEST(TapeTest, InputsPrecedeConsumers) {
  Tape tape;
  Param p("p", Tensor({2, 2}, 1.0));
  Var a = tape.param(p);
  Var b = tape.constant(Tensor({2, 2}, 2.0));
  Var c = mul(add(a, b), a);
  Var l = sum(c);
  for (std::size_t id = 0; id < tape.size(); ++id)
    for (std::size_t in : tape.inputs(id)) EXPECT_LT(in, id);
  tape.backward(l);
  EXPECT_EQ(p.grad.shape(), p.value.shape());
  // d/da (a + b) a = 2a + b = 4
  for (double g : p.grad.data()) EXPECT_DOUBLE_EQ(g, 4.0);
  EXPECT_EQ(c.grad().shape(), c.shape());
}

TEST(TapeTest, GradientsAccumulateAcrossUses) {
  Tape tape;
  Param p("p", scalar_tensor(3.0));
  Var x = tape.param(p);
  tape.backward(add(add(x, x), x));
  EXPECT_DOUBLE_EQ(p.grad.item(), 3.0);
}

TEST(MatmulTest, Examples) {
  Tape tape;
  Var i2 = tape.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  Var m = tape.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  EXPECT_EQ(matmul(i2, m).value(), m.value());

  Var row = tape.constant(Tensor::from_rows({{1, 2}}));
  Var col = tape.constant(Tensor::from_rows({{3}, {4}}));
  EXPECT_DOUBLE_EQ(matmul(row, col).value().item(), 11.0);

  std::mt19937_64 rng(3);
  Var z = tape.constant(Tensor({2, 3}, 0.0));
  Var any = tape.constant(random_tensor(rng, {3, 4}));
  EXPECT_EQ(matmul(z, any).value(), Tensor({2, 4}, 0.0));
}

TEST(MatmulTest, MismatchNamesBothShapes) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}, 1.0));
  Var b = tape.constant(Tensor({4, 5}, 1.0));
  try {
    matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(shape_string({2, 3})), std::string::npos) << msg;
    EXPECT_NE(msg.find(shape_string({4, 5})), std::string::npos) << msg;
  }
}

TEST(LeakyReluTest, ValuesAndKinkConvention) {
  Tape tape;
  Param p("x", Tensor({3}, {1.0, -1.0, 0.0}));
  Var y = leaky_relu(tape.param(p), 0.2);
  EXPECT_DOUBLE_EQ(y.value()[0], 1.0);
  EXPECT_DOUBLE_EQ(y.value()[1], -0.2);
  EXPECT_DOUBLE_EQ(y.value()[2], 0.0);
  tape.backward(sum(y));
  EXPECT_DOUBLE_EQ(p.grad[0], 1.0);
  EXPECT_DOUBLE_EQ(p.grad[1], 0.2);
  EXPECT_DOUBLE_EQ(p.grad[2], 0.2);
}

TEST(BatchNormTest, NormalisesToUnitVariance) {
  Tape tape;
  BatchNormState st(1);
  st.eps = 1e-12;
  Var x = tape.constant(Tensor::from_rows({{-1}, {1}}));
  Var g = tape.constant(Tensor({1}, 1.0));
  Var b = tape.constant(Tensor({1}, 0.0));
  Var y = batch_norm(x, g, b, st, Mode::Train);
  EXPECT_NEAR(y.value()[0], -1.0, 1e-9);
  EXPECT_NEAR(y.value()[1], 1.0, 1e-9);
}

TEST(BatchNormTest, ConstantColumnGivesShift) {
  Tape tape;
  BatchNormState st(1);
  Var x = tape.constant(Tensor({4, 1}, 2.5));
  Var y = batch_norm(x, tape.constant(Tensor({1}, 1.0)), tape.constant(Tensor({1}, 5.0)), st, Mode::Train);
  for (double v : y.value().data()) EXPECT_NEAR(v, 5.0, 1e-12);
}

TEST(BatchNormTest, EvalWithUnitStatisticsIsAffine) {
  Tape tape;
  BatchNormState st(2);
  st.eps = 0.0;
  std::mt19937_64 rng(5);
  Tensor xv = random_tensor(rng, {3, 2});
  Var y = batch_norm(tape.constant(xv), tape.constant(Tensor({2}, {2.0, -1.0})), tape.constant(Tensor({2}, {0.5, 1.0})),
                     st, Mode::Eval);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_DOUBLE_EQ(y.value().at(r, 0), 2.0 * xv.at(r, 0) + 0.5);
    EXPECT_DOUBLE_EQ(y.value().at(r, 1), -1.0 * xv.at(r, 1) + 1.0);
  }
}

TEST(BatchNormTest, TrainingNeedsTwoValues) {
  Tape tape;
  BatchNormState st(3);
  Var x = tape.constant(Tensor({1, 3}, 1.0));
  EXPECT_THROW(batch_norm(x, tape.constant(Tensor({3}, 1.0)), tape.constant(Tensor({3}, 0.0)), st, Mode::Train),
               BatchSizeError);
}

TEST(BatchNormTest, RunningStatisticsUseUnbiasedVariance) {
  Tape tape;
  BatchNormState st(1);
  st.momentum = 1.0;
  Var x = tape.constant(Tensor::from_rows({{1}, {3}}));
  batch_norm(x, tape.constant(Tensor({1}, 1.0)), tape.constant(Tensor({1}, 0.0)), st, Mode::Train);
  EXPECT_DOUBLE_EQ(st.running_mean[0], 2.0);
  EXPECT_DOUBLE_EQ(st.running_var[0], 2.0);
}

TEST(MaxOverAxisTest, Examples) {
  Tape tape;
  auto r = max_over_axis(tape.constant(Tensor::from_rows({{1, 5}, {4, 2}})), 0);
  EXPECT_EQ(values(r.values), (std::vector<double>{4, 5}));
  EXPECT_EQ(r.argmax, (std::vector<std::size_t>{1, 0}));

  Tensor single = Tensor::from_rows({{7, -3, 2}});
  EXPECT_EQ(values(max_over_axis(tape.constant(single), 0).values), (std::vector<double>{7, -3, 2}));

  auto tie = max_over_axis(tape.constant(Tensor({2}, {3.0, 3.0})), 0);
  EXPECT_DOUBLE_EQ(tie.values.value().item(), 3.0);
  EXPECT_EQ(tie.argmax[0], 0u);
}

TEST(MaxOverAxisTest, GradientRoutesToArgmaxOnly) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Param p("x", random_tensor(rng, {5, 4, 3}));
    auto r = max_over_axis(tape.param(p), 1);
    tape.backward(sum(r.values));
    // Each output slot sends exactly one unit of gradient back, to its argmax.
    for (std::size_t a = 0; a < 5; ++a)
      for (std::size_t c = 0; c < 3; ++c) {
        double total = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
          const double g = p.grad[(a * 4 + j) * 3 + c];
          total += g;
          EXPECT_DOUBLE_EQ(g, j == r.argmax[a * 3 + c] ? 1.0 : 0.0);
        }
        EXPECT_DOUBLE_EQ(total, 1.0);
      }
  }
}

TEST(SoftmaxCrossEntropyTest, Examples) {
  Tape tape;
  const std::vector<std::size_t> zero{0};
  EXPECT_NEAR(softmax_cross_entropy(tape.constant(Tensor({1, 4}, 0.3)), zero).value().item(), std::log(4.0), 1e-12);
  EXPECT_NEAR(softmax_cross_entropy(tape.constant(Tensor::from_rows({{10, 0}})), zero).value().item(),
              std::log1p(std::exp(-10.0)), 1e-15);
  EXPECT_NEAR(softmax_cross_entropy(tape.constant(Tensor::from_rows({{0, 10}})), zero).value().item(), 10.0000454, 1e-7);
  const std::vector<std::size_t> bad{4};
  EXPECT_THROW(softmax_cross_entropy(tape.constant(Tensor({1, 4}, 0.0)), bad), std::out_of_range);
}

TEST(SoftmaxCrossEntropyTest, ShiftInvariant) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor logits = random_tensor(rng, {3, 5}, 3.0);
    Tensor shifted = logits;
    for (std::size_t r = 0; r < 3; ++r) {
      const double c = shift(rng);
      for (std::size_t k = 0; k < 5; ++k) shifted.at(r, k) += c;
    }
    const std::vector<std::size_t> labels{0, 2, 4};
    Tape tape;
    const double a = softmax_cross_entropy(tape.constant(logits), labels).value().item();
    const double b = softmax_cross_entropy(tape.constant(shifted), labels).value().item();
    EXPECT_NEAR(a, b, 1e-12 * std::max(1.0, std::abs(a)));
  }
}

TEST(SoftmaxTest, ClosedForm) {
  Tape tape;
  Var s = softmax(tape.constant(Tensor({2}, {std::log(2.0), 0.0})));
  EXPECT_NEAR(s.value()[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.value()[1], 1.0 / 3.0, 1e-15);
}

TEST(CosineSimilarityTest, Examples) {
  Tape tape;
  auto cos = [&](std::vector<double> a, std::vector<double> b) {
    return cosine_similarity(tape.constant(Tensor({a.size()}, a)), tape.constant(Tensor({b.size()}, b))).value().item();
  };
  EXPECT_DOUBLE_EQ(cos({1, 0}, {1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(cos({1, 0}, {0, 1}), 0.0);
  EXPECT_NEAR(cos({1, 2}, {2, 1}), 0.8, 1e-15);
  EXPECT_TRUE(std::isfinite(cos({0, 0}, {1, 1})));
}

TEST(CosineSimilarityTest, ScaleInvariant) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor a = random_tensor(rng, {6}), b = random_tensor(rng, {6});
    Tensor sa = a, sb = b;
    const double ka = scale(rng), kb = scale(rng);
    for (double& v : sa.data()) v *= ka;
    for (double& v : sb.data()) v *= kb;
    Tape tape;
    const double c1 = cosine_similarity(tape.constant(a), tape.constant(b)).value().item();
    const double c2 = cosine_similarity(tape.constant(sa), tape.constant(sb)).value().item();
    EXPECT_NEAR(c1, c2, 1e-12);
  }
}

TEST(Conv1dCircularTest, Examples) {
  Tape tape;
  Var x = tape.constant(Tensor({3, 1}, {1.0, 2.0, 3.0}));
  Var zero_b = tape.constant(Tensor({1}, 0.0));

  Var center = tape.constant(Tensor({1, 1, 3}, {0.0, 1.0, 0.0}));
  EXPECT_EQ(conv1d_circular(x, center, zero_b).value(), x.value());

  Var avg = tape.constant(Tensor({1, 1, 3}, 1.0 / 3.0));
  for (double v : conv1d_circular(x, avg, zero_b).value().data()) EXPECT_NEAR(v, 2.0, 1e-15);

  Var zeros = tape.constant(Tensor({1, 1, 3}, 0.0));
  EXPECT_EQ(conv1d_circular(x, zeros, zero_b).value(), Tensor({3, 1}, 0.0));

  Var two_views = tape.constant(Tensor({2, 1}, 1.0));
  EXPECT_THROW(conv1d_circular(two_views, avg, zero_b), DimensionError);
}

TEST(Conv1dCircularTest, ShiftEquivariant) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t N = 3 + trial % 5, C = 2 + trial % 3;
    Tensor x = random_tensor(rng, {N, C});
    Tensor w = random_tensor(rng, {C, C, 3});
    Tensor b = random_tensor(rng, {C});
    const std::size_t s = 1 + trial % (N - 1);
    Tensor shifted({N, C});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) shifted.at((n + s) % N, c) = x.at(n, c);
    Tape tape;
    Tensor y = conv1d_circular(tape.constant(x), tape.constant(w), tape.constant(b)).value();
    Tensor ys = conv1d_circular(tape.constant(shifted), tape.constant(w), tape.constant(b)).value();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) EXPECT_NEAR(ys.at((n + s) % N, c), y.at(n, c), 1e-12);
  }
}

TEST(GradCheckTest, QuadraticIsExact) {
  Param x("x", scalar_tensor(3.0));
  std::vector<Param*> params{&x};
  auto r = grad_check([&](Tape& t) { Var v = t.param(x); return mul(v, v); }, params);
  EXPECT_LT(r.max_rel_error, 1e-9);
  EXPECT_NEAR(r.analytic, 6.0, 1e-12);
  EXPECT_NEAR(r.numeric, 6.0, 1e-6);
}

TEST(GradCheckTest, SoftmaxCrossEntropyOnRandomLogits) {
  std::mt19937_64 rng(51);
  Param logits("logits", random_tensor(rng, {4, 3}));
  const std::vector<std::size_t> labels{0, 2, 1, 1};
  std::vector<Param*> params{&logits};
  auto r = grad_check([&](Tape& t) { return softmax_cross_entropy(t.param(logits), labels); }, params);
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.coordinates, 12u);
}

TEST(GradCheckTest, NonFiniteLossIsAnError) {
  Param x("x", scalar_tensor(1.0));
  std::vector<Param*> params{&x};
  auto inf_loss = [&](Tape& t) { return scale(t.param(x), std::numeric_limits<double>::infinity()); };
  EXPECT_THROW(grad_check(inf_loss, params), NumericError);
}

TEST(GradCheckTest, TamperedGradientIsDetected) {
  std::mt19937_64 rng(61);
  Param w("w", random_tensor(rng, {3, 2}));
  Param x("x", random_tensor(rng, {2, 3}));
  std::vector<Param*> params{&w, &x};
  auto loss = [&](Tape& t) { return sum(matmul(t.param(x), t.param(w))); };
  EXPECT_LT(grad_check(loss, params).max_rel_error, 1e-8);
  auto r = grad_check(loss, params, 1e-5, [](std::vector<Tensor>& g) { g[0][0] *= 1.5; });
  EXPECT_GT(r.max_rel_error, 0.1);
  EXPECT_EQ(r.worst_param, "w");
}
