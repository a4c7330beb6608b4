#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>

#include "dultra/autodiff/checkpoint.hpp"
#include "dultra/autodiff/optimizer.hpp"
#include "dultra/autodiff/record.hpp"
#include "fd_check.hpp"

namespace dultra {
namespace {

using ad::Op;
using ad::Record;
using ad::Shape;
using ad::Tensor;
using ad::Var;

TEST(Primitives, SigmoidAtZero) {
  Record r;
  EXPECT_EQ(ad::sigmoid(r.constant(Tensor::scalar(0.0))).item(), 0.5);
}

TEST(Primitives, SoftmaxOfEqualLogitsIsUniform) {
  Record r;
  Var y = ad::softmax(r.constant(Tensor::vector({0, 0, 0})));
  for (double v : y.value().data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Primitives, LogSoftmaxIsStableForLargeLogits) {
  Record r;
  Var y = ad::log_softmax(r.constant(Tensor::vector({1000.0, 0.0})));
  // Extended-precision reference of x - max - log(sum(exp(x - max))).
  const long double lse = std::log1p(std::exp(-1000.0L));
  EXPECT_NEAR(y.value()[0], static_cast<double>(-lse), 1e-300);
  EXPECT_NEAR(y.value()[1], static_cast<double>(-1000.0L - lse), 1e-12);
  EXPECT_TRUE(y.value().all_finite());
}

TEST(Primitives, SoftmaxRowsSumToOne) {
  Rng rng(7);
  Record r;
  Var y = ad::softmax(r.constant(testing::random_tensor({20, 9}, rng, 5.0)));
  for (std::size_t i = 0; i < 20; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 9; ++j) {
      EXPECT_GE(y.value().at(i, j), 0.0);
      total += y.value().at(i, j);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Primitives, ShapeMismatchNamesShapes) {
  Record r;
  Var a = r.constant(Tensor({2, 3}));
  Var b = r.constant(Tensor({3, 2}));
  try {
    ad::add(a, b);
    FAIL();
  } catch (const ad::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2, 3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[3, 2]"), std::string::npos);
  }
  EXPECT_THROW(ad::matmul(a, a), ad::ShapeError);
}

TEST(Primitives, DomainErrors) {
  Record r;
  EXPECT_THROW(ad::log(r.constant(Tensor::vector({1.0, 0.0}))), ad::DomainError);
  EXPECT_THROW(ad::log(r.constant(Tensor::vector({-1.0}))), ad::DomainError);
  EXPECT_THROW(ad::divide_scalar(r.constant(Tensor::scalar(1.0)), 0.0), ad::DomainError);
  EXPECT_THROW(ad::div(r.constant(Tensor::scalar(1.0)), r.constant(Tensor::scalar(0.0))),
               ad::DomainError);
}

TEST(Primitives, LeadingAxisBroadcast) {
  Record r;
  Var a = r.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var b = r.constant(Tensor::vector({10, 20, 30}));
  EXPECT_EQ((a + b).value(), Tensor({2, 3}, {11, 22, 33, 14, 25, 36}));
  EXPECT_EQ((a * r.constant(Tensor::scalar(2))).value(), Tensor({2, 3}, {2, 4, 6, 8, 10, 12}));
}

TEST(Backward, Identity) {
  Record r;
  Var x = r.input(Tensor::scalar(3.0));
  auto g = ad::backward(r, x);
  EXPECT_EQ(g.of(x).item(), 1.0);
}

TEST(Backward, SumOfSquares) {
  Record r;
  Var x = r.input(Tensor::vector({1, 2}));
  auto g = ad::backward(r, ad::sum(x * x));
  EXPECT_EQ(g.of(x), Tensor::vector({2, 4}));
}

TEST(Backward, RejectsNonScalarRoot) {
  Record r;
  Var x = r.input(Tensor::vector({1, 2}));
  EXPECT_THROW(ad::backward(r, x), ad::ShapeError);
}

TEST(Backward, FanOutAccumulates) {
  Record r;
  Var x = r.input(Tensor::scalar(3.0));
  Var y = x * x + x * 2.0 + x;
  EXPECT_EQ(ad::backward(r, y).of(x).item(), 2 * 3.0 + 3.0);
}

TEST(Backward, RepeatedEvaluationIsBitwiseIdentical) {
  Rng rng(3);
  Tensor w = testing::random_tensor({5, 4}, rng);
  Tensor x = testing::random_tensor({3, 5}, rng);
  auto run = [&] {
    Record r;
    Var wv = r.input(w);
    Var y = ad::log_softmax(ad::layer_norm(ad::matmul(r.constant(x), wv)));
    return ad::backward(r, ad::sum(ad::exp(y) * y)).of(wv);
  };
  EXPECT_EQ(run(), run());
}

TEST(StopGradient, RatioHasUnitValueAndLogGradient) {
  Record r;
  Var x = r.input(Tensor::scalar(2.0));
  Var ratio = x / ad::stop_gradient(x);
  EXPECT_EQ(ratio.item(), 1.0);
  EXPECT_EQ(ad::backward(r, ratio).of(x).item(), 0.5);
}

TEST(StopGradient, BlocksFlow) {
  Record r;
  Var x = r.input(Tensor::scalar(2.0));
  Var y = r.input(Tensor::scalar(5.0));
  auto g = ad::backward(r, ad::stop_gradient(x) * y);
  EXPECT_EQ(g.of(x).item(), 0.0);
  EXPECT_EQ(g.of(y).item(), 2.0);
}

TEST(StopGradient, RatioValueIsExactlyOne) {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const double v = std::exp(20.0 * (rng.uniform() - 0.5)) * (rng.uniform() < 0.5 ? -1 : 1);
    Record r;
    Var x = r.input(Tensor::scalar(v));
    Var ratio = x / ad::stop_gradient(x);
    ASSERT_EQ(ratio.item(), 1.0);
    EXPECT_NEAR(ad::backward(r, ratio).of(x).item(), 1.0 / v, 1e-15 * std::abs(1.0 / v));
  }
}

TEST(StopGradient, RatioGradientMatchesScoreFunction) {
  // A * p / sg(p) for a softmax over three parameters has gradient A * d log p.
  ad::ParameterSet params;
  params.add("theta", Tensor::vector({0.3, -0.7, 1.1}));
  const double advantage = 1.7;
  const std::size_t picked = 1;
  params.zero_grad();
  {
    Record r;
    Var p = ad::take(ad::softmax(r.parameter(params[0])), std::vector<std::size_t>{picked});
    Var loss = ad::sum(p / ad::stop_gradient(p)) * advantage;
    ad::accumulate_parameter_grads(r, ad::backward(r, loss));
  }
  ad::ParameterSet logform = params;
  auto log_p = [&](Record& r) {
    return ad::sum(ad::take(ad::log_softmax(r.parameter(logform[0])),
                            std::vector<std::size_t>{picked})) *
           advantage;
  };
  auto report = testing::finite_difference_check(logform, log_p, 3, 1);
  EXPECT_LT(report.max_rel_error, 1e-6);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(params[0].grad[i], logform[0].grad[i], 1e-14);
  }
}

// Builds a scalar function of one or two random operands exercising `op`.
struct PrimitiveCase {
  std::vector<Shape> shapes;
  std::function<Var(std::vector<Var>&)> apply;
  double positive = false;  // operands drawn from a positive range
};

PrimitiveCase case_for(Op op) {
  using V = std::vector<Var>;
  switch (op) {
    case Op::kMatMul: return {{{3, 4}, {4, 5}}, [](V& v) { return ad::matmul(v[0], v[1]); }};
    case Op::kTranspose: return {{{3, 4}}, [](V& v) { return ad::transpose(v[0]); }};
    case Op::kAdd: return {{{2, 3, 4}, {3, 4}}, [](V& v) { return v[0] + v[1]; }};
    case Op::kSub: return {{{4}, {3, 4}}, [](V& v) { return v[0] - v[1]; }};
    case Op::kMul: return {{{3, 4}, {4}}, [](V& v) { return v[0] * v[1]; }};
    case Op::kDiv: return {{{3, 4}, {4}}, [](V& v) { return v[0] / v[1]; }, true};
    case Op::kScale: return {{{3, 4}}, [](V& v) { return v[0] * -1.3; }};
    case Op::kExp: return {{{3, 4}}, [](V& v) { return ad::exp(v[0]); }};
    case Op::kLog: return {{{3, 4}}, [](V& v) { return ad::log(v[0]); }, true};
    case Op::kSigmoid: return {{{3, 4}}, [](V& v) { return ad::sigmoid(v[0]); }};
    case Op::kLogSigmoid: return {{{3, 4}}, [](V& v) { return ad::log_sigmoid(v[0]); }};
    case Op::kSoftmax: return {{{3, 5}}, [](V& v) { return ad::softmax(v[0]); }};
    case Op::kLogSoftmax: return {{{3, 5}}, [](V& v) { return ad::log_softmax(v[0]); }};
    case Op::kLayerNorm: return {{{3, 6}}, [](V& v) { return ad::layer_norm(v[0]); }};
    case Op::kGather:
      return {{{5, 3}}, [](V& v) {
                return ad::gather_rows(v[0], std::vector<std::size_t>{4, 0, 4, 2});
              }};
    case Op::kTake:
      return {{{3, 4}}, [](V& v) { return ad::take(v[0], std::vector<std::size_t>{11, 0, 5, 5}); }};
    case Op::kSum: return {{{3, 4}}, [](V& v) { return ad::sum(v[0]); }};
    case Op::kMean: return {{{3, 4}}, [](V& v) { return ad::mean(v[0]); }};
    case Op::kSumLast: return {{{2, 3, 4}}, [](V& v) { return ad::sum_last(v[0]); }};
    case Op::kSlice: return {{{3, 5, 2}}, [](V& v) { return ad::slice(v[0], 1, 1, 4); }};
    case Op::kConcat:
      return {{{3, 2}, {3, 4}}, [](V& v) { return ad::concat(v, 1); }};
    case Op::kMaximum: return {{{3, 4}, {4}}, [](V& v) { return ad::maximum(v[0], v[1]); }};
    case Op::kReshape: return {{{3, 4}}, [](V& v) { return ad::reshape(v[0], {2, 6}); }};
    default: return {};
  }
}

TEST(Primitives, EveryGradientRuleMatchesFiniteDifferences) {
  Rng rng(2024);
  std::size_t covered = 0;
  for (const ad::OpInfo& info : ad::op_table()) {
    if (info.rule == nullptr) continue;
    PrimitiveCase c = case_for(info.op);
    ASSERT_FALSE(c.shapes.empty()) << "no test case for " << info.name;
    std::size_t checked = 0;
    double worst = 0.0;
    for (int trial = 0; checked < 100; ++trial) {
      ad::ParameterSet params;
      for (std::size_t k = 0; k < c.shapes.size(); ++k) {
        Tensor t = testing::random_tensor(c.shapes[k], rng);
        if (c.positive)
          for (double& v : t.data()) v = 0.5 + std::abs(v);
        params.add("x" + std::to_string(k), std::move(t));
      }
      Tensor weights;
      bool have_weights = false;
      auto f = [&](Record& r) {
        std::vector<Var> vars;
        for (auto& p : params) vars.push_back(r.parameter(p));
        Var y = c.apply(vars);
        if (!have_weights) {
          weights = testing::random_tensor(y.shape(), rng);
          have_weights = true;
        }
        return ad::sum(y * r.constant(weights));
      };
      auto report = testing::finite_difference_check(params, f, 1000, 17 + trial);
      worst = std::max(worst, report.max_rel_error);
      checked += report.checked;
    }
    EXPECT_LT(worst, 1e-4) << info.name;
    ++covered;
  }
  EXPECT_EQ(covered + 2, static_cast<std::size_t>(Op::kCount));
}

TEST(Backward, TwoLayerPerceptronMatchesFiniteDifferences) {
  Rng rng(5);
  ad::ParameterSet params;
  params.add("w1", testing::random_tensor({6, 12}, rng, 0.5));
  params.add("b1", testing::random_tensor({12}, rng, 0.1));
  params.add("w2", testing::random_tensor({12, 3}, rng, 0.5));
  params.add("b2", testing::random_tensor({3}, rng, 0.1));
  ASSERT_GE(params.scalar_count(), 100u);
  Tensor x = testing::random_tensor({6, 6}, rng);
  auto f = [&](Record& r) {
    Var h = ad::sigmoid(ad::matmul(r.constant(x), r.parameter(params[0])) + r.parameter(params[1]));
    Var y = ad::matmul(h, r.parameter(params[2])) + r.parameter(params[3]);
    return ad::mean(ad::log_softmax(y) * ad::softmax(y));
  };
  auto report = testing::finite_difference_check(params, f, 1000, 9);
  EXPECT_EQ(report.checked, params.scalar_count());
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(Record, InferenceModeBindsParametersAsConstants) {
  ad::ParameterSet params;
  params.add("w", Tensor::scalar(2.0));
  Record r(ad::GradMode::kInference);
  Var y = r.parameter(params[0]) * r.parameter(params[0]);
  EXPECT_EQ(y.item(), 4.0);
  auto g = ad::backward(r, y);
  ad::accumulate_parameter_grads(r, g);
  EXPECT_EQ(params[0].grad.item(), 0.0);
}

TEST(AdamW, ZeroGradientZeroDecayLeavesParameters) {
  ad::ParameterSet params;
  params.add("w", Tensor::vector({1.5, -2.0}));
  ad::OptimizerState state(params, {.lr = 0.1, .weight_decay = 0.0});
  ad::adamw_step(params, state);
  EXPECT_EQ(params[0].value, Tensor::vector({1.5, -2.0}));
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamW, QuadraticStepDescends) {
  ad::ParameterSet params;
  params.add("w", Tensor::scalar(1.0));
  ad::OptimizerState state(params, {.lr = 0.1});
  params[0].grad[0] = 2.0 * params[0].value[0];
  ad::adamw_step(params, state);
  EXPECT_LT(params[0].value[0], 1.0);
}

TEST(AdamW, ConvexQuadraticConverges) {
  ad::ParameterSet params;
  params.add("w", Tensor::vector({3.0, -2.0}));
  ad::OptimizerState state(params, {.lr = 0.05, .weight_decay = 0.0});
  auto loss = [&] {
    const double a = params[0].value[0], b = params[0].value[1];
    return a * a + 4.0 * b * b;
  };
  const double initial = loss();
  for (int i = 0; i < 200; ++i) {
    params[0].grad[0] = 2.0 * params[0].value[0];
    params[0].grad[1] = 8.0 * params[0].value[1];
    ad::adamw_step(params, state);
  }
  EXPECT_LT(loss(), 1e-3 * initial);
}

TEST(AdamW, RejectsNonFiniteGradientWithName) {
  ad::ParameterSet params;
  params.add("layer0.weight", Tensor::scalar(1.0));
  params[0].grad[0] = std::nan("");
  ad::OptimizerState state(params, {});
  try {
    ad::adamw_step(params, state);
    FAIL();
  } catch (const ad::DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("layer0.weight"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTrip) {
  Rng rng(1);
  ad::ParameterSet params;
  params.add("a", testing::random_tensor({2, 3}, rng));
  params.add("b", testing::random_tensor({4}, rng));
  ad::OptimizerState state(params, {.lr = 0.01});
  params[0].grad.fill(0.3);
  params[1].grad.fill(-0.1);
  ad::adamw_step(params, state);
  const auto dir = std::filesystem::temp_directory_path() / "dultra_ckpt_test";
  ad::save_parameters(dir / "p", params, {{"note", "x"}});
  ad::save_optimizer(dir / "opt", params, state);

  ad::ParameterSet copy;
  copy.add("a", Tensor({2, 3}));
  copy.add("b", Tensor({4}));
  nlohmann::json meta;
  ad::load_parameters(dir / "p", copy, &meta);
  EXPECT_TRUE(copy.same_values(params));
  EXPECT_EQ(meta["note"], "x");
  EXPECT_EQ(ad::parameter_digest(copy), ad::parameter_digest(params));
  ad::OptimizerState restored(copy, {});
  ad::load_optimizer(dir / "opt", copy, restored);
  EXPECT_EQ(restored.step, 1u);
  EXPECT_EQ(restored.m[0], state.m[0]);
  EXPECT_EQ(restored.v[1], state.v[1]);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace dultra
