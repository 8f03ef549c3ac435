#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "dntm/autodiff.hpp"
#include "gradcheck.hpp"

using namespace dntm;
using dntm::testing::gradcheck;

namespace {

// Random values bounded away from zero by `gap`, useful for kinked primitives.
Array<double> random_array(Rng& rng, Shape shape, double lo, double hi, double gap = 0.0) {
  Array<double> out(std::move(shape));
  for (auto& v : out.storage()) {
    do v = rng.uniform(lo, hi);
    while (std::abs(v) < gap);
  }
  return out;
}

// loss = sum(op(a, b) * c) with a random constant c, so every output element
// carries a distinct upstream gradient.
using BinaryPrimitive = std::function<Var<double>(Var<double>, Var<double>)>;

double check_primitive(std::uint64_t seed, Shape sa, Shape sb, double lo, double hi, double gap,
                       const BinaryPrimitive& op) {
  Rng rng(seed);
  ParameterStore<double> params;
  params.add("a", random_array(rng, sa, lo, hi, gap));
  params.add("b", random_array(rng, sb, lo, hi, gap));
  Graph<double> probe;
  const Shape out_shape = op(probe.parameter(params, "a"), probe.parameter(params, "b")).shape();
  const Array<double> weights = random_array(rng, out_shape, -1.0, 1.0);
  auto build = [&](Graph<double>& g, const ParameterStore<double>& p) {
    auto y = op(g.parameter(p, "a"), g.parameter(p, "b"));
    return sum(y * g.constant(weights));
  };
  return gradcheck(build, params).max_error;
}

}  // namespace

TEST(Autodiff, SoftmaxOfZerosIsUniform) {
  Graph<double> g;
  auto y = softmax(g.constant(Array<double>::row({0.0, 0.0, 0.0})));
  for (auto v : y.value().data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Autodiff, ReluOfNegativeIsZero) {
  Graph<double> g;
  EXPECT_EQ(relu(g.constant(Array<double>::scalar(-2.0))).item(), 0.0);
}

TEST(Autodiff, SoftplusOfZeroIsLogTwo) {
  Graph<double> g;
  EXPECT_NEAR(softplus(g.constant(Array<double>::scalar(0.0))).item(), std::numbers::ln2, 1e-15);
  EXPECT_NEAR(softplus(g.constant(Array<double>::scalar(0.0))).item(), 0.693147, 1e-6);
}

TEST(Autodiff, ShapeMismatchNamesOperationAndShapes) {
  Graph<double> g;
  auto a = g.constant(Array<double>({2, 3}));
  auto b = g.constant(Array<double>({4, 5}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.op(), "matmul");
    EXPECT_EQ(e.lhs(), (Shape{2, 3}));
    EXPECT_EQ(e.rhs(), (Shape{4, 5}));
    EXPECT_NE(std::string(e.what()).find("[2, 3]"), std::string::npos);
  }
  EXPECT_THROW(add(a, b), ShapeError);
}

TEST(Autodiff, LinearMapGradientIsInputBroadcast) {
  ParameterStore<double> params;
  params.add("W", Array<double>::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  Graph<double> g;
  const auto x = Array<double>::row({0.5, -1.0, 2.0});
  auto loss = sum(matmul(g.constant(x), g.parameter(params, "W")));
  auto grads = g.backward(loss);
  const auto& gw = grads.at("W");
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(gw.at(i, j), x[i]);
  }
}

TEST(Autodiff, StopGradientBlocksUpstream) {
  ParameterStore<double> params;
  params.add("w", Array<double>::row({1.0, -2.0}));
  params.add("unused", Array<double>::row({3.0}));
  Graph<double> g;
  auto w = g.parameter(params, "w");
  g.parameter(params, "unused");
  auto loss = sum(square(g.stop_gradient(tanh(w))));
  auto grads = g.backward(loss);
  for (auto v : grads.at("w").data()) EXPECT_EQ(v, 0.0);
  for (auto v : grads.at("unused").data()) EXPECT_EQ(v, 0.0);
}

TEST(Autodiff, NonScalarLossIsRejected) {
  ParameterStore<double> params;
  params.add("w", Array<double>::row({1.0, 2.0}));
  Graph<double> g;
  auto w = g.parameter(params, "w");
  EXPECT_THROW(g.backward(w * w), ShapeError);
}

TEST(Autodiff, SmallNetworkMatchesFiniteDifferences) {
  // Five scalar parameters: y = softplus(tanh(x*w1 + b1) * w2 + sigmoid(w3) * b2).
  Rng rng(7);
  ParameterStore<double> params;
  for (const char* name : {"w1", "b1", "w2", "w3", "b2"}) params.add(name, random_array(rng, {1, 1}, -1.5, 1.5));
  const auto x = random_array(rng, {4, 1}, -2, 2);
  auto build = [&](Graph<double>& g, const ParameterStore<double>& p) {
    auto h = tanh(g.constant(x) * g.parameter(p, "w1") + g.parameter(p, "b1"));
    auto y = softplus(h * g.parameter(p, "w2") + sigmoid(g.parameter(p, "w3")) * g.parameter(p, "b2"));
    return mean(log(y + 1.0));
  };
  auto report = gradcheck(build, params);
  EXPECT_EQ(report.checked, 5u);
  EXPECT_LT(report.max_error, 1e-4) << report.worst;
}

struct PrimitiveCase {
  const char* name;
  Shape a, b;
  double lo, hi, gap;
  BinaryPrimitive op;
};

class PrimitiveGradient : public ::testing::TestWithParam<PrimitiveCase> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferencesOverSeeds) {
  const auto& c = GetParam();
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    worst = std::max(worst, check_primitive(seed, c.a, c.b, c.lo, c.hi, c.gap, c.op));
  }
  EXPECT_LT(worst, 1e-4) << c.name;
}

using V = Var<double>;

INSTANTIATE_TEST_SUITE_P(
    AllPrimitives, PrimitiveGradient,
    ::testing::Values(
        PrimitiveCase{"matmul", {3, 4}, {4, 2}, -1, 1, 0, [](V a, V b) { return matmul(a, b); }},
        PrimitiveCase{"add_row_broadcast", {3, 4}, {1, 4}, -1, 1, 0, [](V a, V b) { return a + b; }},
        PrimitiveCase{"sub_col_broadcast", {3, 4}, {3, 1}, -1, 1, 0, [](V a, V b) { return a - b; }},
        PrimitiveCase{"mul", {3, 4}, {3, 4}, -1, 1, 0, [](V a, V b) { return a * b; }},
        PrimitiveCase{"div", {3, 4}, {1, 1}, 0.5, 2, 0, [](V a, V b) { return a / b; }},
        PrimitiveCase{"sigmoid", {3, 4}, {1, 1}, -3, 3, 0, [](V a, V) { return sigmoid(a); }},
        PrimitiveCase{"tanh", {3, 4}, {1, 1}, -3, 3, 0, [](V a, V) { return tanh(a); }},
        PrimitiveCase{"relu", {3, 4}, {1, 1}, -3, 3, 1e-3, [](V a, V) { return relu(a); }},
        PrimitiveCase{"softplus", {3, 4}, {1, 1}, -5, 5, 0, [](V a, V) { return softplus(a); }},
        PrimitiveCase{"exp", {3, 4}, {1, 1}, -2, 2, 0, [](V a, V) { return exp(a); }},
        PrimitiveCase{"log", {3, 4}, {1, 1}, 0.2, 3, 0, [](V a, V) { return log(a); }},
        PrimitiveCase{"sqrt", {3, 4}, {1, 1}, 0.2, 3, 0, [](V a, V) { return sqrt(a); }},
        PrimitiveCase{"softmax", {3, 5}, {1, 1}, -3, 3, 0, [](V a, V) { return softmax(a); }},
        PrimitiveCase{"log_softmax", {3, 5}, {1, 1}, -3, 3, 0, [](V a, V) { return log_softmax(a); }},
        PrimitiveCase{"concat_cols", {3, 2}, {3, 4}, -1, 1, 0, [](V a, V b) { return concat_cols<double>({a, b, a}); }},
        PrimitiveCase{"concat_rows", {2, 3}, {4, 3}, -1, 1, 0, [](V a, V b) { return concat_rows<double>({b, a}); }},
        PrimitiveCase{"slice_cols", {3, 5}, {1, 1}, -1, 1, 0, [](V a, V) { return slice_cols(a, 1, 3); }},
        PrimitiveCase{"slice_rows", {4, 3}, {1, 1}, -1, 1, 0, [](V a, V) { return slice_rows(a, 1, 2); }},
        PrimitiveCase{"sum", {3, 4}, {1, 1}, -1, 1, 0, [](V a, V) { return sum(a * a); }},
        PrimitiveCase{"mean", {3, 4}, {1, 1}, -1, 1, 0, [](V a, V) { return mean(a * a); }},
        PrimitiveCase{"row_sum", {3, 4}, {1, 1}, -1, 1, 0, [](V a, V) { return row_sum(a); }},
        PrimitiveCase{"l2_norm", {3, 4}, {1, 1}, -1, 1, 0.05, [](V a, V) { return l2_norm(a); }},
        PrimitiveCase{"cosine_similarity", {3, 4}, {3, 4}, -1, 1, 0.05,
                      [](V a, V b) { return cosine_similarity(a, b, 1e-7); }},
        PrimitiveCase{"pick", {3, 4}, {1, 1}, -1, 1, 0,
                      [](V a, V) { return pick(a, std::vector<std::size_t>{2, 0, 3}); }},
        PrimitiveCase{"gather_rows", {5, 3}, {1, 1}, -1, 1, 0,
                      [](V a, V) { return gather_rows(a, std::vector<std::size_t>{4, 1, 1}); }},
        PrimitiveCase{"huber", {3, 4}, {1, 1}, -3, 3, 0,
                      [](V a, V) { return huber(a, 0.75); }},
        PrimitiveCase{"bce_with_logits", {3, 4}, {1, 1}, -4, 4, 0,
                      [](V a, V) {
                        Array<double> t({3, 4});
                        for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i % 2);
                        return bce_with_logits(a, t);
                      }}),
    [](const ::testing::TestParamInfo<PrimitiveCase>& info) { return std::string(info.param.name); });

TEST(Autodiff, HuberRejectsNonPositiveDelta) {
  Graph<double> g;
  auto z = g.constant(Array<double>::scalar(1.0));
  EXPECT_THROW(huber(z, 0.0), ConfigError);
}

TEST(Autodiff, BackwardIsBitwiseDeterministic) {
  Rng rng(3);
  ParameterStore<double> params;
  params.add("W", random_array(rng, {6, 5}, -1, 1));
  params.add("b", random_array(rng, {1, 5}, -1, 1));
  const auto x = random_array(rng, {4, 6}, -1, 1);
  auto run = [&] {
    Graph<double> g;
    auto y = softmax(tanh(matmul(g.constant(x), g.parameter(params, "W")) + g.parameter(params, "b")));
    return g.backward(sum(log(y)));
  };
  EXPECT_EQ(run(), run());
}

TEST(Autodiff, SoftmaxRowsSumToOneAndArePositive) {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    Graph<double> g;
    auto y = softmax(g.constant(random_array(rng, {2, 7}, -50, 50)));
    for (std::size_t r = 0; r < 2; ++r) {
      double s = 0;
      for (auto v : y.value().row_span(r)) {
        EXPECT_GT(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Autodiff, LargeLogitsStayFinite) {
  Graph<double> g;
  auto y = softmax(g.constant(Array<double>::row({1000.0, 999.0, -1000.0})));
  EXPECT_TRUE(y.value().all_finite());
  auto l = log(g.constant(Array<double>::row({0.0})));
  EXPECT_TRUE(l.value().all_finite());
}
