#include <gtest/gtest.h>

#include <cmath>

#include "lcnn/loss.hpp"
#include "lcnn/metrics.hpp"
#include "lcnn/optim.hpp"
#include "oracles.hpp"

using namespace lcnn;

TEST(Bce, ClosedForms) {
  EXPECT_NEAR(bce(0, 0.5), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce(1, 0.1), -std::log(0.1), 1e-12);
  EXPECT_NEAR(bce(0, 0.1), -std::log(0.9), 1e-12);
  EXPECT_NEAR(bce(1, 1.0), -std::log(1 - 1e-7), 1e-15);
  EXPECT_NEAR(bce(0, 1.0), -std::log(1e-7), 1e-9);
  EXPECT_THROW(bce(0.5, 0.5), std::invalid_argument);
}

TEST(Bce, SigmoidIsStableAtExtremes) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_TRUE(std::isfinite(sigmoid(-1000.0)));
  EXPECT_NEAR(sigmoid(-1000.0), 0.0, 1e-300);
  EXPECT_EQ(sigmoid(1000.0), 1.0);
  EXPECT_NEAR(sigmoid(2.0) + sigmoid(-2.0), 1.0, 1e-15);
}

TEST(Bce, BatchLossIsMeanAndGradientMatchesFiniteDifferences) {
  Rng rng(200);
  const auto logits = tensor_random<double>(Shape{6, 1}, Uniform{-3, 3}, rng);
  Tensor<double> labels(Shape{6, 1}, std::vector<double>{0, 1, 1, 0, 1, 0});
  const auto out = bce_loss(labels, logits);
  double mean = 0;
  for (std::size_t i = 0; i < 6; ++i) mean += bce(labels[i], 1 / (1 + std::exp(-logits[i])));
  EXPECT_NEAR(out.value, mean / 6, 1e-12);
  auto z = logits;
  const auto numeric = oracle::numeric_gradient([&] { return bce_loss(labels, z).value; }, z);
  EXPECT_LT(oracle::relative_error(out.grad_wrt_logit.values(), numeric), 1e-8);
}

TEST(Adam, MatchesTextbookUpdate) {
  Rng rng(201);
  AdamConfig cfg{.eta = 0.01};
  auto p = tensor_random<double>(Shape{5}, Uniform{-1, 1}, rng);
  auto ref = p.storage();
  std::vector<double> m(5), v(5);
  AdamState<double> st(p.shape());
  for (int t = 1; t <= 20; ++t) {
    const auto g = tensor_random<double>(Shape{5}, Uniform{-1, 1}, rng);
    adam_step(p, g, st, cfg);
    for (std::size_t i = 0; i < 5; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  EXPECT_EQ(st.t, 20u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(p[i], ref[i], 1e-12);
    EXPECT_GE(st.v[i], 0.0);
  }
}

TEST(Adam, FirstStepHasMagnitudeEta) {
  Tensor<double> p(Shape{3}, std::vector<double>{0, 0, 0});
  const Tensor<double> g(Shape{3}, std::vector<double>{5, -0.01, 100});
  AdamState<double> st(p.shape());
  adam_step(p, g, st, AdamConfig{.eta = 0.005});
  EXPECT_NEAR(p[0], -0.005, 1e-9);
  EXPECT_NEAR(p[1], 0.005, 1e-5);
  EXPECT_NEAR(p[2], -0.005, 1e-9);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor<double> p(Shape{2}, std::vector<double>{1.5, -2});
  AdamState<double> st(p.shape());
  adam_step(p, Tensor<double>(Shape{2}), st, AdamConfig{});
  EXPECT_EQ(p.to_vector(), (std::vector<double>{1.5, -2}));
  EXPECT_THROW(adam_step(p, Tensor<double>(Shape{3}), st, AdamConfig{}), ShapeError);
}

TEST(Optimizer, AdamAndSgdMinimizeQuadratic) {
  for (auto kind : {OptimizerKind::adam, OptimizerKind::sgd}) {
    Tensor<double> w(Shape{2}, std::vector<double>{3, -4}), g(Shape{2});
    Optimizer<double> opt(kind, 0.05, {ParamRef<double>{"w", &w, &g}});
    for (int i = 0; i < 2000; ++i) {
      for (std::size_t k = 0; k < 2; ++k) g[k] = 2 * (w[k] - 1.0);
      opt.step();
    }
    EXPECT_NEAR(w[0], 1.0, 1e-2);
    EXPECT_NEAR(w[1], 1.0, 1e-2);
  }
  Tensor<double> w(Shape{1}), g(Shape{1});
  EXPECT_THROW(Optimizer<double>(OptimizerKind::adam, 0.0, {ParamRef<double>{"w", &w, &g}}), std::invalid_argument);
}

TEST(Metrics, MatchBruteForceOnRandomMatrices) {
  Rng rng(202);
  for (int trial = 0; trial < 300; ++trial) {
    ConfusionMatrix cm{rng.below(20), rng.below(20), rng.below(20), rng.below(20)};
    const auto m = compute_metrics(cm);
    const auto ref = oracle::brute_metrics(cm.tp, cm.tn, cm.fp, cm.fn);
    auto same = [](std::optional<double> got, double want) {
      if (std::isnan(want)) return !got.has_value();
      return got.has_value() && std::abs(*got - want) < 1e-12;
    };
    EXPECT_TRUE(same(m.accuracy, ref.accuracy));
    EXPECT_TRUE(same(m.specificity, ref.specificity));
    EXPECT_TRUE(same(m.recall, ref.recall));
    EXPECT_TRUE(same(m.precision, ref.precision));
    EXPECT_TRUE(same(m.f1, ref.f1));
  }
}

TEST(Metrics, WorkedExample) {
  // 100 tumors (95 caught), 100 normals (90 rejected)
  const auto m = compute_metrics(ConfusionMatrix{95, 90, 10, 5});
  EXPECT_DOUBLE_EQ(*m.accuracy, 0.925);
  EXPECT_DOUBLE_EQ(*m.recall, 0.95);
  EXPECT_DOUBLE_EQ(*m.specificity, 0.90);
  EXPECT_NEAR(*m.f1, 0.926829, 1e-6);
}

TEST(Metrics, UndefinedWhenDenominatorIsZero) {
  const auto m = compute_metrics(ConfusionMatrix{0, 5, 0, 0});
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.specificity, 1.0);
  EXPECT_FALSE(m.recall);
  EXPECT_FALSE(m.precision);
  EXPECT_FALSE(m.f1);
  EXPECT_FALSE(compute_metrics(ConfusionMatrix{}).accuracy);
}

TEST(Metrics, ShardedCountsMergeByAddition) {
  ConfusionMatrix a, b, all;
  Rng rng(203);
  for (int i = 0; i < 100; ++i) {
    const int truth = static_cast<int>(rng.below(2));
    const bool pred = rng.bernoulli(0.5);
    (i % 2 ? a : b).add(truth, pred);
    all.add(truth, pred);
  }
  a += b;
  EXPECT_EQ(a, all);
  EXPECT_EQ(all.total(), 100u);
}
