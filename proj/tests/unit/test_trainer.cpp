#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "drscreen/error.hpp"
#include "drscreen/trainer.hpp"
#include "fixtures.hpp"
#include "harness.hpp"

using namespace drscreen;
using namespace drscreen::train;
namespace fx = drscreen::testing;

namespace {

model::Parameters<double> single_scalar(double value) {
  model::Parameters<double> p({{"w", {1}, model::ParamRole::kConvKernel},
                               {"stat", {1}, model::ParamRole::kNormMean}});
  p.tensor(0)[0] = value;
  p.tensor(1)[0] = 0.25;
  return p;
}

InMemorySource tiny_set(int n, std::uint64_t seed) {
  InMemorySource s;
  for (int i = 0; i < n; ++i) {
    const Grade g(i % Grade::kCount);
    s.add(fx::synthetic_input(32, g, seed + i), g);
  }
  return s;
}

}  // namespace

TEST(Adam, FirstStepOracle) {
  auto p = single_scalar(1.0);
  model::Gradients<double> g{{{4.0}, {0.0}}};
  AdamState<double> st(p);
  TrainConfig cfg;
  adam_step(p, g, st, cfg);
  EXPECT_EQ(st.step, 1u);
  EXPECT_NEAR(p.tensor(0)[0], 1.0 - 5e-5 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(p.tensor(1)[0], 0.25);  // running statistics are not trained
}

TEST(Adam, SecondStepMatchesHandComputation) {
  auto p = single_scalar(0.0);
  AdamState<double> st(p);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  adam_step(p, model::Gradients<double>{{{1.0}, {0.0}}}, st, cfg);
  adam_step(p, model::Gradients<double>{{{-2.0}, {0.0}}}, st, cfg);
  double m = 0, v = 0, theta = 0;
  for (int t = 1; const double gr : {1.0, -2.0}) {
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    theta -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    ++t;
  }
  EXPECT_NEAR(p.tensor(0)[0], theta, 1e-12);
}

TEST(Adam, NonFiniteGradientLeavesParametersUntouched) {
  auto p = single_scalar(1.0);
  AdamState<double> st(p);
  const model::Gradients<double> g{{{std::numeric_limits<double>::quiet_NaN()}, {0.0}}};
  EXPECT_THROW(adam_step(p, g, st, TrainConfig{}), NumericError);
  EXPECT_EQ(p.tensor(0)[0], 1.0);
  const model::Gradients<double> wrong{{{1.0, 2.0}, {0.0}}};
  EXPECT_THROW(adam_step(p, wrong, st, TrainConfig{}), ShapeError);
}

TEST(CrossEntropy, ValueOfRenormalizedTarget) {
  const std::vector<double> p = {0.5, 0.25, 0.25, 0.0, 0.0};
  const auto t = one_hot(Grade(1));
  EXPECT_NEAR(cross_entropy<double>(p, t, 5), -std::log(0.25), 1e-15);
  const std::vector<double> zero = {0.0, 0.9, 0.0, 0.0, 0.0};
  EXPECT_NEAR(cross_entropy<double>(zero, one_hot(Grade(0)), 5), -std::log(1e-7), 1e-12);
  EXPECT_THROW(cross_entropy<double>(p, std::vector<double>(4, 0.0), 5), ShapeError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  std::vector<double> p(3 * 5), t(3 * 5, 0.0);
  for (auto& v : p) v = rng.uniform(0.05, 0.95);
  t[2] = t[5 + 0] = t[10 + 4] = 1.0;
  std::vector<double> grad;
  cross_entropy<double>(p, t, 5, &grad);
  ASSERT_EQ(grad.size(), p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto up = p, down = p;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double numeric = (cross_entropy<double>(up, t, 5) - cross_entropy<double>(down, t, 5)) / 2e-6;
    EXPECT_NEAR(grad[i], numeric, 1e-6) << i;
  }
}

TEST(Config, ValidationAndJson) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.learning_rate, 5e-5);
  EXPECT_EQ(c.batch_size, 32);
  EXPECT_EQ(c.epochs, 15);
  EXPECT_EQ(c.num_runs, 10);
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  nlohmann::json j = TrainConfig{};
  const auto back = j.get<TrainConfig>();
  EXPECT_EQ(back.learning_rate, 5e-5);
  j["epoch"] = 3;
  EXPECT_THROW(j.get<TrainConfig>(), ConfigError);
  nlohmann::json a = AugmentConfig{};
  EXPECT_NO_THROW(a.get<AugmentConfig>());
  a["rotate"] = true;
  EXPECT_THROW(a.get<AugmentConfig>(), ConfigError);
}

TEST(SelectBest, HighestAccuracyEarliestOnTies) {
  std::vector<RunResult> runs(4);
  const double acc[] = {0.5, 0.8, 0.8, 0.7};
  for (int i = 0; i < 4; ++i) {
    runs[i].run_index = i;
    runs[i].accuracy = acc[i];
  }
  EXPECT_EQ(select_best(runs).run_index, 1);
  EXPECT_THROW(select_best(std::span<const RunResult>{}), DataError);
}

TEST(Training, EmptySetsAndBadConfigAreRejected) {
  const auto data = tiny_set(4, 1);
  const InMemorySource empty;
  TrainConfig tc;
  tc.epochs = 1;
  const auto cfg = model::ModelConfig::tiny();
  EXPECT_THROW(train_one_run(empty, data, cfg, tc, AugmentConfig{}, 1), DataError);
  EXPECT_THROW(train_one_run(data, empty, cfg, tc, AugmentConfig{}, 1), DataError);
  tc.epochs = 0;
  EXPECT_THROW(train_one_run(data, data, cfg, tc, AugmentConfig{}, 1), ConfigError);
  auto six = cfg;
  six.num_classes = 6;
  tc.epochs = 1;
  EXPECT_THROW(train_one_run(data, data, six, tc, AugmentConfig{}, 1), ConfigError);
}

TEST(Training, SeededRunsAreBitIdentical) {
  const auto train_set = tiny_set(10, 100);
  const auto test_set = tiny_set(5, 200);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;  // exercises the partial last batch
  tc.learning_rate = 1e-3;
  std::vector<EpochRecord> log;
  const auto a = train_one_run(train_set, test_set, model::ModelConfig::tiny(), tc, AugmentConfig{}, 9, 0,
                               [&](const EpochRecord& r) { log.push_back(r); });
  const auto b = train_one_run(train_set, test_set, model::ModelConfig::tiny(), tc, AugmentConfig{}, 9);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.accuracy, b.accuracy);
  ASSERT_EQ(log.size(), 2u);
  EXPECT_EQ(log[1].epoch, 2);
  EXPECT_EQ(log[1].mean_loss, a.loss_history[1]);
  const auto line = nlohmann::json::parse(format_progress(log[0]));
  EXPECT_EQ(line["epoch"], 1);
  const auto c = train_one_run(train_set, test_set, model::ModelConfig::tiny(), tc, AugmentConfig{}, 10);
  EXPECT_NE(a.loss_history, c.loss_history);
}

TEST(Training, ProtocolSeedsRunsConsecutively) {
  const auto data = tiny_set(5, 300);
  TrainConfig tc;
  tc.epochs = 1;
  tc.num_runs = 2;
  tc.seed = 40;
  const auto runs = run_protocol(data, data, model::ModelConfig::tiny(), tc, AugmentConfig::disabled());
  ASSERT_EQ(runs.size(), 2u);
  EXPECT_EQ(runs[0].seed, 40u);
  EXPECT_EQ(runs[1].seed, 41u);
  EXPECT_EQ(runs[1].run_index, 1);
  for (const auto& r : runs) {
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
  }
}

TEST(Training, OverfitsASmallSet) {
  const auto r = fx::overfit_tiny(120, 5);
  EXPECT_LT(r.last_loss, r.first_loss);
  EXPECT_GE(r.train_accuracy, 0.9);
}
