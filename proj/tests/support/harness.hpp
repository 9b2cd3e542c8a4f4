#pragma once

// Heavier checks shared by the unit suites and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <vector>

#include "drscreen/model/densenet.hpp"
#include "drscreen/trainer.hpp"
#include "fixtures.hpp"

namespace drscreen::testing {

struct GradCheckResult {
  std::size_t sampled = 0;
  double max_rel_error = 0.0;
  std::string worst_tensor;
};

/// Analytic train-mode gradients of the loss vs central differences, in
/// double, on the tiny config. Every trainable tensor gets at least one
/// sample; the rest are uniform over all trainable scalars.
inline GradCheckResult gradient_check(std::size_t samples, std::uint64_t seed, double h = 1e-5) {
  const auto cfg = model::ModelConfig::tiny();
  const model::DenseNet<double> net(cfg);
  auto params = net.build(seed);

  // Non-trivial norm affine parameters so their gradients are exercised.
  Rng perturb(seed + 1);
  for (std::size_t t = 0; t < params.tensor_count(); ++t) {
    const auto role = params.spec(t).role;
    if (role != model::ParamRole::kNormScale && role != model::ParamRole::kNormShift) continue;
    for (auto& v : params.tensor(t)) v += perturb.uniform(-0.2, 0.2);
  }

  constexpr int kBatch = 4;
  std::vector<ImageTensor> images;
  std::vector<double> targets(kBatch * Grade::kCount, 0.0);
  for (int i = 0; i < kBatch; ++i) {
    const Grade g(i % Grade::kCount);
    images.push_back(synthetic_input(cfg.input_side, g, seed * 31 + i));
    targets[i * Grade::kCount + g.index()] = 1.0;
  }
  const auto batch = model::make_batch<double>(images);
  const std::uint64_t dropout_seed = seed + 7;

  const auto loss_at = [&](const model::Parameters<double>& p) {
    Rng rng(dropout_seed);
    const auto fwd = net.forward(p, batch, model::Mode::kTrain, &rng);
    return train::cross_entropy<double>(fwd.probabilities.data, targets, Grade::kCount);
  };

  Rng rng(dropout_seed);
  const auto fwd = net.forward(params, batch, model::Mode::kTrain, &rng);
  std::vector<double> dprob;
  train::cross_entropy<double>(fwd.probabilities.data, targets, Grade::kCount, &dprob);
  const auto grads = net.backward(params, *fwd.cache, dprob);

  std::vector<std::pair<std::size_t, std::size_t>> picks;
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t t = 0; t < params.tensor_count(); ++t) {
    if (!model::is_trainable(params.spec(t).role)) continue;
    for (std::size_t k = 0; k < params.tensor(t).size(); ++k) all.emplace_back(t, k);
  }
  Rng pick(seed + 3);
  for (std::size_t t = 0; t < params.tensor_count(); ++t) {
    if (!model::is_trainable(params.spec(t).role)) continue;
    picks.emplace_back(t, static_cast<std::size_t>(pick.below(params.tensor(t).size())));
  }
  while (picks.size() < samples) picks.push_back(all[static_cast<std::size_t>(pick.below(all.size()))]);

  GradCheckResult res;
  for (const auto& [t, k] : picks) {
    auto p = params;
    const double orig = p.tensor(t)[k];
    p.tensor(t)[k] = orig + h;
    const double up = loss_at(p);
    p.tensor(t)[k] = orig - h;
    const double down = loss_at(p);
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grads.tensors[t][k];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    const double rel = std::abs(numeric - analytic) / denom;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_tensor = params.spec(t).name;
    }
    ++res.sampled;
  }
  return res;
}

struct OverfitResult {
  double train_accuracy = 0.0;
  int epochs = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
};

/// Tiny config on 32 synthetic labelled images, no augmentation, lr 1e-3.
inline OverfitResult overfit_tiny(int epochs, std::uint64_t seed) {
  const auto cfg = model::ModelConfig::tiny();
  train::InMemorySource data;
  for (int i = 0; i < 32; ++i) {
    const Grade g(i % Grade::kCount);
    data.add(synthetic_input(cfg.input_side, g, 1000 + i), g);
  }
  train::TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.epochs = epochs;
  tc.num_runs = 1;
  const auto run = train::train_one_run(data, data, cfg, tc, AugmentConfig::disabled(), seed);
  return {run.accuracy, epochs, run.loss_history.front(), run.loss_history.back()};
}

}  // namespace drscreen::testing
