#include "drscreen/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "drscreen/error.hpp"
#include "drscreen/json_util.hpp"
#include "drscreen/simd/kernels.hpp"

namespace drscreen {

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = nlohmann::json{{"p_zoom", c.p_zoom},   {"zoom_min", c.zoom_min}, {"zoom_max", c.zoom_max},
                     {"p_hflip", c.p_hflip}, {"p_vflip", c.p_vflip},   {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
  json_util::reject_unknown_keys(j, "augment", {"p_zoom", "zoom_min", "zoom_max", "p_hflip", "p_vflip", "seed"});
  json_util::read_if_present(j, "p_zoom", c.p_zoom);
  json_util::read_if_present(j, "zoom_min", c.zoom_min);
  json_util::read_if_present(j, "zoom_max", c.zoom_max);
  json_util::read_if_present(j, "p_hflip", c.p_hflip);
  json_util::read_if_present(j, "p_vflip", c.p_vflip);
  json_util::read_if_present(j, "seed", c.seed);
}

}  // namespace drscreen

namespace drscreen::train {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (num_runs < 1) throw ConfigError("num_runs must be at least 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                     {"epochs", c.epochs},               {"num_runs", c.num_runs},
                     {"adam_beta1", c.adam_beta1},       {"adam_beta2", c.adam_beta2},
                     {"adam_epsilon", c.adam_epsilon},   {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  json_util::reject_unknown_keys(j, "train",
                                 {"learning_rate", "batch_size", "epochs", "num_runs",
                                  "adam_beta1", "adam_beta2", "adam_epsilon", "seed"});
  json_util::read_if_present(j, "learning_rate", c.learning_rate);
  json_util::read_if_present(j, "batch_size", c.batch_size);
  json_util::read_if_present(j, "epochs", c.epochs);
  json_util::read_if_present(j, "num_runs", c.num_runs);
  json_util::read_if_present(j, "adam_beta1", c.adam_beta1);
  json_util::read_if_present(j, "adam_beta2", c.adam_beta2);
  json_util::read_if_present(j, "adam_epsilon", c.adam_epsilon);
  json_util::read_if_present(j, "seed", c.seed);
}

std::array<double, Grade::kCount> one_hot(Grade g) {
  std::array<double, Grade::kCount> v{};
  v[g.index()] = 1.0;
  return v;
}

template <class T>
double cross_entropy(std::span<const T> probabilities, std::span<const T> targets,
                     std::size_t classes, std::vector<T>* dprob) {
  constexpr double kClamp = 1e-7;
  if (classes == 0 || probabilities.size() != targets.size() || probabilities.size() % classes != 0 ||
      probabilities.empty()) {
    throw ShapeError("cross_entropy: probabilities and targets must both be M x classes");
  }
  const std::size_t rows = probabilities.size() / classes;
  if (dprob) dprob->assign(probabilities.size(), T(0));
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const T* p = probabilities.data() + i * classes;
    const T* y = targets.data() + i * classes;
    double sum = 0.0;
    for (std::size_t k = 0; k < classes; ++k) sum += static_cast<double>(p[k]);
    double active_targets = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      if (y[k] == T(0)) continue;
      const double q = static_cast<double>(p[k]) / sum;
      total -= static_cast<double>(y[k]) * std::log(std::max(q, kClamp));
      if (dprob && q > kClamp) {
        (*dprob)[i * classes + k] -= static_cast<T>(static_cast<double>(y[k]) / static_cast<double>(p[k]) / rows);
        active_targets += static_cast<double>(y[k]);
      }
    }
    if (dprob && active_targets != 0.0) {
      for (std::size_t k = 0; k < classes; ++k) {
        (*dprob)[i * classes + k] += static_cast<T>(active_targets / sum / rows);
      }
    }
  }
  return total / static_cast<double>(rows);
}

template double cross_entropy<float>(std::span<const float>, std::span<const float>, std::size_t,
                                     std::vector<float>*);
template double cross_entropy<double>(std::span<const double>, std::span<const double>,
                                      std::size_t, std::vector<double>*);

template <class T>
void adam_step(model::Parameters<T>& params, const model::Gradients<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg) {
  if (grads.tensors.size() != params.tensor_count() || state.m.size() != params.tensor_count()) {
    throw ShapeError("adam_step: gradients/state do not match the parameter set");
  }
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    if (!model::is_trainable(params.spec(i).role)) continue;
    if (grads.tensors[i].size() != params.tensor(i).size()) {
      throw ShapeError("adam_step: gradient shape mismatch for " + params.spec(i).name);
    }
    for (T g : grads.tensors[i]) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient in '" + params.spec(i).name + "' at step " +
                           std::to_string(state.step + 1));
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const simd::AdamCoefficients<T> coeff{
      static_cast<T>(cfg.learning_rate),
      static_cast<T>(cfg.adam_beta1),
      static_cast<T>(cfg.adam_beta2),
      static_cast<T>(cfg.adam_epsilon),
      static_cast<T>(1.0 - std::pow(cfg.adam_beta1, t)),
      static_cast<T>(1.0 - std::pow(cfg.adam_beta2, t)),
  };
  const auto& k = simd::active_kernels<T>();
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    if (!model::is_trainable(params.spec(i).role)) continue;
    auto theta = params.tensor(i);
    k.adam_update(theta.data(), state.m[i].data(), state.v[i].data(), grads.tensors[i].data(),
                  theta.size(), coeff);
  }
}

template void adam_step<float>(model::Parameters<float>&, const model::Gradients<float>&,
                               AdamState<float>&, const TrainConfig&);
template void adam_step<double>(model::Parameters<double>&, const model::Gradients<double>&,
                                AdamState<double>&, const TrainConfig&);

InMemorySource::InMemorySource(std::vector<ImageTensor> images, std::vector<Grade> labels)
    : images_(std::move(images)), labels_(std::move(labels)) {
  if (images_.size() != labels_.size()) throw DataError("image and label counts differ");
}

void InMemorySource::add(ImageTensor image, Grade label) {
  images_.push_back(std::move(image));
  labels_.push_back(label);
}

std::string format_progress(const EpochRecord& r) {
  return nlohmann::json{{"run", r.run}, {"epoch", r.epoch}, {"loss", r.mean_loss}, {"seconds", r.seconds}}
      .dump();
}

double overall_accuracy(const model::DenseNet<float>& net, const model::Parameters<float>& params,
                        const SampleSource& samples) {
  if (samples.size() == 0) throw DataError("cannot measure accuracy on an empty set");
  constexpr std::size_t kChunk = 16;
  std::size_t correct = 0;
  std::vector<ImageTensor> chunk;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    chunk.clear();
    const std::size_t end = std::min(samples.size(), start + kChunk);
    for (std::size_t i = start; i < end; ++i) chunk.push_back(samples.image(i));
    const auto preds = model::predict_batch(net, params, chunk);
    for (std::size_t i = start; i < end; ++i) correct += preds[i - start].grade == samples.label(i);
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

namespace {

// SplitMix64 finalizer: decorrelates the sub-stream seeds of one run.
std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

RunResult train_one_run(const SampleSource& train_set, const SampleSource& test_set,
                        const model::ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        const AugmentConfig& augment_cfg, std::uint64_t run_seed, int run_index,
                        const ProgressSink& progress) {
  train_cfg.validate();
  augment_cfg.validate();
  if (train_set.size() == 0) throw DataError("training set is empty");
  if (test_set.size() == 0) throw DataError("held-out set is empty");
  if (model_cfg.num_classes != Grade::kCount) throw ConfigError("the grading head must have 5 outputs");

  const model::DenseNet<float> net(model_cfg);
  RunResult result;
  result.run_index = run_index;
  result.seed = run_seed;
  result.params = net.build(run_seed);
  AdamState<float> adam(result.params);

  Rng shuffle_rng(mix_seed(run_seed ^ 0x5348554646ull));
  Rng augment_rng(mix_seed(run_seed ^ mix_seed(augment_cfg.seed)));
  Rng dropout_rng(mix_seed(run_seed ^ 0x44524F50ull));

  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  std::vector<ImageTensor> batch_images;
  std::vector<float> targets;
  std::vector<float> dprob;

  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(train_cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(train_cfg.batch_size));
      batch_images.clear();
      targets.assign((end - start) * Grade::kCount, 0.0f);
      for (std::size_t i = start; i < end; ++i) {
        batch_images.push_back(augment(train_set.image(order[i]), augment_cfg, augment_rng));
        targets[(i - start) * Grade::kCount + train_set.label(order[i]).index()] = 1.0f;
      }
      const auto batch = model::make_batch<float>(batch_images);
      const auto fwd = net.forward(result.params, batch, model::Mode::kTrain, &dropout_rng);
      const double loss = cross_entropy<float>(fwd.probabilities.data, targets, Grade::kCount, &dprob);
      if (!std::isfinite(loss)) {
        throw NumericError("loss became non-finite in run " + std::to_string(run_index) +
                           ", epoch " + std::to_string(epoch));
      }
      const auto grads = net.backward(result.params, *fwd.cache, dprob);
      adam_step(result.params, grads, adam, train_cfg);
      net.update_running_statistics(result.params, *fwd.cache);
      loss_sum += loss * static_cast<double>(end - start);
    }
    const double mean_loss = loss_sum / static_cast<double>(n);
    result.loss_history.push_back(mean_loss);
    if (progress) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      progress({run_index, epoch, mean_loss, secs});
    }
  }
  result.accuracy = overall_accuracy(net, result.params, test_set);
  return result;
}

const RunResult& select_best(std::span<const RunResult> results) {
  if (results.empty()) throw DataError("select_best needs at least one run");
  std::size_t best = 0;
  for (std::size_t i = 1; i < results.size(); ++i) {
    if (results[i].accuracy > results[best].accuracy) best = i;
  }
  return results[best];
}

std::vector<RunResult> run_protocol(const SampleSource& train_set, const SampleSource& test_set,
                                    const model::ModelConfig& model_cfg,
                                    const TrainConfig& train_cfg, const AugmentConfig& augment_cfg,
                                    const ProgressSink& progress) {
  train_cfg.validate();
  std::vector<RunResult> results;
  results.reserve(static_cast<std::size_t>(train_cfg.num_runs));
  for (int r = 0; r < train_cfg.num_runs; ++r) {
    results.push_back(train_one_run(train_set, test_set, model_cfg, train_cfg, augment_cfg,
                                    train_cfg.seed + static_cast<std::uint64_t>(r), r, progress));
  }
  return results;
}

}  // namespace drscreen::train
