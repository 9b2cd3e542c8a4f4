#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "drscreen/grading.hpp"
#include "drscreen/imaging.hpp"
#include "drscreen/model/densenet.hpp"

namespace drscreen {

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

}  // namespace drscreen

namespace drscreen::train {

struct TrainConfig {
  double learning_rate = 0.00005;
  int batch_size = 32;
  int epochs = 15;
  int num_runs = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

template <class T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(const model::Parameters<T>& params) {
    for (std::size_t i = 0; i < params.tensor_count(); ++i) {
      const std::size_t n = model::is_trainable(params.spec(i).role) ? params.tensor(i).size() : 0;
      m.emplace_back(n, T(0));
      v.emplace_back(n, T(0));
    }
  }
};

std::array<double, Grade::kCount> one_hot(Grade g);

/// Mean over the batch of -log(max(p[t] / sum(p), 1e-7)) where t is the
/// target class; rows of `probabilities` are independent sigmoid outputs.
/// With `dprob` non-null it receives dLoss/dprobabilities. Throws ShapeError.
template <class T>
double cross_entropy(std::span<const T> probabilities, std::span<const T> targets,
                     std::size_t classes, std::vector<T>* dprob = nullptr);

/// One Adam update on every trainable tensor. Increments the step counter
/// first. Throws NumericError on a non-finite gradient (parameters untouched).
template <class T>
void adam_step(model::Parameters<T>& params, const model::Gradients<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg);

/// Labelled images, already preprocessed to the network input size.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual ImageTensor image(std::size_t index) const = 0;
  virtual Grade label(std::size_t index) const = 0;
};

class InMemorySource final : public SampleSource {
 public:
  InMemorySource() = default;
  InMemorySource(std::vector<ImageTensor> images, std::vector<Grade> labels);

  void add(ImageTensor image, Grade label);
  std::size_t size() const override { return images_.size(); }
  ImageTensor image(std::size_t index) const override { return images_.at(index); }
  Grade label(std::size_t index) const override { return labels_.at(index); }

 private:
  std::vector<ImageTensor> images_;
  std::vector<Grade> labels_;
};

struct EpochRecord {
  int run = 0;
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double seconds = 0.0;
};

/// One JSON object per line: {"run":..,"epoch":..,"loss":..,"seconds":..}.
std::string format_progress(const EpochRecord& record);

using ProgressSink = std::function<void(const EpochRecord&)>;

struct RunResult {
  int run_index = 0;
  std::uint64_t seed = 0;
  model::Parameters<float> params;
  std::vector<double> loss_history;  // one mean loss per epoch
  double accuracy = 0.0;             // held-out overall accuracy in [0, 1]
};

/// Fraction of samples whose eval-mode predicted grade equals the label.
double overall_accuracy(const model::DenseNet<float>& net, const model::Parameters<float>& params,
                        const SampleSource& samples);

/// Trains one model from scratch: seeded shuffle each epoch, augmentation on
/// training batches only, epochs * ceil(N / batch_size) Adam steps (the last
/// partial batch is kept), then held-out accuracy in eval mode.
/// Throws DataError for an empty set, ConfigError for a bad config,
/// NumericError if a gradient goes non-finite.
RunResult train_one_run(const SampleSource& train_set, const SampleSource& test_set,
                        const model::ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        const AugmentConfig& augment_cfg, std::uint64_t run_seed,
                        int run_index = 0, const ProgressSink& progress = {});

/// Highest held-out accuracy; earliest run wins ties. Throws DataError when
/// empty.
const RunResult& select_best(std::span<const RunResult> results);

/// num_runs independent runs, run r seeded with seed + r.
std::vector<RunResult> run_protocol(const SampleSource& train_set, const SampleSource& test_set,
                                    const model::ModelConfig& model_cfg,
                                    const TrainConfig& train_cfg, const AugmentConfig& augment_cfg,
                                    const ProgressSink& progress = {});

}  // namespace drscreen::train
