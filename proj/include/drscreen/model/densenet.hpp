#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "drscreen/grading.hpp"
#include "drscreen/imaging.hpp"
#include "drscreen/model/config.hpp"
#include "drscreen/model/parameters.hpp"
#include "drscreen/random.hpp"

namespace drscreen::model {

/// Dense NHWC batch: n x height x width x channels.
template <class T>
struct FeatureMap {
  int n = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(int n_, int h, int w, int c)
      : n(n_), height(h), width(w), channels(c),
        data(static_cast<std::size_t>(n_) * h * w * c, T(0)) {}

  std::size_t pixels() const noexcept { return static_cast<std::size_t>(height) * width; }
  std::array<int, 4> dims() const noexcept { return {n, height, width, channels}; }
};

/// Stacks preprocessed images (all input_side x input_side) into a batch.
template <class T>
FeatureMap<T> make_batch(std::span<const ImageTensor> images);

enum class Mode { kTrain, kEval };

/// One labelled stage of the forward pass and the shape it produced.
struct TraceEntry {
  std::string stage;
  std::vector<int> dims;
};
using ShapeTrace = std::vector<TraceEntry>;

template <class T>
struct Gradients {
  /// One buffer per parameter tensor, spec order; running statistics stay zero.
  std::vector<std::vector<T>> tensors;
};

template <class T>
struct TrainCache;

/// Result of a forward pass. `cache` is populated only in train mode and is
/// what backward() consumes.
template <class T>
struct ForwardResult {
  FeatureMap<T> probabilities;  // n x 1 x 1 x classes, independent sigmoids
  ShapeTrace trace;
  std::shared_ptr<const TrainCache<T>> cache;
};

/// Dense-block classifier: stem -> dense blocks with transitions ->
/// norm/ReLU -> global average pool -> dropout -> dense -> sigmoid.
///
/// Every dense layer is Norm-ReLU-1x1 conv (bottleneck_factor * growth)
/// -Norm-ReLU-3x3 conv (growth) with its output concatenated onto the block's
/// features; transitions are Norm-ReLU-1x1 conv (compression)-2x2 avg-pool.
/// Convolutions carry no bias. Norm layers use batch statistics in train mode
/// and running statistics in eval mode.
template <class T>
class DenseNet {
 public:
  /// Throws ConfigError for an invalid config.
  explicit DenseNet(ModelConfig config);
  ~DenseNet();
  DenseNet(DenseNet&&) noexcept;
  DenseNet& operator=(DenseNet&&) noexcept;

  const ModelConfig& config() const noexcept;
  const NetworkShape& shape() const noexcept;
  const std::vector<ParamSpec>& specs() const noexcept;

  /// Fresh parameters: fan-in scaled normal conv kernels, unit norm scale,
  /// zero shift, zero/unit running statistics, Glorot-uniform head, zero bias.
  /// Values are drawn in double so float and double builds agree.
  Parameters<T> build(std::uint64_t seed) const;

  /// Train mode needs `dropout_rng`; eval mode ignores it and is a pure
  /// function of (params, input). Throws ShapeError on a mismatched batch.
  ForwardResult<T> forward(const Parameters<T>& params, const FeatureMap<T>& input, Mode mode,
                           Rng* dropout_rng = nullptr) const;

  /// Gradients of sum_i sum_k dprob[i,k] * prob[i,k] with respect to every
  /// trainable tensor, from a train-mode cache.
  Gradients<T> backward(const Parameters<T>& params, const TrainCache<T>& cache,
                        std::span<const T> dprob) const;

  /// Folds the batch statistics of a train-mode pass into the running
  /// statistics with the configured momentum.
  void update_running_statistics(Parameters<T>& params, const TrainCache<T>& cache) const;

  /// Pre-sigmoid activations of the last train-mode pass (n x classes).
  static std::span<const T> logits(const TrainCache<T>& cache);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

extern template class DenseNet<float>;
extern template class DenseNet<double>;

/// Fresh reference-precision parameters for a config.
Parameters<float> build(const ModelConfig& config, std::uint64_t seed);

template <class T>
std::size_t parameter_count(const Parameters<T>& params) {
  return params.parameter_count();
}

struct Prediction {
  std::array<double, Grade::kCount> probabilities{};
  Grade grade{0};
};

/// Index of the largest value, lowest index on ties.
std::size_t argmax_lowest(std::span<const double> values);

/// Eval-mode forward on a batch of one. Throws ShapeError if the image is
/// not input_side x input_side, ConfigError if the head is not 5-way.
Prediction predict(const DenseNet<float>& net, const Parameters<float>& params,
                   const ImageTensor& image);

/// Same for several images at once (one eval-mode pass).
std::vector<Prediction> predict_batch(const DenseNet<float>& net, const Parameters<float>& params,
                                      std::span<const ImageTensor> images);

/// Renormalized probability mass on grades 1..4: 1 - p0 / sum(p).
double dr_score(std::span<const double> probabilities);

}  // namespace drscreen::model
