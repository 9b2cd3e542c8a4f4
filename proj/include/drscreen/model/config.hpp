#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace drscreen::model {

/// Hyperparameters of the dense-block classifier. The stem is fixed: a 7x7
/// stride-2 convolution with initial_filters outputs, then a 3x3 stride-2
/// max-pool.
struct ModelConfig {
  int initial_filters = 64;
  int growth_rate = 32;
  std::vector<int> block_layers = {6, 12, 24, 16};
  int bottleneck_factor = 4;
  double compression = 0.5;
  double dropout_rate = 0.5;
  int num_classes = 5;
  int input_side = 224;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-3;

  /// DenseNet-121 backbone with a 5-way head.
  static ModelConfig reference() { return {}; }

  /// Small network used for gradient checks and overfit tests.
  static ModelConfig tiny() {
    ModelConfig c;
    c.initial_filters = 16;
    c.growth_rate = 8;
    c.block_layers = {2, 2};
    c.input_side = 32;
    return c;
  }

  /// Throws ConfigError on any invalid field or when the spatial trace
  /// collapses to zero.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct DenseBlockShape {
  int spatial = 0;          // feature-map side inside the block
  int in_channels = 0;      // channels entering the block
  int out_channels = 0;     // after all dense layers
  int transition_out = 0;   // channels after the transition (0 for the last block)
};

/// Spatial/channel trace implied by a config.
struct NetworkShape {
  int stem_side = 0;   // after the 7x7 stride-2 convolution
  int pooled_side = 0; // after the 3x3 stride-2 max-pool
  std::vector<DenseBlockShape> blocks;
  int final_side = 0;
  int final_channels = 0;
};

/// Throws ConfigError if the config is invalid.
NetworkShape network_shape(const ModelConfig& config);

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Rejects unknown keys; missing keys keep their defaults.
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace drscreen::model
