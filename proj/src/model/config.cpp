#include "drscreen/model/config.hpp"

#include <set>

#include "drscreen/error.hpp"
#include "drscreen/json_util.hpp"

namespace drscreen::model {
namespace {

int conv_out(int in, int kernel, int stride, int pad) {
  const int span = in + 2 * pad - kernel;
  return span < 0 ? 0 : span / stride + 1;
}

}  // namespace

void ModelConfig::validate() const {
  if (initial_filters <= 0) throw ConfigError("initial_filters must be positive");
  if (growth_rate <= 0) throw ConfigError("growth_rate must be positive");
  if (bottleneck_factor <= 0) throw ConfigError("bottleneck_factor must be positive");
  if (block_layers.empty()) throw ConfigError("block_layers must list at least one block");
  for (int n : block_layers) {
    if (n <= 0) throw ConfigError("every dense block needs a positive layer count");
  }
  if (!(compression > 0.0 && compression <= 1.0)) throw ConfigError("compression must lie in (0, 1]");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (num_classes <= 0) throw ConfigError("num_classes must be positive");
  if (input_side <= 0) throw ConfigError("input_side must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw ConfigError("bn_momentum must lie in [0, 1)");
  if (!(bn_epsilon > 0.0)) throw ConfigError("bn_epsilon must be positive");
}

NetworkShape network_shape(const ModelConfig& config) {
  config.validate();
  NetworkShape shape;
  shape.stem_side = conv_out(config.input_side, 7, 2, 3);
  shape.pooled_side = conv_out(shape.stem_side, 3, 2, 1);
  if (shape.stem_side <= 0 || shape.pooled_side <= 0) {
    throw ConfigError("input_side " + std::to_string(config.input_side) + " is too small for the stem");
  }
  int side = shape.pooled_side;
  int channels = config.initial_filters;
  for (std::size_t b = 0; b < config.block_layers.size(); ++b) {
    DenseBlockShape block;
    block.spatial = side;
    block.in_channels = channels;
    channels += config.block_layers[b] * config.growth_rate;
    block.out_channels = channels;
    if (b + 1 < config.block_layers.size()) {
      block.transition_out = static_cast<int>(channels * config.compression);
      if (block.transition_out <= 0) throw ConfigError("compression leaves a transition with no channels");
      channels = block.transition_out;
      side /= 2;
      if (side <= 0) {
        throw ConfigError("spatial size reaches zero after transition " + std::to_string(b + 1) +
                          "; increase input_side or use fewer blocks");
      }
    }
    shape.blocks.push_back(block);
  }
  shape.final_side = side;
  shape.final_channels = channels;
  return shape;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"initial_filters", c.initial_filters},
                     {"growth_rate", c.growth_rate},
                     {"block_layers", c.block_layers},
                     {"bottleneck_factor", c.bottleneck_factor},
                     {"compression", c.compression},
                     {"dropout_rate", c.dropout_rate},
                     {"num_classes", c.num_classes},
                     {"input_side", c.input_side},
                     {"bn_momentum", c.bn_momentum},
                     {"bn_epsilon", c.bn_epsilon}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  json_util::reject_unknown_keys(j, "model",
                                 {"initial_filters", "growth_rate", "block_layers",
                                  "bottleneck_factor", "compression", "dropout_rate",
                                  "num_classes", "input_side", "bn_momentum", "bn_epsilon"});
  json_util::read_if_present(j, "initial_filters", c.initial_filters);
  json_util::read_if_present(j, "growth_rate", c.growth_rate);
  json_util::read_if_present(j, "block_layers", c.block_layers);
  json_util::read_if_present(j, "bottleneck_factor", c.bottleneck_factor);
  json_util::read_if_present(j, "compression", c.compression);
  json_util::read_if_present(j, "dropout_rate", c.dropout_rate);
  json_util::read_if_present(j, "num_classes", c.num_classes);
  json_util::read_if_present(j, "input_side", c.input_side);
  json_util::read_if_present(j, "bn_momentum", c.bn_momentum);
  json_util::read_if_present(j, "bn_epsilon", c.bn_epsilon);
}

}  // namespace drscreen::model
