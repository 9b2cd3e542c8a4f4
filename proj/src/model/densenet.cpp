#include "drscreen/model/densenet.hpp"

#include <cmath>
#include <string>

#include "drscreen/error.hpp"
#include "layers.hpp"

namespace drscreen::model {
namespace {

struct NormRef {
  std::size_t gamma, beta, mean, variance;
  int channels;
};

struct ConvRef {
  std::size_t kernel;
  detail::ConvGeometry geometry;
};

struct LayerRef {
  int in_channels;
  NormRef norm1;
  ConvRef conv1;
  NormRef norm2;
  ConvRef conv2;
};

struct BlockRef {
  DenseBlockShape shape;
  std::vector<LayerRef> layers;
  bool has_transition = false;
  NormRef transition_norm{};
  ConvRef transition_conv{};
};

struct Layout {
  std::vector<ParamSpec> specs;
  ConvRef stem_conv;
  NormRef stem_norm;
  std::vector<BlockRef> blocks;
  NormRef final_norm;
  std::size_t head_kernel;
  std::size_t head_bias;
};

class LayoutBuilder {
 public:
  std::size_t add(std::string name, std::vector<int> shape, ParamRole role) {
    specs.push_back({std::move(name), std::move(shape), role});
    return specs.size() - 1;
  }

  NormRef norm(const std::string& prefix, int channels) {
    NormRef r{};
    r.channels = channels;
    r.gamma = add(prefix + "/gamma", {channels}, ParamRole::kNormScale);
    r.beta = add(prefix + "/beta", {channels}, ParamRole::kNormShift);
    r.mean = add(prefix + "/moving_mean", {channels}, ParamRole::kNormMean);
    r.variance = add(prefix + "/moving_variance", {channels}, ParamRole::kNormVariance);
    return r;
  }

  ConvRef conv(const std::string& prefix, int kernel, int stride, int pad, int side, int in_c,
               int out_c) {
    ConvRef r{};
    r.kernel = add(prefix + "/kernel", {kernel, kernel, in_c, out_c}, ParamRole::kConvKernel);
    auto& g = r.geometry;
    g.kernel = kernel;
    g.stride = stride;
    g.pad = pad;
    g.in_h = g.in_w = side;
    g.in_c = in_c;
    g.out_h = g.out_w = (side + 2 * pad - kernel) / stride + 1;
    g.out_c = out_c;
    return r;
  }

  std::vector<ParamSpec> specs;
};

Layout make_layout(const ModelConfig& cfg, const NetworkShape& shape) {
  LayoutBuilder b;
  Layout layout;
  layout.stem_conv = b.conv("conv1/conv", 7, 2, 3, cfg.input_side, 3, cfg.initial_filters);
  layout.stem_norm = b.norm("conv1/bn", cfg.initial_filters);
  const int bottleneck = cfg.bottleneck_factor * cfg.growth_rate;
  for (std::size_t bi = 0; bi < shape.blocks.size(); ++bi) {
    const DenseBlockShape& bs = shape.blocks[bi];
    BlockRef block;
    block.shape = bs;
    const std::string stage = "conv" + std::to_string(bi + 2);
    for (int l = 0; l < cfg.block_layers[bi]; ++l) {
      const std::string prefix = stage + "_block" + std::to_string(l + 1);
      LayerRef layer{};
      layer.in_channels = bs.in_channels + l * cfg.growth_rate;
      layer.norm1 = b.norm(prefix + "_0_bn", layer.in_channels);
      layer.conv1 = b.conv(prefix + "_1_conv", 1, 1, 0, bs.spatial, layer.in_channels, bottleneck);
      layer.norm2 = b.norm(prefix + "_1_bn", bottleneck);
      layer.conv2 = b.conv(prefix + "_2_conv", 3, 1, 1, bs.spatial, bottleneck, cfg.growth_rate);
      block.layers.push_back(layer);
    }
    if (bs.transition_out > 0) {
      const std::string prefix = "pool" + std::to_string(bi + 2);
      block.has_transition = true;
      block.transition_norm = b.norm(prefix + "_bn", bs.out_channels);
      block.transition_conv =
          b.conv(prefix + "_conv", 1, 1, 0, bs.spatial, bs.out_channels, bs.transition_out);
    }
    layout.blocks.push_back(std::move(block));
  }
  layout.final_norm = b.norm("bn", shape.final_channels);
  layout.head_kernel =
      b.add("head/kernel", {shape.final_channels, cfg.num_classes}, ParamRole::kDenseKernel);
  layout.head_bias = b.add("head/bias", {cfg.num_classes}, ParamRole::kDenseBias);
  layout.specs = std::move(b.specs);
  return layout;
}

}  // namespace

std::vector<ParamSpec> parameter_specs(const ModelConfig& config) {
  return make_layout(config, network_shape(config)).specs;
}

template <class T>
std::size_t Parameters<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw NotFoundError("no parameter tensor named '" + name + "'");
  return it->second;
}

template class Parameters<float>;
template class Parameters<double>;

template <class T>
FeatureMap<T> make_batch(std::span<const ImageTensor> images) {
  if (images.empty()) throw ShapeError("cannot batch zero images");
  const int h = images.front().height(), w = images.front().width();
  FeatureMap<T> batch(static_cast<int>(images.size()), h, w, ImageTensor::kChannels);
  std::size_t offset = 0;
  for (const auto& img : images) {
    if (img.height() != h || img.width() != w) throw ShapeError("images in a batch must share one size");
    for (float v : img.values()) batch.data[offset++] = static_cast<T>(v);
  }
  return batch;
}

template FeatureMap<float> make_batch<float>(std::span<const ImageTensor>);
template FeatureMap<double> make_batch<double>(std::span<const ImageTensor>);

template <class T>
struct TrainCache {
  int n = 0;
  FeatureMap<T> input;
  detail::NormCache<T> stem_norm;
  std::vector<std::uint32_t> pool_argmax;

  struct Layer {
    detail::NormCache<T> norm1;
    detail::NormCache<T> norm2;
  };
  struct Block {
    std::vector<Layer> layers;
    detail::NormCache<T> transition_norm;
  };
  std::vector<Block> blocks;
  detail::NormCache<T> final_norm;

  std::vector<T> pooled;   // n x C
  std::vector<T> mask;     // n x C, 0 or 1/(1-rate)
  std::vector<T> dropped;  // n x C
  std::vector<T> logits;   // n x classes
  std::vector<T> probs;    // n x classes
};

template <class T>
struct DenseNet<T>::Impl {
  ModelConfig config;
  NetworkShape shape;
  Layout layout;

  explicit Impl(ModelConfig cfg)
      : config(std::move(cfg)), shape(network_shape(config)), layout(make_layout(config, shape)) {}

  void check_input(const Parameters<T>& params, const FeatureMap<T>& input) const {
    if (params.tensor_count() != layout.specs.size()) {
      throw ShapeError("parameter set does not match this network");
    }
    if (input.n <= 0 || input.height != config.input_side || input.width != config.input_side ||
        input.channels != 3) {
      throw ShapeError("expected a batch of " + std::to_string(config.input_side) + "x" +
                       std::to_string(config.input_side) + "x3 images, got " +
                       std::to_string(input.height) + "x" + std::to_string(input.width) + "x" +
                       std::to_string(input.channels));
    }
  }

  // Eval-mode forward for a chunk of images, writing n x classes probabilities.
  void eval_chunk(const simd::Kernels<T>& k, const Parameters<T>& p, const T* input, int n,
                  T* probs, ShapeTrace* trace) const {
    const double eps = config.bn_epsilon;
    std::vector<T> scratch;
    auto norm_eval = [&](const T* x, std::size_t rows, std::size_t ldx, const NormRef& r,
                         std::vector<T>& out) {
      out.resize(rows * r.channels);
      detail::norm_relu_eval(k, x, rows, r.channels, ldx, p.tensor(r.gamma).data(),
                             p.tensor(r.beta).data(), p.tensor(r.mean).data(),
                             p.tensor(r.variance).data(), eps, out.data());
    };

    const auto& sg = layout.stem_conv.geometry;
    std::vector<T> stem(static_cast<std::size_t>(n) * sg.out_pixels() * sg.out_c);
    detail::conv_forward(k, input, 3, n, sg, p.tensor(layout.stem_conv.kernel).data(), stem.data(),
                         sg.out_c, scratch);
    std::vector<T> activated, bottleneck, activated2;
    norm_eval(stem.data(), stem.size() / sg.out_c, sg.out_c, layout.stem_norm, activated);

    std::vector<T> features;
    auto alloc_block = [&](const BlockRef& b) {
      features.assign(static_cast<std::size_t>(n) * b.shape.spatial * b.shape.spatial *
                          b.shape.out_channels,
                      T(0));
    };
    alloc_block(layout.blocks.front());
    detail::maxpool_forward(activated.data(), n, sg.out_h, sg.out_w, sg.out_c, shape.pooled_side,
                            shape.pooled_side, features.data(),
                            layout.blocks.front().shape.out_channels, nullptr);

    for (std::size_t bi = 0; bi < layout.blocks.size(); ++bi) {
      const BlockRef& b = layout.blocks[bi];
      const std::size_t ld = b.shape.out_channels;
      const std::size_t rows = static_cast<std::size_t>(n) * b.shape.spatial * b.shape.spatial;
      for (const LayerRef& layer : b.layers) {
        norm_eval(features.data(), rows, ld, layer.norm1, activated);
        const auto& g1 = layer.conv1.geometry;
        bottleneck.resize(rows * g1.out_c);
        detail::conv_forward(k, activated.data(), g1.in_c, n, g1, p.tensor(layer.conv1.kernel).data(),
                             bottleneck.data(), g1.out_c, scratch);
        norm_eval(bottleneck.data(), rows, g1.out_c, layer.norm2, activated2);
        const auto& g2 = layer.conv2.geometry;
        detail::conv_forward(k, activated2.data(), g2.in_c, n, g2, p.tensor(layer.conv2.kernel).data(),
                             features.data() + layer.in_channels, ld, scratch);
      }
      if (b.has_transition) {
        norm_eval(features.data(), rows, ld, b.transition_norm, activated);
        const auto& gt = b.transition_conv.geometry;
        bottleneck.resize(rows * gt.out_c);
        detail::conv_forward(k, activated.data(), gt.in_c, n, gt,
                             p.tensor(b.transition_conv.kernel).data(), bottleneck.data(), gt.out_c,
                             scratch);
        const BlockRef& next = layout.blocks[bi + 1];
        alloc_block(next);
        detail::avgpool_forward(bottleneck.data(), n, b.shape.spatial, b.shape.spatial, gt.out_c,
                                features.data(), next.shape.out_channels);
      }
    }

    const int side = shape.final_side, channels = shape.final_channels;
    const std::size_t px = static_cast<std::size_t>(side) * side;
    norm_eval(features.data(), n * px, channels, layout.final_norm, activated);
    if (trace) trace->push_back({"backbone", {n, side, side, channels}});

    std::vector<T> pooled(static_cast<std::size_t>(n) * channels, T(0));
    global_average(activated.data(), n, px, channels, pooled.data());
    if (trace) {
      trace->push_back({"global_average_pool", {n, channels}});
      trace->push_back({"dropout", {n, channels}});
    }
    head(k, p, pooled.data(), n, probs, nullptr);
    if (trace) trace->push_back({"head", {n, config.num_classes}});
  }

  static void global_average(const T* x, int n, std::size_t px, int channels, T* pooled) {
    for (int i = 0; i < n; ++i) {
      std::vector<double> acc(channels, 0.0);
      for (std::size_t q = 0; q < px; ++q) {
        const T* row = x + (static_cast<std::size_t>(i) * px + q) * channels;
        for (int c = 0; c < channels; ++c) acc[c] += static_cast<double>(row[c]);
      }
      for (int c = 0; c < channels; ++c) {
        pooled[static_cast<std::size_t>(i) * channels + c] = static_cast<T>(acc[c] / static_cast<double>(px));
      }
    }
  }

  void head(const simd::Kernels<T>& k, const Parameters<T>& p, const T* x, int n, T* probs,
            T* logits_out) const {
    const int classes = config.num_classes;
    const int channels = shape.final_channels;
    std::vector<T> logits(static_cast<std::size_t>(n) * classes);
    k.gemm(n, classes, channels, x, channels, p.tensor(layout.head_kernel).data(), classes,
           logits.data(), classes, false);
    const auto bias = p.tensor(layout.head_bias);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < classes; ++c) {
        T& z = logits[static_cast<std::size_t>(i) * classes + c];
        z += bias[c];
        probs[static_cast<std::size_t>(i) * classes + c] = detail::sigmoid(z);
      }
    }
    if (logits_out) std::copy(logits.begin(), logits.end(), logits_out);
  }

  std::shared_ptr<TrainCache<T>> train_forward(const simd::Kernels<T>& k, const Parameters<T>& p,
                                               const FeatureMap<T>& input, Rng& rng,
                                               ShapeTrace& trace) const {
    auto cache = std::make_shared<TrainCache<T>>();
    TrainCache<T>& c = *cache;
    const int n = input.n;
    const double eps = config.bn_epsilon;
    c.n = n;
    c.input = input;
    std::vector<T> scratch;
    auto norm_train = [&](const T* x, std::size_t rows, std::size_t ldx, const NormRef& r,
                          detail::NormCache<T>& nc) {
      detail::norm_relu_train(k, x, rows, r.channels, ldx, p.tensor(r.gamma).data(),
                              p.tensor(r.beta).data(), eps, nc);
    };

    const auto& sg = layout.stem_conv.geometry;
    std::vector<T> stem(static_cast<std::size_t>(n) * sg.out_pixels() * sg.out_c);
    detail::conv_forward(k, input.data.data(), 3, n, sg, p.tensor(layout.stem_conv.kernel).data(),
                         stem.data(), sg.out_c, scratch);
    norm_train(stem.data(), stem.size() / sg.out_c, sg.out_c, layout.stem_norm, c.stem_norm);

    std::vector<T> features;
    auto alloc_block = [&](const BlockRef& b) {
      features.assign(static_cast<std::size_t>(n) * b.shape.spatial * b.shape.spatial *
                          b.shape.out_channels,
                      T(0));
    };
    alloc_block(layout.blocks.front());
    c.pool_argmax.resize(static_cast<std::size_t>(n) * shape.pooled_side * shape.pooled_side *
                         sg.out_c);
    detail::maxpool_forward(c.stem_norm.out.data(), n, sg.out_h, sg.out_w, sg.out_c,
                            shape.pooled_side, shape.pooled_side, features.data(),
                            layout.blocks.front().shape.out_channels, c.pool_argmax.data());

    std::vector<T> bottleneck;
    c.blocks.resize(layout.blocks.size());
    for (std::size_t bi = 0; bi < layout.blocks.size(); ++bi) {
      const BlockRef& b = layout.blocks[bi];
      auto& bc = c.blocks[bi];
      bc.layers.resize(b.layers.size());
      const std::size_t ld = b.shape.out_channels;
      const std::size_t rows = static_cast<std::size_t>(n) * b.shape.spatial * b.shape.spatial;
      for (std::size_t li = 0; li < b.layers.size(); ++li) {
        const LayerRef& layer = b.layers[li];
        auto& lc = bc.layers[li];
        norm_train(features.data(), rows, ld, layer.norm1, lc.norm1);
        const auto& g1 = layer.conv1.geometry;
        bottleneck.resize(rows * g1.out_c);
        detail::conv_forward(k, lc.norm1.out.data(), g1.in_c, n, g1,
                             p.tensor(layer.conv1.kernel).data(), bottleneck.data(), g1.out_c,
                             scratch);
        norm_train(bottleneck.data(), rows, g1.out_c, layer.norm2, lc.norm2);
        const auto& g2 = layer.conv2.geometry;
        detail::conv_forward(k, lc.norm2.out.data(), g2.in_c, n, g2,
                             p.tensor(layer.conv2.kernel).data(), features.data() + layer.in_channels,
                             ld, scratch);
      }
      if (b.has_transition) {
        norm_train(features.data(), rows, ld, b.transition_norm, bc.transition_norm);
        const auto& gt = b.transition_conv.geometry;
        bottleneck.resize(rows * gt.out_c);
        detail::conv_forward(k, bc.transition_norm.out.data(), gt.in_c, n, gt,
                             p.tensor(b.transition_conv.kernel).data(), bottleneck.data(), gt.out_c,
                             scratch);
        const BlockRef& next = layout.blocks[bi + 1];
        alloc_block(next);
        detail::avgpool_forward(bottleneck.data(), n, b.shape.spatial, b.shape.spatial, gt.out_c,
                                features.data(), next.shape.out_channels);
      }
    }

    const int side = shape.final_side, channels = shape.final_channels;
    const std::size_t px = static_cast<std::size_t>(side) * side;
    norm_train(features.data(), n * px, channels, layout.final_norm, c.final_norm);
    trace.push_back({"backbone", {n, side, side, channels}});

    c.pooled.assign(static_cast<std::size_t>(n) * channels, T(0));
    global_average(c.final_norm.out.data(), n, px, channels, c.pooled.data());
    trace.push_back({"global_average_pool", {n, channels}});

    const double rate = config.dropout_rate;
    c.mask.assign(c.pooled.size(), T(1));
    if (rate > 0.0) {
      const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
      for (T& m : c.mask) m = rng.uniform() >= rate ? keep_scale : T(0);
    }
    c.dropped.resize(c.pooled.size());
    for (std::size_t i = 0; i < c.pooled.size(); ++i) c.dropped[i] = c.pooled[i] * c.mask[i];
    trace.push_back({"dropout", {n, channels}});

    c.probs.resize(static_cast<std::size_t>(n) * config.num_classes);
    c.logits.resize(c.probs.size());
    head(k, p, c.dropped.data(), n, c.probs.data(), c.logits.data());
    trace.push_back({"head", {n, config.num_classes}});
    return cache;
  }

  Gradients<T> backward(const simd::Kernels<T>& k, const Parameters<T>& p, const TrainCache<T>& c,
                        std::span<const T> dprob) const {
    const int n = c.n;
    const int classes = config.num_classes;
    const int channels = shape.final_channels;
    if (dprob.size() != static_cast<std::size_t>(n) * classes) {
      throw ShapeError("probability gradient has the wrong size");
    }
    Gradients<T> grads;
    grads.tensors.reserve(layout.specs.size());
    for (const auto& s : layout.specs) grads.tensors.emplace_back(s.element_count(), T(0));
    auto g = [&](std::size_t idx) { return grads.tensors[idx].data(); };

    // Sigmoid and head.
    std::vector<T> dz(dprob.size());
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = dprob[i] * c.probs[i] * (T(1) - c.probs[i]);
    {
      std::vector<T> dropped_t(c.dropped.size());
      detail::transpose(c.dropped.data(), n, channels, channels, dropped_t.data());
      k.gemm(channels, classes, n, dropped_t.data(), n, dz.data(), classes, g(layout.head_kernel),
             classes, true);
      T* db = g(layout.head_bias);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < classes; ++j) db[j] += dz[static_cast<std::size_t>(i) * classes + j];
      }
    }
    std::vector<T> dpooled(static_cast<std::size_t>(n) * channels, T(0));
    {
      const auto w = p.tensor(layout.head_kernel);
      std::vector<T> w_t(w.size());
      detail::transpose(w.data(), channels, classes, classes, w_t.data());
      k.gemm(n, channels, classes, dz.data(), classes, w_t.data(), channels, dpooled.data(),
             channels, false);
    }
    for (std::size_t i = 0; i < dpooled.size(); ++i) dpooled[i] *= c.mask[i];

    // Global average pool -> final norm.
    const int side = shape.final_side;
    const std::size_t px = static_cast<std::size_t>(side) * side;
    std::vector<T> dact(static_cast<std::size_t>(n) * px * channels);
    const T inv_px = T(1) / static_cast<T>(px);
    for (int i = 0; i < n; ++i) {
      for (std::size_t q = 0; q < px; ++q) {
        T* row = dact.data() + (static_cast<std::size_t>(i) * px + q) * channels;
        for (int ch = 0; ch < channels; ++ch) row[ch] = dpooled[static_cast<std::size_t>(i) * channels + ch] * inv_px;
      }
    }
    const BlockRef& last = layout.blocks.back();
    std::vector<T> dfeatures(static_cast<std::size_t>(n) * px * last.shape.out_channels, T(0));
    norm_backward(p, grads, layout.final_norm, c.final_norm, dact.data(), dfeatures.data(),
                  last.shape.out_channels);

    std::vector<T> dbottleneck, dact2;
    for (std::size_t bi = layout.blocks.size(); bi-- > 0;) {
      const BlockRef& b = layout.blocks[bi];
      const auto& bc = c.blocks[bi];
      const std::size_t ld = b.shape.out_channels;
      const std::size_t rows = static_cast<std::size_t>(n) * b.shape.spatial * b.shape.spatial;
      for (std::size_t li = b.layers.size(); li-- > 0;) {
        const LayerRef& layer = b.layers[li];
        const auto& lc = bc.layers[li];
        const auto& g2 = layer.conv2.geometry;
        // Gradient w.r.t. this layer's concatenated output slice, made dense.
        std::vector<T> dout(rows * g2.out_c);
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(dfeatures.data() + r * ld + layer.in_channels, g2.out_c,
                      dout.data() + r * g2.out_c);
        }
        dact2.assign(rows * g2.in_c, T(0));
        detail::conv_backward(k, lc.norm2.out.data(), g2.in_c, n, g2,
                              p.tensor(layer.conv2.kernel).data(), dout.data(),
                              g(layer.conv2.kernel), dact2.data(), g2.in_c);
        const auto& g1 = layer.conv1.geometry;
        dbottleneck.assign(rows * g1.out_c, T(0));
        norm_backward(p, grads, layer.norm2, lc.norm2, dact2.data(), dbottleneck.data(), g1.out_c);
        std::vector<T> dact1(rows * g1.in_c, T(0));
        detail::conv_backward(k, lc.norm1.out.data(), g1.in_c, n, g1,
                              p.tensor(layer.conv1.kernel).data(), dbottleneck.data(),
                              g(layer.conv1.kernel), dact1.data(), g1.in_c);
        norm_backward(p, grads, layer.norm1, lc.norm1, dact1.data(), dfeatures.data(), ld);
      }
      // dfeatures[:, :in_channels] is now the gradient of the block input.
      if (bi == 0) break;
      const BlockRef& prev = layout.blocks[bi - 1];
      const auto& pc = c.blocks[bi - 1];
      const auto& gt = prev.transition_conv.geometry;
      const std::size_t prev_rows =
          static_cast<std::size_t>(n) * prev.shape.spatial * prev.shape.spatial;
      std::vector<T> dconv(prev_rows * gt.out_c, T(0));
      detail::avgpool_backward(dfeatures.data(), ld, n, prev.shape.spatial, prev.shape.spatial,
                               gt.out_c, dconv.data());
      std::vector<T> dtact(prev_rows * gt.in_c, T(0));
      detail::conv_backward(k, pc.transition_norm.out.data(), gt.in_c, n, gt,
                            p.tensor(prev.transition_conv.kernel).data(), dconv.data(),
                            g(prev.transition_conv.kernel), dtact.data(), gt.in_c);
      std::vector<T> dprev(prev_rows * prev.shape.out_channels, T(0));
      norm_backward(p, grads, prev.transition_norm, pc.transition_norm, dtact.data(), dprev.data(),
                    prev.shape.out_channels);
      dfeatures = std::move(dprev);
    }

    // Max-pool -> stem norm -> stem conv (input gradient not needed).
    const auto& sg = layout.stem_conv.geometry;
    const BlockRef& first = layout.blocks.front();
    std::vector<T> dstem_act(static_cast<std::size_t>(n) * sg.out_pixels() * sg.out_c, T(0));
    detail::maxpool_backward(dfeatures.data(), first.shape.out_channels, n, sg.out_h, sg.out_w,
                             sg.out_c, shape.pooled_side, shape.pooled_side, c.pool_argmax.data(),
                             dstem_act.data());
    std::vector<T> dstem(dstem_act.size(), T(0));
    norm_backward(p, grads, layout.stem_norm, c.stem_norm, dstem_act.data(), dstem.data(), sg.out_c);
    detail::conv_backward<T>(k, c.input.data.data(), 3, n, sg,
                             p.tensor(layout.stem_conv.kernel).data(), dstem.data(),
                             g(layout.stem_conv.kernel), nullptr, 0);
    return grads;
  }

  void norm_backward(const Parameters<T>& p, Gradients<T>& grads, const NormRef& r,
                     const detail::NormCache<T>& nc, const T* dout, T* dx, std::size_t ld_dx) const {
    detail::norm_relu_backward(nc, p.tensor(r.gamma).data(), dout, grads.tensors[r.gamma].data(),
                               grads.tensors[r.beta].data(), dx, ld_dx);
  }

  template <class F>
  void for_each_norm(const TrainCache<T>& c, F&& f) const {
    f(layout.stem_norm, c.stem_norm);
    for (std::size_t bi = 0; bi < layout.blocks.size(); ++bi) {
      const BlockRef& b = layout.blocks[bi];
      for (std::size_t li = 0; li < b.layers.size(); ++li) {
        f(b.layers[li].norm1, c.blocks[bi].layers[li].norm1);
        f(b.layers[li].norm2, c.blocks[bi].layers[li].norm2);
      }
      if (b.has_transition) f(b.transition_norm, c.blocks[bi].transition_norm);
    }
    f(layout.final_norm, c.final_norm);
  }
};

template <class T>
DenseNet<T>::DenseNet(ModelConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

template <class T>
DenseNet<T>::~DenseNet() = default;
template <class T>
DenseNet<T>::DenseNet(DenseNet&&) noexcept = default;
template <class T>
DenseNet<T>& DenseNet<T>::operator=(DenseNet&&) noexcept = default;

template <class T>
const ModelConfig& DenseNet<T>::config() const noexcept {
  return impl_->config;
}

template <class T>
const NetworkShape& DenseNet<T>::shape() const noexcept {
  return impl_->shape;
}

template <class T>
const std::vector<ParamSpec>& DenseNet<T>::specs() const noexcept {
  return impl_->layout.specs;
}

template <class T>
Parameters<T> DenseNet<T>::build(std::uint64_t seed) const {
  Parameters<T> params(impl_->layout.specs);
  Rng rng(seed);
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    const ParamSpec& s = params.spec(i);
    auto values = params.tensor(i);
    switch (s.role) {
      case ParamRole::kConvKernel: {
        const double fan_in = static_cast<double>(s.shape[0]) * s.shape[1] * s.shape[2];
        const double stddev = std::sqrt(2.0 / fan_in);
        for (T& v : values) v = static_cast<T>(rng.normal() * stddev);
        break;
      }
      case ParamRole::kDenseKernel: {
        const double limit = std::sqrt(6.0 / (s.shape[0] + s.shape[1]));
        for (T& v : values) v = static_cast<T>(rng.uniform(-limit, limit));
        break;
      }
      case ParamRole::kNormScale:
      case ParamRole::kNormVariance:
        std::fill(values.begin(), values.end(), T(1));
        break;
      case ParamRole::kNormShift:
      case ParamRole::kNormMean:
      case ParamRole::kDenseBias:
        std::fill(values.begin(), values.end(), T(0));
        break;
    }
  }
  return params;
}

template <class T>
ForwardResult<T> DenseNet<T>::forward(const Parameters<T>& params, const FeatureMap<T>& input,
                                      Mode mode, Rng* dropout_rng) const {
  impl_->check_input(params, input);
  const auto& k = simd::active_kernels<T>();
  ForwardResult<T> result;
  result.trace.push_back({"input", {input.n, input.height, input.width, input.channels}});
  result.probabilities = FeatureMap<T>(input.n, 1, 1, impl_->config.num_classes);
  if (mode == Mode::kTrain) {
    if (!dropout_rng) throw ParameterError("train-mode forward needs a dropout RNG");
    auto cache = impl_->train_forward(k, params, input, *dropout_rng, result.trace);
    result.probabilities.data = cache->probs;
    result.cache = std::move(cache);
    return result;
  }
  // Eval mode is per-sample independent; bounded chunks keep memory flat.
  constexpr int kChunk = 4;
  const std::size_t image_size = static_cast<std::size_t>(input.height) * input.width * 3;
  ShapeTrace chunk_trace;
  for (int start = 0; start < input.n; start += kChunk) {
    const int count = std::min(kChunk, input.n - start);
    chunk_trace.clear();
    impl_->eval_chunk(k, params, input.data.data() + start * image_size, count,
                      result.probabilities.data.data() +
                          static_cast<std::size_t>(start) * impl_->config.num_classes,
                      &chunk_trace);
  }
  for (auto& entry : chunk_trace) {
    entry.dims[0] = input.n;
    result.trace.push_back(entry);
  }
  return result;
}

template <class T>
Gradients<T> DenseNet<T>::backward(const Parameters<T>& params, const TrainCache<T>& cache,
                                   std::span<const T> dprob) const {
  return impl_->backward(simd::active_kernels<T>(), params, cache, dprob);
}

template <class T>
void DenseNet<T>::update_running_statistics(Parameters<T>& params, const TrainCache<T>& cache) const {
  const double momentum = impl_->config.bn_momentum;
  impl_->for_each_norm(cache, [&](const NormRef& r, const detail::NormCache<T>& nc) {
    auto mean = params.tensor(r.mean);
    auto var = params.tensor(r.variance);
    for (int ch = 0; ch < r.channels; ++ch) {
      mean[ch] = static_cast<T>(momentum * static_cast<double>(mean[ch]) + (1.0 - momentum) * nc.mean[ch]);
      var[ch] = static_cast<T>(momentum * static_cast<double>(var[ch]) + (1.0 - momentum) * nc.variance[ch]);
    }
  });
}

template <class T>
std::span<const T> DenseNet<T>::logits(const TrainCache<T>& cache) {
  return cache.logits;
}

template class DenseNet<float>;
template class DenseNet<double>;

Parameters<float> build(const ModelConfig& config, std::uint64_t seed) {
  return DenseNet<float>(config).build(seed);
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

double dr_score(std::span<const double> probabilities) {
  double total = 0.0;
  for (double p : probabilities) total += p;
  if (!(total > 0.0)) return 0.0;
  return 1.0 - probabilities[0] / total;
}

std::vector<Prediction> predict_batch(const DenseNet<float>& net, const Parameters<float>& params,
                                      std::span<const ImageTensor> images) {
  if (net.config().num_classes != Grade::kCount) {
    throw ConfigError("grading needs a 5-way head, config has " +
                      std::to_string(net.config().num_classes));
  }
  for (const auto& img : images) {
    if (img.height() != net.config().input_side || img.width() != net.config().input_side) {
      throw ShapeError("expected a " + std::to_string(net.config().input_side) + "x" +
                       std::to_string(net.config().input_side) + "x3 image, got " +
                       std::to_string(img.height()) + "x" + std::to_string(img.width()) + "x3");
    }
  }
  const auto batch = make_batch<float>(images);
  const auto result = net.forward(params, batch, Mode::kEval);
  std::vector<Prediction> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (int c = 0; c < Grade::kCount; ++c) {
      out[i].probabilities[c] = result.probabilities.data[i * Grade::kCount + c];
    }
    out[i].grade = Grade(static_cast<int>(argmax_lowest(out[i].probabilities)));
  }
  return out;
}

Prediction predict(const DenseNet<float>& net, const Parameters<float>& params,
                   const ImageTensor& image) {
  return predict_batch(net, params, std::span<const ImageTensor>(&image, 1)).front();
}

}  // namespace drscreen::model
