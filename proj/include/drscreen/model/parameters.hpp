#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "drscreen/model/config.hpp"

namespace drscreen::model {

enum class ParamRole : std::uint8_t {
  kConvKernel,   // [k, k, in, out]
  kNormScale,    // gamma
  kNormShift,    // beta
  kNormMean,     // running mean (not trained)
  kNormVariance, // running variance (not trained)
  kDenseKernel,  // [in, classes]
  kDenseBias,    // [classes]
};

constexpr bool is_trainable(ParamRole role) noexcept {
  return role != ParamRole::kNormMean && role != ParamRole::kNormVariance;
}

struct ParamSpec {
  std::string name;
  std::vector<int> shape;
  ParamRole role;

  std::size_t element_count() const noexcept {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }
};

/// Every tensor of a network in a fixed order, names following the usual
/// `convB_blockL_*` scheme. Shapes are fully determined by the config.
std::vector<ParamSpec> parameter_specs(const ModelConfig& config);

/// Named weight set. Values are stored per tensor in spec order.
template <class T>
class Parameters {
 public:
  Parameters() = default;
  explicit Parameters(std::vector<ParamSpec> specs) : specs_(std::move(specs)) {
    values_.reserve(specs_.size());
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      values_.emplace_back(specs_[i].element_count(), T(0));
      index_.emplace(specs_[i].name, i);
    }
  }

  std::size_t tensor_count() const noexcept { return specs_.size(); }
  const ParamSpec& spec(std::size_t i) const { return specs_[i]; }
  const std::vector<ParamSpec>& specs() const noexcept { return specs_; }

  std::span<T> tensor(std::size_t i) { return values_[i]; }
  std::span<const T> tensor(std::size_t i) const { return values_[i]; }

  /// Index of a named tensor; throws NotFoundError.
  std::size_t find(const std::string& name) const;

  /// Total scalar count over every tensor, running statistics included.
  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  std::size_t trainable_count() const noexcept {
    std::size_t n = 0;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      if (is_trainable(specs_[i].role)) n += values_[i].size();
    }
    return n;
  }

  template <class U>
  Parameters<U> cast() const {
    Parameters<U> out(specs_);
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      auto dst = out.tensor(i);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<U>(values_[i][k]);
    }
    return out;
  }

  friend bool operator==(const Parameters& a, const Parameters& b) {
    if (a.specs_.size() != b.specs_.size()) return false;
    for (std::size_t i = 0; i < a.specs_.size(); ++i) {
      if (a.specs_[i].name != b.specs_[i].name || a.specs_[i].shape != b.specs_[i].shape) return false;
    }
    return a.values_ == b.values_;
  }

 private:
  std::vector<ParamSpec> specs_;
  std::vector<std::vector<T>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

extern template class Parameters<float>;
extern template class Parameters<double>;

}  // namespace drscreen::model
