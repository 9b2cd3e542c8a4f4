#include <cmath>
#include <cstring>

#include "variants.hpp"

namespace drscreen::simd::scalar {
namespace {

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate) std::memset(crow, 0, n * sizeof(T));
    const T* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] = crow[j] + av * brow[j];
    }
  }
}

template <class T>
void channel_affine(const T* x, std::size_t rows, std::size_t channels, std::size_t ldx,
                    const T* scale, const T* shift, bool relu, T* y, std::size_t ldy) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * ldx;
    T* yr = y + r * ldy;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      T v = xr[ch] * scale[ch] + shift[ch];
      if (relu) v = v > T(0) ? v : T(0);
      yr[ch] = v;
    }
  }
}

template <class T>
void adam_update(T* theta, T* m, T* v, const T* grad, std::size_t n,
                 const AdamCoefficients<T>& c) {
  const T one_minus_b1 = T(1) - c.beta1;
  const T one_minus_b2 = T(1) - c.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grad[i];
    m[i] = c.beta1 * m[i] + one_minus_b1 * g;
    v[i] = c.beta2 * v[i] + one_minus_b2 * (g * g);
    const T m_hat = m[i] / c.bias_correction1;
    const T v_hat = v[i] / c.bias_correction2;
    theta[i] = theta[i] - (c.learning_rate * m_hat) / (std::sqrt(v_hat) + c.epsilon);
  }
}

}  // namespace

template <class T>
const Kernels<T>& table() {
  static const Kernels<T> kTable{Isa::kScalar, &gemm<T>, &channel_affine<T>, &adam_update<T>};
  return kTable;
}

template const Kernels<float>& table<float>();
template const Kernels<double>& table<double>();

}  // namespace drscreen::simd::scalar
