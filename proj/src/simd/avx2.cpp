// Compiled with -mavx2 -mfma. Only reached after CPUID confirms support.

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "variants.hpp"

namespace drscreen::simd::avx2 {
namespace {

template <class T>
struct Vec;

template <>
struct Vec<float> {
  using Reg = __m256;
  static constexpr std::size_t kWidth = 8;
  static Reg zero() { return _mm256_setzero_ps(); }
  static Reg set1(float x) { return _mm256_set1_ps(x); }
  static Reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, Reg r) { _mm256_storeu_ps(p, r); }
  static __m256i mask(std::size_t count) {
    const __m256i lanes = _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7);
    return _mm256_cmpgt_epi32(_mm256_set1_epi32(static_cast<int>(count)), lanes);
  }
  static Reg maskload(const float* p, __m256i m) { return _mm256_maskload_ps(p, m); }
  static void maskstore(float* p, __m256i m, Reg r) { _mm256_maskstore_ps(p, m, r); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_ps(a, b); }
  static Reg sub(Reg a, Reg b) { return _mm256_sub_ps(a, b); }
  static Reg mul(Reg a, Reg b) { return _mm256_mul_ps(a, b); }
  static Reg div(Reg a, Reg b) { return _mm256_div_ps(a, b); }
  static Reg sqrt(Reg a) { return _mm256_sqrt_ps(a); }
  static Reg max(Reg a, Reg b) { return _mm256_max_ps(a, b); }
};

template <>
struct Vec<double> {
  using Reg = __m256d;
  static constexpr std::size_t kWidth = 4;
  static Reg zero() { return _mm256_setzero_pd(); }
  static Reg set1(double x) { return _mm256_set1_pd(x); }
  static Reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, Reg r) { _mm256_storeu_pd(p, r); }
  static __m256i mask(std::size_t count) {
    const __m256i lanes = _mm256_setr_epi64x(0, 1, 2, 3);
    return _mm256_cmpgt_epi64(_mm256_set1_epi64x(static_cast<long long>(count)), lanes);
  }
  static Reg maskload(const double* p, __m256i m) { return _mm256_maskload_pd(p, m); }
  static void maskstore(double* p, __m256i m, Reg r) { _mm256_maskstore_pd(p, m, r); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_pd(a, b); }
  static Reg sub(Reg a, Reg b) { return _mm256_sub_pd(a, b); }
  static Reg mul(Reg a, Reg b) { return _mm256_mul_pd(a, b); }
  static Reg div(Reg a, Reg b) { return _mm256_div_pd(a, b); }
  static Reg sqrt(Reg a) { return _mm256_sqrt_pd(a); }
  static Reg max(Reg a, Reg b) { return _mm256_max_pd(a, b); }
};

// Register tile: kRows rows of C by two vectors of columns. `full` means all
// 2*kWidth columns are live and plain loads can be used.
template <class T, int kRows, bool kFull>
inline void micro_tile(std::size_t kc, const T* a, std::size_t lda, const T* b, std::size_t ldb,
                       T* c, std::size_t ldc, std::size_t cols, bool load_c) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kWidth;
  typename V::Reg acc[kRows][2];
  __m256i m0{}, m1{};
  if constexpr (!kFull) {
    m0 = V::mask(std::min(cols, W));
    m1 = V::mask(cols > W ? cols - W : 0);
  }
  for (int r = 0; r < kRows; ++r) {
    if (load_c) {
      if constexpr (kFull) {
        acc[r][0] = V::load(c + r * ldc);
        acc[r][1] = V::load(c + r * ldc + W);
      } else {
        acc[r][0] = V::maskload(c + r * ldc, m0);
        acc[r][1] = V::maskload(c + r * ldc + W, m1);
      }
    } else {
      acc[r][0] = V::zero();
      acc[r][1] = V::zero();
    }
  }
  for (std::size_t p = 0; p < kc; ++p) {
    typename V::Reg b0, b1;
    if constexpr (kFull) {
      b0 = V::load(b + p * ldb);
      b1 = V::load(b + p * ldb + W);
    } else {
      b0 = V::maskload(b + p * ldb, m0);
      b1 = V::maskload(b + p * ldb + W, m1);
    }
    for (int r = 0; r < kRows; ++r) {
      const auto ar = V::set1(a[r * lda + p]);
      acc[r][0] = V::fmadd(ar, b0, acc[r][0]);
      acc[r][1] = V::fmadd(ar, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < kRows; ++r) {
    if constexpr (kFull) {
      V::store(c + r * ldc, acc[r][0]);
      V::store(c + r * ldc + W, acc[r][1]);
    } else {
      V::maskstore(c + r * ldc, m0, acc[r][0]);
      V::maskstore(c + r * ldc + W, m1, acc[r][1]);
    }
  }
}

template <class T, bool kFull>
inline void tile_rows(std::size_t rows, std::size_t kc, const T* a, std::size_t lda, const T* b,
                      std::size_t ldb, T* c, std::size_t ldc, std::size_t cols, bool load_c) {
  switch (rows) {
    case 6: micro_tile<T, 6, kFull>(kc, a, lda, b, ldb, c, ldc, cols, load_c); break;
    case 5: micro_tile<T, 5, kFull>(kc, a, lda, b, ldb, c, ldc, cols, load_c); break;
    case 4: micro_tile<T, 4, kFull>(kc, a, lda, b, ldb, c, ldc, cols, load_c); break;
    case 3: micro_tile<T, 3, kFull>(kc, a, lda, b, ldb, c, ldc, cols, load_c); break;
    case 2: micro_tile<T, 2, kFull>(kc, a, lda, b, ldb, c, ldc, cols, load_c); break;
    default: micro_tile<T, 1, kFull>(kc, a, lda, b, ldb, c, ldc, cols, load_c); break;
  }
}

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  constexpr std::size_t kTileCols = 2 * Vec<T>::kWidth;
  constexpr std::size_t kTileRows = 6;
  constexpr std::size_t kBlockK = 256;
  constexpr std::size_t kBlockM = 72;

  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, T(0));
    }
    return;
  }
  for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
    const std::size_t kc = std::min(kBlockK, k - k0);
    const bool load_c = accumulate || k0 > 0;
    for (std::size_t i0 = 0; i0 < m; i0 += kBlockM) {
      const std::size_t mc = std::min(kBlockM, m - i0);
      for (std::size_t j0 = 0; j0 < n; j0 += kTileCols) {
        const std::size_t cols = std::min(kTileCols, n - j0);
        for (std::size_t i = i0; i < i0 + mc; i += kTileRows) {
          const std::size_t rows = std::min(kTileRows, i0 + mc - i);
          const T* ap = a + i * lda + k0;
          const T* bp = b + k0 * ldb + j0;
          T* cp = c + i * ldc + j0;
          if (cols == kTileCols) {
            tile_rows<T, true>(rows, kc, ap, lda, bp, ldb, cp, ldc, cols, load_c);
          } else {
            tile_rows<T, false>(rows, kc, ap, lda, bp, ldb, cp, ldc, cols, load_c);
          }
        }
      }
    }
  }
}

template <class T>
void channel_affine(const T* x, std::size_t rows, std::size_t channels, std::size_t ldx,
                    const T* scale, const T* shift, bool relu, T* y, std::size_t ldy) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kWidth;
  const auto zero = V::zero();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * ldx;
    T* yr = y + r * ldy;
    std::size_t ch = 0;
    for (; ch + W <= channels; ch += W) {
      auto v = V::add(V::mul(V::load(xr + ch), V::load(scale + ch)), V::load(shift + ch));
      if (relu) v = V::max(v, zero);
      V::store(yr + ch, v);
    }
    for (; ch < channels; ++ch) {
      T v = xr[ch] * scale[ch] + shift[ch];
      if (relu) v = v > T(0) ? v : T(0);
      yr[ch] = v;
    }
  }
}

template <class T>
void adam_update(T* theta, T* m, T* v, const T* grad, std::size_t n,
                 const AdamCoefficients<T>& c) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kWidth;
  const T one_minus_b1 = T(1) - c.beta1;
  const T one_minus_b2 = T(1) - c.beta2;
  const auto b1 = V::set1(c.beta1), b2 = V::set1(c.beta2);
  const auto ob1 = V::set1(one_minus_b1), ob2 = V::set1(one_minus_b2);
  const auto bc1 = V::set1(c.bias_correction1), bc2 = V::set1(c.bias_correction2);
  const auto lr = V::set1(c.learning_rate), eps = V::set1(c.epsilon);
  std::size_t i = 0;
  for (; i + W <= n; i += W) {
    const auto g = V::load(grad + i);
    const auto mi = V::add(V::mul(b1, V::load(m + i)), V::mul(ob1, g));
    const auto vi = V::add(V::mul(b2, V::load(v + i)), V::mul(ob2, V::mul(g, g)));
    V::store(m + i, mi);
    V::store(v + i, vi);
    const auto m_hat = V::div(mi, bc1);
    const auto v_hat = V::div(vi, bc2);
    const auto step = V::div(V::mul(lr, m_hat), V::add(V::sqrt(v_hat), eps));
    V::store(theta + i, V::sub(V::load(theta + i), step));
  }
  for (; i < n; ++i) {
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
  static const Kernels<T> kTable{Isa::kAvx2, &gemm<T>, &channel_affine<T>, &adam_update<T>};
  return kTable;
}

template const Kernels<float>& table<float>();
template const Kernels<double>& table<double>();

}  // namespace drscreen::simd::avx2
