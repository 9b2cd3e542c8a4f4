#pragma once

// Forward/backward primitives on NHWC row-major buffers. A "row" is one
// pixel of one image; `ld` is the distance between consecutive rows, which
// lets dense blocks address a channel prefix or slice of a wider buffer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "drscreen/simd/kernels.hpp"

namespace drscreen::model::detail {

struct ConvGeometry {
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int in_h = 0, in_w = 0, in_c = 0;
  int out_h = 0, out_w = 0, out_c = 0;

  std::size_t in_pixels() const noexcept { return static_cast<std::size_t>(in_h) * in_w; }
  std::size_t out_pixels() const noexcept { return static_cast<std::size_t>(out_h) * out_w; }
  std::size_t patch() const noexcept { return static_cast<std::size_t>(kernel) * kernel * in_c; }
  bool pointwise() const noexcept { return kernel == 1 && stride == 1 && pad == 0; }
};

template <class T>
void transpose(const T* a, std::size_t rows, std::size_t cols, std::size_t lda, T* out) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t r1 = std::min(rows, r0 + kTile), c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = a[r * lda + c];
      }
    }
  }
}

// Patch rows ordered [ky][kx][c], matching a [k, k, in, out] kernel.
template <class T>
void im2col(const T* in, std::size_t ld_in, const ConvGeometry& g, T* col) {
  const std::size_t patch = g.patch();
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      T* dst = col + (static_cast<std::size_t>(oy) * g.out_w + ox) * patch;
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          T* d = dst + (static_cast<std::size_t>(ky) * g.kernel + kx) * g.in_c;
          if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) {
            std::fill_n(d, g.in_c, T(0));
          } else {
            std::copy_n(in + (static_cast<std::size_t>(iy) * g.in_w + ix) * ld_in, g.in_c, d);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* din, std::size_t ld_in) {
  const std::size_t patch = g.patch();
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      const T* src = col + (static_cast<std::size_t>(oy) * g.out_w + ox) * patch;
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.in_h) continue;
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= g.in_w) continue;
          const T* s = src + (static_cast<std::size_t>(ky) * g.kernel + kx) * g.in_c;
          T* d = din + (static_cast<std::size_t>(iy) * g.in_w + ix) * ld_in;
          for (int c = 0; c < g.in_c; ++c) d[c] += s[c];
        }
      }
    }
  }
}

/// out[n images] = conv(in). Bias-free.
template <class T>
void conv_forward(const simd::Kernels<T>& k, const T* in, std::size_t ld_in, int n,
                  const ConvGeometry& g, const T* weights, T* out, std::size_t ld_out,
                  std::vector<T>& scratch) {
  if (g.pointwise()) {
    k.gemm(static_cast<std::size_t>(n) * g.in_pixels(), g.out_c, g.in_c, in, ld_in, weights,
           g.out_c, out, ld_out, false);
    return;
  }
  scratch.resize(g.out_pixels() * g.patch());
  for (int img = 0; img < n; ++img) {
    im2col(in + img * g.in_pixels() * ld_in, ld_in, g, scratch.data());
    k.gemm(g.out_pixels(), g.out_c, g.patch(), scratch.data(), g.patch(), weights, g.out_c,
           out + img * g.out_pixels() * ld_out, ld_out, false);
  }
}

/// dweights += in^T * dout; din += dout * weights^T when din is non-null.
/// dout is dense (ld = out_c).
template <class T>
void conv_backward(const simd::Kernels<T>& k, const T* in, std::size_t ld_in, int n,
                   const ConvGeometry& g, const T* weights, const T* dout, T* dweights, T* din,
                   std::size_t ld_din) {
  const std::size_t patch = g.patch();
  std::vector<T> weights_t(patch * g.out_c);
  transpose(weights, patch, g.out_c, g.out_c, weights_t.data());

  if (g.pointwise()) {
    const std::size_t rows = static_cast<std::size_t>(n) * g.in_pixels();
    std::vector<T> in_t(rows * g.in_c);
    transpose(in, rows, g.in_c, ld_in, in_t.data());
    k.gemm(g.in_c, g.out_c, rows, in_t.data(), rows, dout, g.out_c, dweights, g.out_c, true);
    if (din) k.gemm(rows, g.in_c, g.out_c, dout, g.out_c, weights_t.data(), g.in_c, din, ld_din, true);
    return;
  }
  const std::size_t out_px = g.out_pixels();
  std::vector<T> col(out_px * patch), col_t(out_px * patch);
  for (int img = 0; img < n; ++img) {
    const T* dout_img = dout + img * out_px * g.out_c;
    im2col(in + img * g.in_pixels() * ld_in, ld_in, g, col.data());
    transpose(col.data(), out_px, patch, patch, col_t.data());
    k.gemm(patch, g.out_c, out_px, col_t.data(), out_px, dout_img, g.out_c, dweights, g.out_c, true);
    if (din) {
      k.gemm(out_px, patch, g.out_c, dout_img, g.out_c, weights_t.data(), patch, col.data(), patch,
             false);
      col2im_add(col.data(), g, din + img * g.in_pixels() * ld_din, ld_din);
    }
  }
}

/// Batch-norm + ReLU state kept for the backward pass.
template <class T>
struct NormCache {
  std::size_t rows = 0;
  int channels = 0;
  std::vector<T> xhat;   // rows x channels
  std::vector<T> out;    // rows x channels, post-ReLU
  std::vector<double> mean, variance;  // biased batch statistics
  std::vector<T> inv_std;
};

template <class T>
void norm_relu_train(const simd::Kernels<T>& k, const T* x, std::size_t rows, int channels,
                     std::size_t ldx, const T* gamma, const T* beta, double eps,
                     NormCache<T>& cache) {
  cache.rows = rows;
  cache.channels = channels;
  cache.mean.assign(channels, 0.0);
  cache.variance.assign(channels, 0.0);
  cache.inv_std.resize(channels);
  cache.xhat.resize(rows * channels);
  cache.out.resize(rows * channels);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * ldx;
    for (int c = 0; c < channels; ++c) cache.mean[c] += static_cast<double>(xr[c]);
  }
  for (int c = 0; c < channels; ++c) cache.mean[c] /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * ldx;
    for (int c = 0; c < channels; ++c) {
      const double d = static_cast<double>(xr[c]) - cache.mean[c];
      cache.variance[c] += d * d;
    }
  }
  std::vector<T> mean_t(channels);
  for (int c = 0; c < channels; ++c) {
    cache.variance[c] /= static_cast<double>(rows);
    cache.inv_std[c] = static_cast<T>(1.0 / std::sqrt(cache.variance[c] + eps));
    mean_t[c] = static_cast<T>(cache.mean[c]);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * ldx;
    T* hr = cache.xhat.data() + r * channels;
    for (int c = 0; c < channels; ++c) hr[c] = (xr[c] - mean_t[c]) * cache.inv_std[c];
  }
  k.channel_affine(cache.xhat.data(), rows, channels, channels, gamma, beta, true,
                   cache.out.data(), channels);
}

/// Running-statistics normalization folded into one affine map, then ReLU.
template <class T>
void norm_relu_eval(const simd::Kernels<T>& k, const T* x, std::size_t rows, int channels,
                    std::size_t ldx, const T* gamma, const T* beta, const T* mean,
                    const T* variance, double eps, T* out) {
  std::vector<T> scale(channels), shift(channels);
  for (int c = 0; c < channels; ++c) {
    const double s = static_cast<double>(gamma[c]) / std::sqrt(static_cast<double>(variance[c]) + eps);
    scale[c] = static_cast<T>(s);
    shift[c] = static_cast<T>(static_cast<double>(beta[c]) - static_cast<double>(mean[c]) * s);
  }
  k.channel_affine(x, rows, channels, ldx, scale.data(), shift.data(), true, out, channels);
}

/// dx += d(norm_relu)/dx * dout; dgamma, dbeta accumulate.
template <class T>
void norm_relu_backward(const NormCache<T>& cache, const T* gamma, const T* dout, T* dgamma,
                        T* dbeta, T* dx, std::size_t ld_dx) {
  const std::size_t rows = cache.rows;
  const int channels = cache.channels;
  std::vector<double> sum_dz(channels, 0.0), sum_dz_xhat(channels, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* o = cache.out.data() + r * channels;
    const T* h = cache.xhat.data() + r * channels;
    const T* d = dout + r * channels;
    for (int c = 0; c < channels; ++c) {
      if (o[c] > T(0)) {
        sum_dz[c] += static_cast<double>(d[c]);
        sum_dz_xhat[c] += static_cast<double>(d[c]) * static_cast<double>(h[c]);
      }
    }
  }
  std::vector<T> coeff(channels), mean_dz(channels), mean_dzx(channels);
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (int c = 0; c < channels; ++c) {
    dgamma[c] += static_cast<T>(sum_dz_xhat[c]);
    dbeta[c] += static_cast<T>(sum_dz[c]);
    coeff[c] = gamma[c] * cache.inv_std[c];
    mean_dz[c] = static_cast<T>(sum_dz[c] * inv_rows);
    mean_dzx[c] = static_cast<T>(sum_dz_xhat[c] * inv_rows);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const T* o = cache.out.data() + r * channels;
    const T* h = cache.xhat.data() + r * channels;
    const T* d = dout + r * channels;
    T* g = dx + r * ld_dx;
    for (int c = 0; c < channels; ++c) {
      const T dz = o[c] > T(0) ? d[c] : T(0);
      g[c] += coeff[c] * (dz - mean_dz[c] - h[c] * mean_dzx[c]);
    }
  }
}

/// 3x3 stride-2 max-pool with one pixel of padding (padding never wins).
/// `argmax` (optional) records the winning input pixel per output element.
template <class T>
void maxpool_forward(const T* in, int n, int in_h, int in_w, int channels, int out_h, int out_w,
                     T* out, std::size_t ld_out, std::uint32_t* argmax) {
  for (int img = 0; img < n; ++img) {
    const T* src = in + static_cast<std::size_t>(img) * in_h * in_w * channels;
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const std::size_t out_row = (static_cast<std::size_t>(img) * out_h + oy) * out_w + ox;
        T* dst = out + out_row * ld_out;
        std::uint32_t* arg = argmax ? argmax + out_row * channels : nullptr;
        for (int c = 0; c < channels; ++c) {
          T best = T(0);
          std::uint32_t best_px = 0;
          bool found = false;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * 2 - 1 + ky;
            if (iy < 0 || iy >= in_h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * 2 - 1 + kx;
              if (ix < 0 || ix >= in_w) continue;
              const std::uint32_t px = static_cast<std::uint32_t>(iy * in_w + ix);
              const T v = src[static_cast<std::size_t>(px) * channels + c];
              if (!found || v > best) {
                best = v;
                best_px = px;
                found = true;
              }
            }
          }
          dst[c] = best;
          if (arg) arg[c] = best_px;
        }
      }
    }
  }
}

/// din (dense, zero-initialized by the caller) receives dout routed to the
/// recorded winners. dout rows are `ld_dout` apart.
template <class T>
void maxpool_backward(const T* dout, std::size_t ld_dout, int n, int in_h, int in_w, int channels,
                      int out_h, int out_w, const std::uint32_t* argmax, T* din) {
  for (int img = 0; img < n; ++img) {
    T* dst = din + static_cast<std::size_t>(img) * in_h * in_w * channels;
    for (std::size_t o = 0, npx = static_cast<std::size_t>(out_h) * out_w; o < npx; ++o) {
      const std::size_t out_row = static_cast<std::size_t>(img) * npx + o;
      const T* d = dout + out_row * ld_dout;
      const std::uint32_t* arg = argmax + out_row * channels;
      for (int c = 0; c < channels; ++c) dst[static_cast<std::size_t>(arg[c]) * channels + c] += d[c];
    }
  }
}

/// 2x2 stride-2 average pool (floor on odd sizes). Input dense.
template <class T>
void avgpool_forward(const T* in, int n, int in_h, int in_w, int channels, T* out,
                     std::size_t ld_out) {
  const int out_h = in_h / 2, out_w = in_w / 2;
  for (int img = 0; img < n; ++img) {
    const T* src = in + static_cast<std::size_t>(img) * in_h * in_w * channels;
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        T* dst = out + ((static_cast<std::size_t>(img) * out_h + oy) * out_w + ox) * ld_out;
        const T* p00 = src + (static_cast<std::size_t>(2 * oy) * in_w + 2 * ox) * channels;
        const T* p01 = p00 + channels;
        const T* p10 = p00 + static_cast<std::size_t>(in_w) * channels;
        const T* p11 = p10 + channels;
        for (int c = 0; c < channels; ++c) dst[c] = (p00[c] + p01[c] + p10[c] + p11[c]) * T(0.25);
      }
    }
  }
}

/// din (dense, zero-initialized by the caller) += avgpool'(dout).
template <class T>
void avgpool_backward(const T* dout, std::size_t ld_dout, int n, int in_h, int in_w, int channels,
                      T* din) {
  const int out_h = in_h / 2, out_w = in_w / 2;
  for (int img = 0; img < n; ++img) {
    T* dst = din + static_cast<std::size_t>(img) * in_h * in_w * channels;
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const T* d = dout + ((static_cast<std::size_t>(img) * out_h + oy) * out_w + ox) * ld_dout;
        T* p00 = dst + (static_cast<std::size_t>(2 * oy) * in_w + 2 * ox) * channels;
        T* p01 = p00 + channels;
        T* p10 = p00 + static_cast<std::size_t>(in_w) * channels;
        T* p11 = p10 + channels;
        for (int c = 0; c < channels; ++c) {
          const T g = d[c] * T(0.25);
          p00[c] += g;
          p01[c] += g;
          p10[c] += g;
          p11[c] += g;
        }
      }
    }
  }
}

template <class T>
T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

}  // namespace drscreen::model::detail
