#pragma once

// Data-parallel inner loops behind the network and optimizer.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2+FMA
// variant compiled in its own translation unit. The variant is picked once at
// startup from CPUID; DRSCREEN_ISA=scalar in the environment forces the
// reference path. Elementwise kernels are bit-identical across variants; the
// AVX2 GEMM uses fused multiply-add and so differs from the reference only by
// rounding (same summation order over k).

#include <cstddef>
#include <string_view>

namespace drscreen::simd {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa) noexcept;

template <class T>
struct AdamCoefficients {
  T learning_rate;
  T beta1;
  T beta2;
  T epsilon;
  T bias_correction1;  // 1 - beta1^t
  T bias_correction2;  // 1 - beta2^t
};

/// Row-major C[m x n] (+)= A[m x k] * B[k x n]. With accumulate == false C
/// is overwritten.
template <class T>
using GemmFn = void (*)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                        const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

/// y[r, ch] = x[r, ch] * scale[ch] + shift[ch], then max(., 0) when relu is set.
template <class T>
using ChannelAffineFn = void (*)(const T* x, std::size_t rows, std::size_t channels,
                                 std::size_t ldx, const T* scale, const T* shift, bool relu, T* y,
                                 std::size_t ldy);

/// In-place Adam update over n contiguous parameters.
template <class T>
using AdamUpdateFn = void (*)(T* theta, T* m, T* v, const T* grad, std::size_t n,
                              const AdamCoefficients<T>& coeff);

template <class T>
struct Kernels {
  Isa isa;
  GemmFn<T> gemm;
  ChannelAffineFn<T> channel_affine;
  AdamUpdateFn<T> adam_update;
};

/// Best ISA the running CPU supports.
Isa detected_isa() noexcept;

/// ISA currently used by active_kernels(). Defaults to detected_isa() unless
/// DRSCREEN_ISA=scalar is set.
Isa active_isa() noexcept;

/// Throws ParameterError when the CPU (or build) lacks the requested ISA.
void set_active_isa(Isa isa);

bool isa_available(Isa isa) noexcept;

/// Kernel table for a specific ISA. Throws ParameterError if unavailable.
template <class T>
const Kernels<T>& kernels_for(Isa isa);

template <class T>
const Kernels<T>& active_kernels() {
  return kernels_for<T>(active_isa());
}

}  // namespace drscreen::simd
