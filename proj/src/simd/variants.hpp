#pragma once

#include "drscreen/simd/kernels.hpp"

namespace drscreen::simd {

namespace scalar {
template <class T>
const Kernels<T>& table();
}

#if defined(__x86_64__) || defined(_M_X64)
#define DRSCREEN_HAVE_AVX2_VARIANT 1
namespace avx2 {
template <class T>
const Kernels<T>& table();
}
#else
#define DRSCREEN_HAVE_AVX2_VARIANT 0
#endif

}  // namespace drscreen::simd
