#include <atomic>
#include <cstdlib>
#include <string>

#include "drscreen/error.hpp"
#include "variants.hpp"

namespace drscreen::simd {
namespace {

Isa initial_isa() noexcept {
  if (const char* env = std::getenv("DRSCREEN_ISA")) {
    if (std::string_view(env) == "scalar") return Isa::kScalar;
  }
  return detected_isa();
}

std::atomic<Isa>& active_slot() noexcept {
  static std::atomic<Isa> slot{initial_isa()};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::kAvx2: return "avx2";
    case Isa::kScalar: break;
  }
  return "scalar";
}

Isa detected_isa() noexcept {
#if DRSCREEN_HAVE_AVX2_VARIANT
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::kAvx2;
#endif
  return Isa::kScalar;
}

bool isa_available(Isa isa) noexcept {
  return isa == Isa::kScalar || detected_isa() == isa;
}

Isa active_isa() noexcept { return active_slot().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw ParameterError("instruction set " + std::string(isa_name(isa)) +
                         " is not supported on this CPU");
  }
  active_slot().store(isa, std::memory_order_relaxed);
}

template <class T>
const Kernels<T>& kernels_for(Isa isa) {
  if (!isa_available(isa)) {
    throw ParameterError("instruction set " + std::string(isa_name(isa)) +
                         " is not supported on this CPU");
  }
#if DRSCREEN_HAVE_AVX2_VARIANT
  if (isa == Isa::kAvx2) return avx2::table<T>();
#endif
  return scalar::table<T>();
}

template const Kernels<float>& kernels_for<float>(Isa);
template const Kernels<double>& kernels_for<double>(Isa);

}  // namespace drscreen::simd
