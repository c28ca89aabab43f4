#include <cstdlib>
#include <stdexcept>
#include <string>

#include "bmbe/kernels.hpp"

namespace bmbe::kernels {

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "scalar";
}

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(BMBE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(BMBE_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() {
  static const Isa chosen = [] {
    if (const char* env = std::getenv("BMBE_ISA")) {
      const std::string want(env);
      for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon})
        if (want == to_string(isa) && isa_available(isa)) return isa;
    }
    if (isa_available(Isa::avx2)) return Isa::avx2;
    if (isa_available(Isa::neon)) return Isa::neon;
    return Isa::scalar;
  }();
  return chosen;
}

BranchSumsFn branch_sums_for(Isa isa) {
  if (!isa_available(isa)) throw std::runtime_error("ISA '" + std::string(to_string(isa)) + "' not available");
  switch (isa) {
#if defined(BMBE_HAVE_AVX2)
    case Isa::avx2: return &branch_sums_avx2;
#endif
#if defined(BMBE_HAVE_NEON)
    case Isa::neon: return &branch_sums_neon;
#endif
    default: return &branch_sums_scalar;
  }
}

}  // namespace bmbe::kernels
