#include "xbld/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace xbld::kern {

const Kernels* avx2_kernels_impl();  // defined in kernels_avx2.cpp

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Kernels* avx2_kernels() {
  if (!cpu_supports_avx2()) return nullptr;
  return avx2_kernels_impl();
}

const Kernels& active() {
  static const Kernels* chosen = [] {
    const char* force = std::getenv("XBLD_KERNELS");
    if (force != nullptr) {
      if (std::strcmp(force, "scalar") == 0) return &scalar_kernels();
      if (std::strcmp(force, "avx2") == 0 && avx2_kernels() != nullptr)
        return avx2_kernels();
    }
    const Kernels* v = avx2_kernels();
    return v != nullptr ? v : &scalar_kernels();
  }();
  return *chosen;
}

}  // namespace xbld::kern
