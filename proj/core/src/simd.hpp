#pragma once

// Small helpers for the hot numeric kernels: a four-wide double vector and a
// macro that builds a baseline and an AVX2/FMA copy of a kernel, choosing one
// at run time.

#include <algorithm>
#include <cstddef>

#pragma GCC diagnostic ignored "-Wpsabi"

namespace faultformer::simd {

using Vec4 = double __attribute__((vector_size(32)));

[[gnu::always_inline]] inline Vec4 load4(const double* p) {
  Vec4 v;
  __builtin_memcpy(&v, p, sizeof v);
  return v;
}

[[gnu::always_inline]] inline void store4(double* p, Vec4 v) { __builtin_memcpy(p, &v, sizeof v); }

[[gnu::always_inline]] inline void store4(double* p, Vec4 v, std::size_t n) {
  double tmp[4];
  __builtin_memcpy(tmp, &v, sizeof v);
  std::copy_n(tmp, n, p);
}

#if defined(__GNUC__) && defined(__x86_64__)
inline bool use_avx2() {
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported;
}

#define FAULTFORMER_KERNEL(name, params, args)                                      \
  __attribute__((target("avx2,fma"))) void name##_avx2 params { name##_body args; } \
  void name##_base params { name##_body args; }                                     \
  void name params {                                                                \
    if (::faultformer::simd::use_avx2()) {                                          \
      name##_avx2 args;                                                             \
    } else {                                                                        \
      name##_base args;                                                             \
    }                                                                               \
  }
#else
#define FAULTFORMER_KERNEL(name, params, args) \
  void name params { name##_body args; }
#endif

}  // namespace faultformer::simd
