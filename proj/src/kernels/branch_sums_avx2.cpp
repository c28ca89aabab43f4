#include <immintrin.h>

#include "bmbe/kernels.hpp"

namespace bmbe::kernels {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

}  // namespace

// Four diseases per lane group; padded_k is a multiple of 4.
void branch_sums_avx2(const double* p, const double* log_p, const double* lik, const double* log_lik,
                      std::size_t rows, std::size_t padded_k, BranchSums* out) {
  for (std::size_t v = 0; v < rows; ++v) {
    const double* l = lik + v * padded_k;
    const double* ll = log_lik + v * padded_k;
    __m256d mass = _mm256_setzero_pd();
    __m256d weighted = _mm256_setzero_pd();
    for (std::size_t d = 0; d < padded_k; d += 4) {
      const __m256d q = _mm256_mul_pd(_mm256_loadu_pd(p + d), _mm256_loadu_pd(l + d));
      const __m256d lg = _mm256_add_pd(_mm256_loadu_pd(log_p + d), _mm256_loadu_pd(ll + d));
      mass = _mm256_add_pd(mass, q);
      weighted = _mm256_fmadd_pd(q, lg, weighted);
    }
    out[v] = {hsum(mass), hsum(weighted)};
  }
}

}  // namespace bmbe::kernels
