#include <arm_neon.h>

#include "bmbe/kernels.hpp"

namespace bmbe::kernels {

// Two lanes per vector, two vectors per step; padded_k is a multiple of 4.
void branch_sums_neon(const double* p, const double* log_p, const double* lik, const double* log_lik,
                      std::size_t rows, std::size_t padded_k, BranchSums* out) {
  for (std::size_t v = 0; v < rows; ++v) {
    const double* l = lik + v * padded_k;
    const double* ll = log_lik + v * padded_k;
    float64x2_t mass0 = vdupq_n_f64(0.0), mass1 = vdupq_n_f64(0.0);
    float64x2_t w0 = vdupq_n_f64(0.0), w1 = vdupq_n_f64(0.0);
    for (std::size_t d = 0; d < padded_k; d += 4) {
      const float64x2_t q0 = vmulq_f64(vld1q_f64(p + d), vld1q_f64(l + d));
      const float64x2_t q1 = vmulq_f64(vld1q_f64(p + d + 2), vld1q_f64(l + d + 2));
      mass0 = vaddq_f64(mass0, q0);
      mass1 = vaddq_f64(mass1, q1);
      w0 = vfmaq_f64(w0, q0, vaddq_f64(vld1q_f64(log_p + d), vld1q_f64(ll + d)));
      w1 = vfmaq_f64(w1, q1, vaddq_f64(vld1q_f64(log_p + d + 2), vld1q_f64(ll + d + 2)));
    }
    out[v] = {vaddvq_f64(vaddq_f64(mass0, mass1)), vaddvq_f64(vaddq_f64(w0, w1))};
  }
}

}  // namespace bmbe::kernels
