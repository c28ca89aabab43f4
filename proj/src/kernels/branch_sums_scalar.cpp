#include "bmbe/kernels.hpp"

namespace bmbe::kernels {

// Reference implementation: one sequential accumulation per row.
void branch_sums_scalar(const double* p, const double* log_p, const double* lik, const double* log_lik,
                        std::size_t rows, std::size_t padded_k, BranchSums* out) {
  for (std::size_t v = 0; v < rows; ++v) {
    const double* l = lik + v * padded_k;
    const double* ll = log_lik + v * padded_k;
    double mass = 0.0;
    double weighted = 0.0;
    for (std::size_t d = 0; d < padded_k; ++d) {
      const double q = p[d] * l[d];
      mass += q;
      weighted += q * (log_p[d] + ll[d]);
    }
    out[v] = {mass, weighted};
  }
}

}  // namespace bmbe::kernels
