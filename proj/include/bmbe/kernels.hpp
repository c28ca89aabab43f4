#pragma once

#include <cstddef>
#include <string_view>

namespace bmbe::kernels {

/// Per-branch sums for one hypothetical answer value v:
///   mass         = sum_d p[d] * L[v][d]
///   weighted_log = sum_d p[d] * L[v][d] * (log_p[d] + log_L[v][d])
/// `mass` is the predictive probability of v; the pair gives the branch
/// entropy without evaluating any logarithm inside the disease loop.
struct BranchSums {
  double mass = 0.0;
  double weighted_log = 0.0;
};

/// p, log_p: length `padded_k` (multiple of 4, zero padded, log_p finite).
/// lik, log_lik: `rows` x `padded_k`, row major.
using BranchSumsFn = void (*)(const double* p, const double* log_p, const double* lik, const double* log_lik,
                              std::size_t rows, std::size_t padded_k, BranchSums* out);

enum class Isa { scalar, avx2, neon };

std::string_view to_string(Isa isa);

void branch_sums_scalar(const double* p, const double* log_p, const double* lik, const double* log_lik,
                        std::size_t rows, std::size_t padded_k, BranchSums* out);
#if defined(BMBE_HAVE_AVX2)
void branch_sums_avx2(const double* p, const double* log_p, const double* lik, const double* log_lik,
                      std::size_t rows, std::size_t padded_k, BranchSums* out);
#endif
#if defined(BMBE_HAVE_NEON)
void branch_sums_neon(const double* p, const double* log_p, const double* lik, const double* log_lik,
                      std::size_t rows, std::size_t padded_k, BranchSums* out);
#endif

/// Whether this build contains `isa` and the running CPU supports it.
bool isa_available(Isa isa);

/// Best available ISA, unless BMBE_ISA=scalar|avx2|neon overrides it.
/// Resolved once per process.
Isa active_isa();

BranchSumsFn branch_sums_for(Isa isa);

inline void branch_sums(const double* p, const double* log_p, const double* lik, const double* log_lik,
                        std::size_t rows, std::size_t padded_k, BranchSums* out) {
  static const BranchSumsFn fn = branch_sums_for(active_isa());
  fn(p, log_p, lik, log_lik, rows, padded_k, out);
}

}  // namespace bmbe::kernels
