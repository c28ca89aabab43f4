#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "bmbe/belief.hpp"
#include "bmbe/kernels.hpp"
#include "bmbe/knowledge_base.hpp"

namespace bmbe {

enum class PolicyMode { global, focused };

std::string_view to_string(PolicyMode mode);
PolicyMode policy_mode_from_string(std::string_view s);

struct PolicyConfig {
  PolicyMode mode = PolicyMode::global;
  int k = 3;             // focus set size
  double lambda = 0.5;   // focus weight
  double theta = 0.3;    // activation threshold on max_d b(d)

  void validate() const;
};

using AskedSet = std::set<std::string, std::less<>>;

/// P(X_f = v | evidence) for every v in V_f.
std::vector<double> predictive(const Belief& b, const KnowledgeBase& kb, std::string_view feature_id);

/// Full-confidence posterior after hypothetically observing (f, v).
Belief counterfactual(const Belief& b, const KnowledgeBase& kb, std::string_view feature_id, std::string_view value);

/// Expected entropy reduction in bits, clamped at 0.
double eig(const Belief& b, const KnowledgeBase& kb, std::string_view feature_id);

/// Same quantity by direct enumeration of every counterfactual posterior.
/// Restricted to K <= 8 and |V_f| <= 4.
double eig_brute_force(const Belief& b, const KnowledgeBase& kb, std::string_view feature_id);

/// Caches the padded belief arrays so that scoring many features against one
/// belief costs one kernel call per feature.
class EigScorer {
 public:
  EigScorer(const KnowledgeBase& kb, const Belief& b, kernels::BranchSumsFn kernel = nullptr);
  EigScorer(const KnowledgeBase& kb, std::span<const double> probabilities, kernels::BranchSumsFn kernel = nullptr);

  double eig(std::size_t f) const;
  double entropy_bits() const noexcept { return entropy_bits_; }

 private:
  const KnowledgeBase* kb_;
  kernels::BranchSumsFn kernel_;
  std::vector<double> p_;
  std::vector<double> log_p_;
  double neg_entropy_nats_ = 0.0;
  double entropy_bits_ = 0.0;
  mutable std::vector<kernels::BranchSums> scratch_;
};

struct FeatureScore {
  std::string feature_id;
  std::size_t index = 0;
  double eig_global = 0.0;
  double eig_focused = 0.0;  // EIG over the renormalized top-k (0 when inactive)
  double score = 0.0;
};

/// Whether the focused term is switched on for this belief.
bool focus_active(const Belief& b, const PolicyConfig& cfg);

/// Scores for every unasked feature, in KB declaration order.
std::vector<FeatureScore> score_features(const Belief& b, const KnowledgeBase& kb, const AskedSet& asked,
                                         const PolicyConfig& cfg, kernels::BranchSumsFn kernel = nullptr);

/// Highest-scoring unasked feature; scores within 1e-12 tie and go to the
/// smallest feature id. Throws std::logic_error when every feature was asked.
FeatureScore select_question(const Belief& b, const KnowledgeBase& kb, const AskedSet& asked,
                             const PolicyConfig& cfg, kernels::BranchSumsFn kernel = nullptr);

}  // namespace bmbe
