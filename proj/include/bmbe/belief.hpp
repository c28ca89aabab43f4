#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bmbe/knowledge_base.hpp"

namespace bmbe {

/// Posterior over the KB's diseases, held as natural-log probabilities.
///
/// A log-probability of -inf encodes exactly zero mass (e.g. a disease with
/// prior_count 0); every other entry is finite.
class Belief {
 public:
  Belief() = default;
  Belief(std::shared_ptr<const std::vector<std::string>> order, std::vector<double> log_probs);

  /// Normalizes `weights` (nonnegative, not all zero) into a belief.
  static Belief from_weights(std::shared_ptr<const std::vector<std::string>> order, std::span<const double> weights);

  std::size_t size() const noexcept { return log_probs_.size(); }
  std::span<const double> log_probs() const noexcept { return log_probs_; }
  double log_probability(std::size_t d) const { return log_probs_.at(d); }
  double probability(std::size_t d) const;
  std::vector<double> probabilities() const;

  const std::vector<std::string>& disease_order() const { return *order_; }
  const std::shared_ptr<const std::vector<std::string>>& shared_order() const noexcept { return order_; }

  /// Index of the most probable disease; ties go to the lexicographically
  /// smallest disease id.
  std::size_t argmax() const;
  double max_probability() const { return probability(argmax()); }

 private:
  std::shared_ptr<const std::vector<std::string>> order_;
  std::vector<double> log_probs_;
};

double log_sum_exp(std::span<const double> xs);

enum class ConfidenceLabel { very_likely, likely, uncertain, unlikely, very_unlikely };

inline constexpr std::array<ConfidenceLabel, 5> kAllConfidenceLabels = {
    ConfidenceLabel::very_likely, ConfidenceLabel::likely, ConfidenceLabel::uncertain, ConfidenceLabel::unlikely,
    ConfidenceLabel::very_unlikely};

std::string_view to_string(ConfidenceLabel label);
std::optional<ConfidenceLabel> confidence_label_from_string(std::string_view s);

struct ConfidenceScale {
  std::array<double, 5> weights{1.00, 0.80, 0.50, 0.25, 0.05};

  double weight(ConfidenceLabel label) const { return weights[static_cast<std::size_t>(label)]; }
  void validate() const;
};

/// phi(label); throws std::invalid_argument for labels outside the scale.
double map_confidence(std::string_view label, const ConfidenceScale& scale = {});

enum class EvidenceTier { pattern, external, downgrade, oracle, intake };

std::string_view to_string(EvidenceTier tier);
EvidenceTier evidence_tier_from_string(std::string_view s);

inline constexpr std::string_view kUnknownValue = "unknown";
inline constexpr std::string_view kClarificationValue = "clarification";

struct EvidenceTriple {
  std::string feature_id;
  std::string value;  // value label, numeric reading, or "unknown"
  double confidence = 1.0;
  EvidenceTier tier = EvidenceTier::oracle;
  int turn = 0;
};

struct UpdateOptions {
  double numeric_sigma = 1.0;  // in grid steps
};

/// Per-disease likelihood of observing `value` for feature f. For numeric
/// features the value may be any reading inside the scale and is softened by
/// a Gaussian kernel over the grid; otherwise it is the point likelihood.
std::vector<double> observation_likelihood(const KnowledgeBase& kb, std::size_t f, std::string_view value,
                                           const UpdateOptions& options = {});

/// Jeffrey-conditioned update: L_eff(d) = c * P(v|d) + (1 - c).
Belief update_belief(const Belief& b, const KnowledgeBase& kb, const EvidenceTriple& e,
                     const UpdateOptions& options = {});

/// Shannon entropy in bits.
double entropy(const Belief& b);

struct RankedDisease {
  std::string disease_id;
  double probability = 0.0;
};

/// Descending by probability, ties by ascending disease id.
std::vector<RankedDisease> top_k(const Belief& b, std::size_t k);

// ---------------------------------------------------------------------------
// Priors

enum class PriorKind { empirical, uniform, conditional };

std::string_view to_string(PriorKind kind);
PriorKind prior_kind_from_string(std::string_view s);

struct PriorStrategy {
  PriorKind tag = PriorKind::empirical;
  std::string age_bin;  // conditional only
  std::string sex;      // conditional only
};

/// Initial belief: empirical is proportional to prior_count, uniform is 1/K,
/// conditional is proportional to demographic_counts[(age_bin, sex)] + 1.
Belief prior(const KnowledgeBase& kb, const PriorStrategy& strategy);

}  // namespace bmbe
