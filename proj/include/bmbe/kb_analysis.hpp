#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bmbe/knowledge_base.hpp"

namespace bmbe {

struct KbStats {
  // (disease_id, feature_id) -> KL(smoothed conditional || uniform) in bits,
  // for every pair with counts.
  std::map<std::pair<std::string, std::string>, double> per_pair_kl;
  // Binary features only: variance and range across diseases of P(yes|d).
  std::map<std::string, double> per_feature_variance;
  std::map<std::string, double> per_feature_range;
};

KbStats kb_stats(const KnowledgeBase& kb);
nlohmann::json to_json(const KbStats& stats);

/// Lowercased, trimmed, internal whitespace collapsed.
std::string canonical_name(std::string_view name);

struct FeatureMatching {
  std::vector<std::pair<std::string, std::string>> shared;  // (feature in a, feature in b)
  double coverage_a_in_b = 0.0;
  double coverage_b_in_a = 0.0;
};

/// Pairs features with equal canonical name and equal kind.
FeatureMatching match_features(const KnowledgeBase& a, const KnowledgeBase& b);
nlohmann::json to_json(const FeatureMatching& m);

/// Copy of the KB restricted to `disease_ids` (order preserved from the KB).
KbData restrict_diseases(const KnowledgeBase& kb, std::span<const std::string> disease_ids);

}  // namespace bmbe
