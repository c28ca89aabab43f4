#include "bmbe/kb_analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

namespace bmbe {

KbStats kb_stats(const KnowledgeBase& kb) {
  KbStats stats;
  const std::size_t k = kb.disease_count();
  for (std::size_t f = 0; f < kb.feature_count(); ++f) {
    const auto& feat = kb.feature(f);
    const double nv = static_cast<double>(feat.values.size());
    for (std::size_t d = 0; d < k; ++d) {
      if (!kb.has_counts(d, f)) continue;
      double kl = 0.0;
      for (std::size_t v = 0; v < feat.values.size(); ++v) {
        const double p = kb.likelihood(d, f, v);
        kl += p * std::log2(p * nv);
      }
      stats.per_pair_kl[{kb.disease(d).id, feat.id}] = std::max(0.0, kl);
    }
    if (feat.kind != FeatureKind::binary) continue;
    const std::size_t yes = kb.value_index(f, "yes");
    double mean = 0.0, lo = 1.0, hi = 0.0;
    for (std::size_t d = 0; d < k; ++d) {
      const double p = kb.likelihood(d, f, yes);
      mean += p;
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
    mean /= static_cast<double>(k);
    double var = 0.0;
    for (std::size_t d = 0; d < k; ++d) {
      const double dev = kb.likelihood(d, f, yes) - mean;
      var += dev * dev;
    }
    stats.per_feature_variance[feat.id] = var / static_cast<double>(k);
    stats.per_feature_range[feat.id] = hi - lo;
  }
  return stats;
}

nlohmann::json to_json(const KbStats& stats) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [key, kl] : stats.per_pair_kl)
    pairs.push_back({{"disease_id", key.first}, {"feature_id", key.second}, {"kl_bits", kl}});
  nlohmann::json features = nlohmann::json::array();
  for (const auto& [f, var] : stats.per_feature_variance)
    features.push_back({{"feature_id", f}, {"variance", var}, {"range", stats.per_feature_range.at(f)}});
  return {{"per_pair_kl", pairs}, {"binary_features", features}};
}

std::string canonical_name(std::string_view name) {
  std::string out;
  bool pending_space = false;
  for (char c : name) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

FeatureMatching match_features(const KnowledgeBase& a, const KnowledgeBase& b) {
  FeatureMatching m;
  std::vector<bool> used(b.feature_count(), false);
  for (const auto& fa : a.features()) {
    const auto name = canonical_name(fa.name);
    for (std::size_t j = 0; j < b.feature_count(); ++j) {
      const auto& fb = b.feature(j);
      if (used[j] || fb.kind != fa.kind || canonical_name(fb.name) != name) continue;
      used[j] = true;
      m.shared.emplace_back(fa.id, fb.id);
      break;
    }
  }
  m.coverage_a_in_b = static_cast<double>(m.shared.size()) / static_cast<double>(a.feature_count());
  m.coverage_b_in_a = static_cast<double>(m.shared.size()) / static_cast<double>(b.feature_count());
  return m;
}

nlohmann::json to_json(const FeatureMatching& m) {
  nlohmann::json shared = nlohmann::json::array();
  for (const auto& [fa, fb] : m.shared) shared.push_back({{"a", fa}, {"b", fb}});
  return {{"shared", shared}, {"coverage_a_in_b", m.coverage_a_in_b}, {"coverage_b_in_a", m.coverage_b_in_a}};
}

KbData restrict_diseases(const KnowledgeBase& kb, std::span<const std::string> disease_ids) {
  std::set<std::string> keep(disease_ids.begin(), disease_ids.end());
  for (const auto& id : keep) kb.disease_index(id);
  KbData out = kb.data();
  std::erase_if(out.diseases, [&](const Disease& d) { return !keep.count(d.id); });
  std::erase_if(out.counts, [&](const auto& kv) { return !keep.count(kv.first); });
  return out;
}

}  // namespace bmbe
