#include "bmbe/belief.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace bmbe {

namespace {

constexpr double kNeutralTolerance = 1e-12;
constexpr double kNormTolerance = 1e-9;

double parse_reading(std::string_view s) {
  std::string tmp(s);
  char* end = nullptr;
  const double x = std::strtod(tmp.c_str(), &end);
  if (end == tmp.c_str() || *end != '\0' || !std::isfinite(x))
    throw std::invalid_argument("'" + tmp + "' is not a numeric reading");
  return x;
}

}  // namespace

double log_sum_exp(std::span<const double> xs) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

Belief::Belief(std::shared_ptr<const std::vector<std::string>> order, std::vector<double> log_probs)
    : order_(std::move(order)), log_probs_(std::move(log_probs)) {
  if (!order_ || order_->size() != log_probs_.size())
    throw std::invalid_argument("belief: disease order and probabilities differ in length");
  for (double lp : log_probs_)
    if (std::isnan(lp) || lp == std::numeric_limits<double>::infinity())
      throw std::invalid_argument("belief: NaN or +inf log-probability");
  const double z = log_sum_exp(log_probs_);
  if (!(std::abs(z) <= kNormTolerance)) throw std::invalid_argument("belief: probabilities do not sum to 1");
}

Belief Belief::from_weights(std::shared_ptr<const std::vector<std::string>> order, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("belief: weights must be finite and nonnegative");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("belief: weights sum to zero");
  std::vector<double> logs(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) logs[i] = std::log(weights[i]);
  const double z = log_sum_exp(logs);
  for (double& l : logs) l -= z;
  return Belief(std::move(order), std::move(logs));
}

double Belief::probability(std::size_t d) const { return std::exp(log_probs_.at(d)); }

std::vector<double> Belief::probabilities() const {
  std::vector<double> out(log_probs_.size());
  std::transform(log_probs_.begin(), log_probs_.end(), out.begin(), [](double l) { return std::exp(l); });
  return out;
}

std::size_t Belief::argmax() const {
  std::size_t best = 0;
  for (std::size_t d = 1; d < log_probs_.size(); ++d) {
    if (log_probs_[d] > log_probs_[best] ||
        (log_probs_[d] == log_probs_[best] && (*order_)[d] < (*order_)[best]))
      best = d;
  }
  return best;
}

// ---------------------------------------------------------------------------

std::string_view to_string(ConfidenceLabel label) {
  switch (label) {
    case ConfidenceLabel::very_likely: return "very_likely";
    case ConfidenceLabel::likely: return "likely";
    case ConfidenceLabel::uncertain: return "uncertain";
    case ConfidenceLabel::unlikely: return "unlikely";
    case ConfidenceLabel::very_unlikely: return "very_unlikely";
  }
  return "likely";
}

std::optional<ConfidenceLabel> confidence_label_from_string(std::string_view s) {
  for (auto label : kAllConfidenceLabels)
    if (to_string(label) == s) return label;
  return std::nullopt;
}

void ConfidenceScale::validate() const {
  for (double w : weights)
    if (!(w > 0.0 && w <= 1.0)) throw std::invalid_argument("confidence weights must lie in (0, 1]");
}

double map_confidence(std::string_view label, const ConfidenceScale& scale) {
  auto parsed = confidence_label_from_string(label);
  if (!parsed) throw std::invalid_argument("unknown confidence label '" + std::string(label) + "'");
  return scale.weight(*parsed);
}

std::string_view to_string(EvidenceTier tier) {
  switch (tier) {
    case EvidenceTier::pattern: return "pattern";
    case EvidenceTier::external: return "external";
    case EvidenceTier::downgrade: return "downgrade";
    case EvidenceTier::oracle: return "oracle";
    case EvidenceTier::intake: return "intake";
  }
  return "oracle";
}

EvidenceTier evidence_tier_from_string(std::string_view s) {
  for (auto t : {EvidenceTier::pattern, EvidenceTier::external, EvidenceTier::downgrade, EvidenceTier::oracle,
                 EvidenceTier::intake})
    if (to_string(t) == s) return t;
  throw std::invalid_argument("unknown evidence tier '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------

std::vector<double> observation_likelihood(const KnowledgeBase& kb, std::size_t f, std::string_view value,
                                           const UpdateOptions& options) {
  const Feature& feat = kb.feature(f);
  const std::size_t k = kb.disease_count();
  std::vector<double> out(k);

  if (feat.kind != FeatureKind::numeric) {
    auto row = kb.likelihood_row(f, kb.value_index(f, value));
    std::copy_n(row.begin(), k, out.begin());
    return out;
  }

  const double reading = parse_reading(value);
  std::vector<double> grid(feat.values.size());
  for (std::size_t v = 0; v < grid.size(); ++v) grid[v] = parse_reading(feat.values[v]);
  const double lo = feat.numeric_scale ? feat.numeric_scale->min : grid.front();
  const double hi = feat.numeric_scale ? feat.numeric_scale->max : grid.back();
  if (reading < lo || reading > hi)
    throw std::invalid_argument("reading " + std::string(value) + " outside the scale of '" + feat.id + "'");
  const double step = feat.numeric_scale ? feat.numeric_scale->step
                                         : (grid.size() > 1 ? (grid.back() - grid.front()) / double(grid.size() - 1) : 1.0);
  if (!(options.numeric_sigma > 0.0)) throw std::invalid_argument("numeric_sigma must be positive");

  // w(v, v') = exp(-(v - v')^2 / (2 sigma^2)) with distances in grid steps,
  // computed relative to the nearest grid point so that tiny sigma stays exact.
  std::vector<double> w(grid.size());
  double max_log = -INFINITY;
  for (std::size_t v = 0; v < grid.size(); ++v) {
    const double z = (reading - grid[v]) / step / options.numeric_sigma;
    w[v] = -0.5 * z * z;
    max_log = std::max(max_log, w[v]);
  }
  double total = 0.0;
  for (double& x : w) {
    x = std::exp(x - max_log);
    total += x;
  }
  for (double& x : w) x /= total;

  for (std::size_t v = 0; v < grid.size(); ++v) {
    if (w[v] == 0.0) continue;
    auto row = kb.likelihood_row(f, v);
    for (std::size_t d = 0; d < k; ++d) out[d] += w[v] * row[d];
  }
  return out;
}

Belief update_belief(const Belief& b, const KnowledgeBase& kb, const EvidenceTriple& e, const UpdateOptions& options) {
  if (e.value == kUnknownValue || e.value == kClarificationValue)
    throw std::invalid_argument("update_belief: '" + e.value + "' carries no evidence");
  if (!(e.confidence > 0.0 && e.confidence <= 1.0))
    throw std::invalid_argument("update_belief: confidence must lie in (0, 1]");
  if (b.size() != kb.disease_count()) throw std::invalid_argument("update_belief: belief/KB size mismatch");

  const std::size_t f = kb.feature_index(e.feature_id);
  const auto lik = observation_likelihood(kb, f, e.value, options);

  std::vector<double> leff(lik.size());
  double worst = 0.0;
  for (std::size_t d = 0; d < lik.size(); ++d) {
    leff[d] = e.confidence * lik[d] + (1.0 - e.confidence);
    worst = std::max(worst, std::abs(leff[d] - 1.0));
  }
  if (worst < kNeutralTolerance) return b;

  std::vector<double> logs(b.size());
  auto prev = b.log_probs();
  for (std::size_t d = 0; d < logs.size(); ++d) logs[d] = prev[d] + std::log(leff[d]);
  const double z = log_sum_exp(logs);
  for (double& l : logs) l -= z;
  return Belief(b.shared_order(), std::move(logs));
}

double entropy(const Belief& b) {
  double h = 0.0;
  for (double lp : b.log_probs()) {
    if (!std::isfinite(lp)) continue;
    h -= std::exp(lp) * lp;
  }
  return std::max(0.0, h / std::log(2.0));
}

std::vector<RankedDisease> top_k(const Belief& b, std::size_t k) {
  if (k < 1 || k > b.size()) throw std::invalid_argument("top_k: k out of range");
  std::vector<std::size_t> idx(b.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto& ids = b.disease_order();
  auto lp = b.log_probs();
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t c) {
                      if (lp[a] != lp[c]) return lp[a] > lp[c];
                      return ids[a] < ids[c];
                    });
  std::vector<RankedDisease> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({ids[idx[i]], std::exp(lp[idx[i]])});
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(PriorKind kind) {
  switch (kind) {
    case PriorKind::empirical: return "empirical";
    case PriorKind::uniform: return "uniform";
    case PriorKind::conditional: return "conditional";
  }
  return "empirical";
}

PriorKind prior_kind_from_string(std::string_view s) {
  if (s == "empirical") return PriorKind::empirical;
  if (s == "uniform") return PriorKind::uniform;
  if (s == "conditional") return PriorKind::conditional;
  throw std::invalid_argument("unknown prior strategy '" + std::string(s) + "'");
}

Belief prior(const KnowledgeBase& kb, const PriorStrategy& strategy) {
  const std::size_t k = kb.disease_count();
  std::vector<double> w(k);
  switch (strategy.tag) {
    case PriorKind::empirical:
      for (std::size_t d = 0; d < k; ++d) w[d] = kb.disease(d).prior_count;
      break;
    case PriorKind::uniform:
      std::fill(w.begin(), w.end(), 1.0);
      break;
    case PriorKind::conditional: {
      const auto key = demographic_key(strategy.age_bin, strategy.sex);
      for (std::size_t d = 0; d < k; ++d) {
        const auto& counts = kb.disease(d).demographic_counts;
        if (counts.empty())
          throw std::invalid_argument("conditional prior: disease '" + kb.disease(d).id +
                                      "' has no demographic counts");
        auto it = counts.find(key);
        if (kb.data().demographics) {
          const auto& dem = *kb.data().demographics;
          if (std::find(dem.age_bins.begin(), dem.age_bins.end(), strategy.age_bin) == dem.age_bins.end() ||
              std::find(dem.sexes.begin(), dem.sexes.end(), strategy.sex) == dem.sexes.end())
            throw std::invalid_argument("conditional prior: undeclared demographic cell '" + key + "'");
        }
        w[d] = (it == counts.end() ? 0.0 : it->second) + 1.0;
      }
      break;
    }
  }
  return Belief::from_weights(kb.disease_order(), w);
}

}  // namespace bmbe
