#include "bmbe/question_policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>

namespace bmbe {

namespace {

constexpr double kTieTolerance = 1e-12;
// Finite stand-in for log(0); multiplied only by exact zeros.
constexpr double kLogZero = -1e300;

}  // namespace

std::string_view to_string(PolicyMode mode) { return mode == PolicyMode::global ? "global" : "focused"; }

PolicyMode policy_mode_from_string(std::string_view s) {
  if (s == "global") return PolicyMode::global;
  if (s == "focused") return PolicyMode::focused;
  throw std::invalid_argument("unknown policy mode '" + std::string(s) + "'");
}

void PolicyConfig::validate() const {
  if (mode == PolicyMode::focused && (k < 2 || !(lambda > 0.0)))
    throw std::invalid_argument("focused policy requires k >= 2 and lambda > 0");
  if (!(lambda >= 0.0)) throw std::invalid_argument("policy lambda must be nonnegative");
  if (!(theta >= 0.0 && theta <= 1.0)) throw std::invalid_argument("policy theta must lie in [0, 1]");
}

std::vector<double> predictive(const Belief& b, const KnowledgeBase& kb, std::string_view feature_id) {
  const std::size_t f = kb.feature_index(feature_id);
  const auto p = b.probabilities();
  std::vector<double> out(kb.feature(f).values.size(), 0.0);
  for (std::size_t v = 0; v < out.size(); ++v) {
    auto row = kb.likelihood_row(f, v);
    for (std::size_t d = 0; d < p.size(); ++d) out[v] += row[d] * p[d];
  }
  return out;
}

Belief counterfactual(const Belief& b, const KnowledgeBase& kb, std::string_view feature_id, std::string_view value) {
  const std::size_t f = kb.feature_index(feature_id);
  auto row = kb.log_likelihood_row(f, kb.value_index(f, value));
  std::vector<double> logs(b.size());
  auto lp = b.log_probs();
  for (std::size_t d = 0; d < logs.size(); ++d) logs[d] = lp[d] + row[d];
  const double z = log_sum_exp(logs);
  for (double& l : logs) l -= z;
  return Belief(b.shared_order(), std::move(logs));
}

EigScorer::EigScorer(const KnowledgeBase& kb, const Belief& b, kernels::BranchSumsFn kernel)
    : EigScorer(kb, b.probabilities(), kernel) {}

EigScorer::EigScorer(const KnowledgeBase& kb, std::span<const double> probabilities, kernels::BranchSumsFn kernel)
    : kb_(&kb), kernel_(kernel) {
  const std::size_t padded = kb.padded_disease_count();
  p_.assign(padded, 0.0);
  log_p_.assign(padded, 0.0);
  for (std::size_t d = 0; d < probabilities.size(); ++d) {
    p_[d] = probabilities[d];
    log_p_[d] = probabilities[d] > 0.0 ? std::log(probabilities[d]) : kLogZero;
    if (probabilities[d] > 0.0) neg_entropy_nats_ += p_[d] * log_p_[d];
  }
  entropy_bits_ = std::max(0.0, -neg_entropy_nats_ / std::log(2.0));
  scratch_.resize(kb.max_value_count());
}

double EigScorer::eig(std::size_t f) const {
  const std::size_t rows = kb_->feature(f).values.size();
  const std::size_t padded = kb_->padded_disease_count();
  if (kernel_)
    kernel_(p_.data(), log_p_.data(), kb_->likelihood_block(f), kb_->log_likelihood_block(f), rows, padded,
            scratch_.data());
  else
    kernels::branch_sums(p_.data(), log_p_.data(), kb_->likelihood_block(f), kb_->log_likelihood_block(f), rows,
                         padded, scratch_.data());
  // EIG (nats) = H(b) - sum_v P(v) H(b^v) = -sum_d p log p + sum_v (S1_v - S0_v log S0_v)
  double acc = -neg_entropy_nats_;
  for (std::size_t v = 0; v < rows; ++v) {
    const auto& s = scratch_[v];
    if (s.mass > 0.0) acc += s.weighted_log - s.mass * std::log(s.mass);
  }
  const double bits = acc / std::log(2.0);
  return bits > 0.0 ? bits : 0.0;
}

double eig(const Belief& b, const KnowledgeBase& kb, std::string_view feature_id) {
  return EigScorer(kb, b).eig(kb.feature_index(feature_id));
}

double eig_brute_force(const Belief& b, const KnowledgeBase& kb, std::string_view feature_id) {
  const std::size_t f = kb.feature_index(feature_id);
  const std::size_t k = kb.disease_count();
  const std::size_t nv = kb.feature(f).values.size();
  if (k > 8 || nv > 4) throw std::invalid_argument("eig_brute_force: instance too large (K <= 8, |V| <= 4)");

  std::vector<double> prior(k);
  for (std::size_t d = 0; d < k; ++d) prior[d] = b.probability(d);
  auto h = [](const std::vector<double>& dist) {
    double acc = 0.0;
    for (double x : dist)
      if (x > 0.0) acc -= x * std::log2(x);
    return acc;
  };

  double expected = 0.0;
  for (std::size_t v = 0; v < nv; ++v) {
    std::vector<double> joint(k);
    double pv = 0.0;
    for (std::size_t d = 0; d < k; ++d) {
      joint[d] = prior[d] * kb.likelihood(d, f, v);
      pv += joint[d];
    }
    if (pv <= 0.0) continue;
    for (double& x : joint) x /= pv;
    expected += pv * h(joint);
  }
  return std::max(0.0, h(prior) - expected);
}

bool focus_active(const Belief& b, const PolicyConfig& cfg) {
  return cfg.mode == PolicyMode::focused && b.max_probability() >= cfg.theta;
}

std::vector<FeatureScore> score_features(const Belief& b, const KnowledgeBase& kb, const AskedSet& asked,
                                         const PolicyConfig& cfg, kernels::BranchSumsFn kernel) {
  cfg.validate();
  const auto probs = b.probabilities();
  EigScorer global(kb, probs, kernel);

  const bool focused = focus_active(b, cfg);
  std::vector<double> restricted;
  if (focused) {
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(cfg.k), b.size());
    const auto top = top_k(b, k);
    restricted.assign(b.size(), 0.0);
    double total = 0.0;
    for (const auto& r : top) total += r.probability;
    for (const auto& r : top) restricted[kb.disease_index(r.disease_id)] = r.probability / total;
  }
  std::optional<EigScorer> local;
  if (focused) local.emplace(kb, restricted, kernel);

  std::vector<FeatureScore> out;
  out.reserve(kb.feature_count());
  for (std::size_t f = 0; f < kb.feature_count(); ++f) {
    const auto& id = kb.feature(f).id;
    if (asked.count(id)) continue;
    FeatureScore s;
    s.feature_id = id;
    s.index = f;
    s.eig_global = global.eig(f);
    s.eig_focused = focused ? local->eig(f) : 0.0;
    s.score = s.eig_global + (focused ? cfg.lambda * s.eig_focused : 0.0);
    out.push_back(std::move(s));
  }
  return out;
}

FeatureScore select_question(const Belief& b, const KnowledgeBase& kb, const AskedSet& asked,
                             const PolicyConfig& cfg, kernels::BranchSumsFn kernel) {
  auto scores = score_features(b, kb, asked, cfg, kernel);
  if (scores.empty()) throw std::logic_error("select_question: no unasked features remain");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    const double diff = scores[i].score - scores[best].score;
    if (diff > kTieTolerance || (diff >= -kTieTolerance && scores[i].feature_id < scores[best].feature_id))
      best = i;
  }
  return std::move(scores[best]);
}

}  // namespace bmbe
