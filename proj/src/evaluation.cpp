#include "bmbe/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace bmbe {

namespace {

void require_nonempty(const RunSet& rs) {
  if (rs.results.empty()) throw std::invalid_argument("empty run set");
}

bool committed(const SessionResult& r, std::optional<double> tau_override) {
  if (tau_override) return r.final_max_posterior >= *tau_override;
  return r.outcome == Outcome::committed;
}

// 1-based rank of the truth in the final ranking; 0 when missing.
std::size_t truth_rank(const RunRecord& rec) {
  const auto& ranking = rec.result.final_ranking;
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (ranking[i].disease_id == rec.disease_truth) return i + 1;
  return 0;
}

std::string fmt(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

}  // namespace

double dhs(double selective_accuracy, double coverage, double alpha) {
  if (!(selective_accuracy >= 0.0 && selective_accuracy <= 1.0) || !(coverage >= 0.0 && coverage <= 1.0) ||
      !(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("dhs: inputs must lie in [0, 1]");
  if (selective_accuracy == 0.0 || coverage == 0.0) return 0.0;
  return 1.0 / (alpha / selective_accuracy + (1.0 - alpha) / coverage);
}

double top_k_accuracy(const RunSet& rs, std::size_t k, std::optional<double> tau_override) {
  require_nonempty(rs);
  if (k < 1) throw std::invalid_argument("top_k_accuracy: k must be at least 1");
  std::size_t hits = 0;
  for (const auto& rec : rs.results) {
    if (!committed(rec.result, tau_override)) continue;
    const auto rank = truth_rank(rec);
    if (rank >= 1 && rank <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rs.results.size());
}

SelectiveMetrics selective_metrics(const RunSet& rs, std::optional<double> tau_override) {
  require_nonempty(rs);
  SelectiveMetrics m;
  std::size_t correct = 0;
  for (const auto& rec : rs.results) {
    if (!committed(rec.result, tau_override)) continue;
    ++m.n_committed;
    if (truth_rank(rec) == 1) ++correct;
  }
  m.coverage = static_cast<double>(m.n_committed) / static_cast<double>(rs.results.size());
  m.selective_accuracy = m.n_committed == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(m.n_committed);
  return m;
}

MetricsRow metrics_row(const RunSet& rs, double tau, std::optional<double> tau_override, double alpha) {
  const auto sm = selective_metrics(rs, tau_override);
  MetricsRow row;
  row.tau = tau;
  row.selective_accuracy = sm.selective_accuracy;
  row.coverage = sm.coverage;
  row.dhs = dhs(sm.selective_accuracy, sm.coverage, alpha);
  row.top1 = top_k_accuracy(rs, 1, tau_override);
  row.top3 = top_k_accuracy(rs, 3, tau_override);
  row.n_committed = sm.n_committed;
  row.n = rs.results.size();
  return row;
}

std::vector<double> default_tau_grid() {
  std::vector<double> grid;
  for (int i = 0; i < 20; ++i) grid.push_back(i / 20.0);
  return grid;
}

SweepResult sweep_threshold(const RunSet& rs, const std::vector<double>& grid, double alpha) {
  if (grid.empty()) throw std::invalid_argument("sweep_threshold: empty grid");
  SweepResult out;
  for (double tau : grid) out.rows.push_back(metrics_row(rs, tau, tau, alpha));
  // Lowest tau wins ties, whatever order the grid came in.
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.rows.size(); ++i) {
    const auto& a = out.rows[i];
    const auto& b = out.rows[best];
    if (a.dhs > b.dhs || (a.dhs == b.dhs && a.tau < b.tau)) best = i;
  }
  out.best = out.rows[best];
  out.tau_star = out.best.tau;
  return out;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& r : rows)
    out += fmt(r.tau, 2) + "," + fmt(r.selective_accuracy, 6) + "," + fmt(r.coverage, 6) + "," + fmt(r.dhs, 6) + "," +
           fmt(r.top1, 6) + "," + fmt(r.top3, 6) + "," + std::to_string(r.n_committed) + "\n";
  return out;
}

nlohmann::json to_json(const MetricsRow& r) {
  return {{"tau", r.tau},   {"sel_acc", r.selective_accuracy}, {"coverage", r.coverage},       {"dhs", r.dhs},
          {"top1", r.top1}, {"top3", r.top3},                  {"n_committed", r.n_committed}, {"n", r.n}};
}

// ---------------------------------------------------------------------------

std::vector<StratumMetrics> stratify_prevalence(const RunSet& rs, const KnowledgeBase& kb, double tau) {
  const std::size_t k = kb.disease_count();
  if (k < 3) throw std::invalid_argument("stratify_prevalence needs at least 3 diseases");
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& da = kb.disease(a);
    const auto& db = kb.disease(b);
    if (da.prior_count != db.prior_count) return da.prior_count > db.prior_count;
    return da.id < db.id;
  });
  const std::size_t third = k / 3;
  const std::size_t bounds[4] = {0, third, k - third, k};
  const char* names[3] = {"common", "medium", "rare"};

  std::vector<StratumMetrics> out;
  for (int g = 0; g < 3; ++g) {
    StratumMetrics s;
    s.group = names[g];
    for (std::size_t i = bounds[g]; i < bounds[g + 1]; ++i) s.diseases.push_back(kb.disease(idx[i]).id);
    RunSet sub;
    for (const auto& rec : rs.results)
      if (std::find(s.diseases.begin(), s.diseases.end(), rec.disease_truth) != s.diseases.end())
        sub.results.push_back(rec);
    if (sub.results.empty()) {
      s.metrics.tau = tau;
    } else {
      s.metrics = metrics_row(sub, tau);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const FailureTags& t) {
  nlohmann::json flags = nlohmann::json::array();
  if (t.kb_failure) flags.push_back("kb_failure");
  if (t.llm_fp) flags.push_back("llm_fp");
  if (t.llm_we) flags.push_back("llm_we");
  if (t.inference_close) flags.push_back("inference_close");
  if (t.inference_diverged) flags.push_back("inference_diverged");
  return {{"flags", flags}, {"fp_count", t.fp_count}, {"oracle_gap", t.oracle_gap}};
}

Belief oracle_posterior(const KnowledgeBase& kb, const PatientProfile& profile, const PriorStrategy& prior_strategy) {
  Belief b = prior(kb, prior_strategy);
  for (const auto& f : kb.features()) {
    auto it = profile.findings.find(f.id);
    if (it == profile.findings.end()) continue;
    b = update_belief(b, kb, {f.id, it->second, 1.0, EvidenceTier::oracle, 0});
  }
  return b;
}

namespace {

bool positive_value(const Feature& f, const std::string& value) {
  if (f.kind == FeatureKind::binary) return value == "yes";
  if (f.kind == FeatureKind::categorical) return false;
  return value != f.values.front();
}

}  // namespace

std::map<std::string, FailureTags> classify_failures(const RunSet& rs, const KnowledgeBase& kb,
                                                     const std::map<std::string, PatientProfile>& profiles,
                                                     double gamma) {
  std::map<std::string, FailureTags> out;
  for (const auto& rec : rs.results) {
    const auto& r = rec.result;
    if (r.outcome != Outcome::committed || !r.diagnosis || *r.diagnosis == rec.disease_truth) continue;
    auto pit = profiles.find(rec.profile_id);
    if (pit == profiles.end()) throw std::invalid_argument("no profile for result '" + rec.profile_id + "'");
    const auto& profile = pit->second;

    FailureTags tags;
    const auto top = top_k(oracle_posterior(kb, profile), 2);
    tags.oracle_gap = top[0].probability - top[1].probability;
    tags.kb_failure = tags.oracle_gap < gamma;

    for (const auto& turn : r.trace) {
      const auto& parsed = turn.final_attempt().parsed;
      if (parsed.value == kUnknownValue || parsed.value == kClarificationValue) continue;
      const auto f = kb.find_feature(turn.asked_feature);
      if (!f) continue;
      auto truth = profile.findings.find(turn.asked_feature);
      if (truth == profile.findings.end()) {
        if (positive_value(kb.feature(*f), parsed.value)) ++tags.fp_count;
      } else if (truth->second != parsed.value) {
        tags.llm_we = true;
      }
    }
    tags.llm_fp = tags.fp_count > 2;

    if (!tags.kb_failure && !tags.llm_fp && !tags.llm_we) {
      const auto rank = truth_rank(rec);
      tags.inference_close = rank >= 1 && rank <= 3;
      tags.inference_diverged = !tags.inference_close;
    }
    out[rec.profile_id] = tags;
  }
  return out;
}

MetricsRow majority_baseline(const KnowledgeBase& kb, const std::vector<PatientProfile>& profiles, double alpha) {
  if (profiles.empty()) throw std::invalid_argument("majority_baseline: no profiles");
  std::size_t best = 0;
  for (std::size_t d = 1; d < kb.disease_count(); ++d) {
    const auto& a = kb.disease(d);
    const auto& b = kb.disease(best);
    if (a.prior_count > b.prior_count || (a.prior_count == b.prior_count && a.id < b.id)) best = d;
  }
  const auto& guess = kb.disease(best).id;
  std::size_t correct = 0;
  for (const auto& p : profiles) correct += p.disease_id == guess;
  MetricsRow row;
  row.n = row.n_committed = profiles.size();
  row.coverage = 1.0;
  row.selective_accuracy = static_cast<double>(correct) / static_cast<double>(profiles.size());
  row.top1 = row.selective_accuracy;
  // Top-3 of a fixed ranking by prior mass.
  std::vector<std::size_t> idx(kb.disease_count());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (kb.disease(a).prior_count != kb.disease(b).prior_count) return kb.disease(a).prior_count > kb.disease(b).prior_count;
    return kb.disease(a).id < kb.disease(b).id;
  });
  std::size_t top3 = 0;
  for (const auto& p : profiles)
    for (std::size_t i = 0; i < std::min<std::size_t>(3, idx.size()); ++i) top3 += kb.disease(idx[i]).id == p.disease_id;
  row.top3 = static_cast<double>(top3) / static_cast<double>(profiles.size());
  row.dhs = dhs(row.selective_accuracy, row.coverage, alpha);
  return row;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const RunRecord& r) {
  auto j = to_json(r.result);
  j["disease_truth"] = r.disease_truth;
  return j;
}

void save_results_jsonl(const RunSet& rs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : rs.results) out << to_json(r).dump() << '\n';
}

namespace {

std::vector<RankedDisease> ranked_list(const nlohmann::json& j) {
  std::vector<RankedDisease> out;
  for (const auto& r : j) out.push_back({r.at("disease_id").get<std::string>(), r.at("probability").get<double>()});
  return out;
}

}  // namespace

RunSet load_runset(const std::filesystem::path& results, const std::optional<std::filesystem::path>& traces) {
  std::ifstream in(results);
  if (!in) throw std::runtime_error("cannot open " + results.string());
  RunSet rs;
  std::map<std::string, std::size_t> by_session;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    RunRecord rec;
    rec.profile_id = j.at("profile_id").get<std::string>();
    rec.disease_truth = j.at("disease_truth").get<std::string>();
    auto& r = rec.result;
    r.session_id = j.at("session_id").get<std::string>();
    r.profile_id = rec.profile_id;
    r.outcome = j.at("outcome").get<std::string>() == "committed" ? Outcome::committed : Outcome::abstained;
    if (!j.at("diagnosis").is_null()) r.diagnosis = j.at("diagnosis").get<std::string>();
    r.final_belief_top5 = ranked_list(j.at("final_belief_top5"));
    r.final_ranking = ranked_list(j.at("final_ranking"));
    r.final_max_posterior = j.at("final_max_posterior").get<double>();
    r.turns_used = j.at("turns_used").get<int>();
    for (const auto& e : j.at("intake_triples")) r.intake_triples.push_back(evidence_from_json(e));
    r.stop_reason = j.at("stop_reason").get<std::string>() == "threshold" ? StopReason::threshold
                                                                         : StopReason::budget_abstain;
    r.incomplete = j.value("incomplete", false);
    r.error = j.value("error", std::string());
    by_session[r.session_id] = rs.results.size();
    rs.results.push_back(std::move(rec));
  }
  if (traces) {
    std::ifstream tin(*traces);
    if (!tin) throw std::runtime_error("cannot open " + traces->string());
    RunRecord* current = nullptr;
    while (std::getline(tin, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (j.contains("session_id")) {
        auto it = by_session.find(j.at("session_id").get<std::string>());
        current = it == by_session.end() ? nullptr : &rs.results[it->second];
        if (current) rs.kb_ref = j.at("kb_hash").get<std::string>();
      } else if (current) {
        current->result.trace.push_back(turn_from_json(j));
      }
    }
  }
  return rs;
}

}  // namespace bmbe
