#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bmbe/knowledge_base.hpp"
#include "bmbe/patient_sim.hpp"
#include "bmbe/session.hpp"

namespace bmbe {

struct RunRecord {
  std::string profile_id;
  std::string disease_truth;
  SessionResult result;
};

struct RunSet {
  std::vector<RunRecord> results;
  std::string kb_ref;
  std::string config_ref;
};

struct MetricsRow {
  double tau = 0.0;
  double selective_accuracy = 1.0;
  double coverage = 0.0;
  double dhs = 0.0;
  double top1 = 0.0;
  double top3 = 0.0;
  std::size_t n_committed = 0;
  std::size_t n = 0;
};

inline constexpr const char* kMetricsCsvHeader = "tau,sel_acc,coverage,dhs,top1,top3,n_committed";

std::string metrics_csv(const std::vector<MetricsRow>& rows);
nlohmann::json to_json(const MetricsRow& row);

/// Weighted harmonic mean 1 / (alpha/sel_acc + (1-alpha)/coverage); 0 when
/// either input is 0.
double dhs(double selective_accuracy, double coverage, double alpha = 0.5);

/// Fraction of all patients whose truth is inside the committed top-k
/// (abstentions are misses). With `tau_override`, a session counts as
/// committed iff its final max posterior reaches the override.
double top_k_accuracy(const RunSet& rs, std::size_t k, std::optional<double> tau_override = std::nullopt);

struct SelectiveMetrics {
  double selective_accuracy = 1.0;  // 1.0 by convention when nothing committed
  double coverage = 0.0;
  std::size_t n_committed = 0;
};

SelectiveMetrics selective_metrics(const RunSet& rs, std::optional<double> tau_override = std::nullopt);

/// One row. `tau` labels the row; the override (if any) also drives g(x).
MetricsRow metrics_row(const RunSet& rs, double tau, std::optional<double> tau_override = std::nullopt,
                       double alpha = 0.5);

/// {0.00, 0.05, ..., 0.95}
std::vector<double> default_tau_grid();

struct SweepResult {
  std::vector<MetricsRow> rows;
  double tau_star = 0.0;  // argmax DHS, ties to the lowest tau
  MetricsRow best;
};

SweepResult sweep_threshold(const RunSet& rs, const std::vector<double>& grid, double alpha = 0.5);

struct StratumMetrics {
  std::string group;  // common | medium | rare
  std::vector<std::string> diseases;
  MetricsRow metrics;
};

/// Terciles by prior_count rank (ties by id): floor(K/3) common, floor(K/3)
/// rare, the rest medium.
std::vector<StratumMetrics> stratify_prevalence(const RunSet& rs, const KnowledgeBase& kb, double tau);

struct FailureTags {
  bool kb_failure = false;
  bool llm_fp = false;
  bool llm_we = false;
  bool inference_close = false;
  bool inference_diverged = false;
  int fp_count = 0;
  double oracle_gap = 0.0;
};

nlohmann::json to_json(const FailureTags& t);

/// Posterior after applying every finding of the profile at c = 1.
Belief oracle_posterior(const KnowledgeBase& kb, const PatientProfile& profile, const PriorStrategy& prior_strategy = {});

/// Tags for committed misdiagnoses only.
std::map<std::string, FailureTags> classify_failures(const RunSet& rs, const KnowledgeBase& kb,
                                                     const std::map<std::string, PatientProfile>& profiles,
                                                     double gamma = 0.80);

/// "No-engine" reference: always name the disease with the largest prior.
MetricsRow majority_baseline(const KnowledgeBase& kb, const std::vector<PatientProfile>& profiles, double alpha = 0.5);

// Persistence ---------------------------------------------------------------

nlohmann::json to_json(const RunRecord& r);
void save_results_jsonl(const RunSet& rs, const std::filesystem::path& path);
/// Results plus, when `traces` is given, their per-turn traces.
RunSet load_runset(const std::filesystem::path& results, const std::optional<std::filesystem::path>& traces = {});

}  // namespace bmbe
