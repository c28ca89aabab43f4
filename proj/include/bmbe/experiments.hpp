#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "bmbe/evaluation.hpp"
#include "bmbe/kb_analysis.hpp"
#include "bmbe/session.hpp"

namespace bmbe {

enum class SensorMode { oracle, patterns, external };

std::string_view to_string(SensorMode m);
SensorMode sensor_mode_from_string(std::string_view s);

struct BenchmarkOptions {
  SessionConfig config;
  SensorMode sensor = SensorMode::oracle;
  Persona persona;
  ExternalClientConfig external;
  bool canonical = false;  // no wall-clock fields anywhere in the output
  unsigned threads = 1;
};

struct BenchmarkRun {
  RunSet runs;
  std::vector<TraceHeader> headers;
};

/// One session per profile. The oracle sensor answers with the ground truth
/// and skips the free-text intake; the other modes parse simulated persona
/// answers. Output order follows `patients` whatever the thread count.
BenchmarkRun run_benchmark(std::shared_ptr<const KnowledgeBase> kb, const std::vector<PatientProfile>& patients,
                           const BenchmarkOptions& options);

/// traces.jsonl, results.jsonl, metrics.csv and manifest.json under `dir`.
void write_benchmark(const BenchmarkRun& run, const BenchmarkOptions& options, const std::filesystem::path& dir,
                     const nlohmann::json& manifest_extra = {});

std::string traces_jsonl(const BenchmarkRun& run);

struct TopK {
  double top1 = 0.0;
  double top3 = 0.0;
};

/// KB ceiling: oracle answers and no early stop (tau = 0 with the warm-up
/// spanning the whole budget), so every session commits after t_max turns.
TopK oracle_accuracy(std::shared_ptr<const KnowledgeBase> kb, const std::vector<PatientProfile>& profiles,
                     int t_max = 20);

struct ScalingRow {
  std::size_t size = 0;
  std::uint64_t seed = 0;
  double top1 = 0.0;
  std::size_t n = 0;
};

/// Random disease subsets of each size, one patient per disease.
std::vector<ScalingRow> scaling_experiment(std::shared_ptr<const KnowledgeBase> kb, const std::vector<std::size_t>& sizes,
                                           const std::vector<std::uint64_t>& seeds, const BenchmarkOptions& options);

struct CrossKbResult {
  MetricsRow metrics;
  double mean_feature_coverage = 0.0;
  std::vector<std::pair<std::string, double>> per_patient_coverage;
};

/// Foreign patients answered through the feature matching: findings without
/// a native counterpart are invisible to the responder.
CrossKbResult cross_kb_eval(std::shared_ptr<const KnowledgeBase> native, const KnowledgeBase& foreign,
                            const std::vector<PatientProfile>& foreign_patients, const FeatureMatching& matching,
                            const BenchmarkOptions& options);

}  // namespace bmbe
