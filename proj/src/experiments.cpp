#include "bmbe/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <stdexcept>
#include <thread>

namespace bmbe {

std::string_view to_string(SensorMode m) {
  switch (m) {
    case SensorMode::oracle: return "oracle";
    case SensorMode::patterns: return "patterns";
    case SensorMode::external: return "external";
  }
  return "oracle";
}

SensorMode sensor_mode_from_string(std::string_view s) {
  if (s == "oracle") return SensorMode::oracle;
  if (s == "patterns") return SensorMode::patterns;
  if (s == "external") return SensorMode::external;
  throw std::invalid_argument("unknown sensor '" + std::string(s) + "'");
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::shared_ptr<const Sensor> make_sensor(const BenchmarkOptions& options) {
  std::shared_ptr<const ExternalClient> client;
  if (options.sensor == SensorMode::external) {
    auto cfg = options.external;
    cfg.enabled = true;
    client = std::make_shared<const ExternalClient>(cfg);
  }
  return std::make_shared<const Sensor>(PatternRules::shipped(), client);
}

// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace

BenchmarkRun run_benchmark(std::shared_ptr<const KnowledgeBase> kb, const std::vector<PatientProfile>& patients,
                           const BenchmarkOptions& options) {
  options.config.validate();
  options.persona.validate();
  const auto sensor = make_sensor(options);
  BenchmarkRun run;
  run.runs.kb_ref = kb->hash();
  run.runs.config_ref = to_json(options.config).dump();
  run.runs.results.resize(patients.size());
  run.headers.resize(patients.size());

  parallel_for(patients.size(), options.threads, [&](std::size_t i) {
    const auto& p = patients[i];
    const bool oracle = options.sensor == SensorMode::oracle;
    const auto responder = oracle ? oracle_responder(p)
                                  : simulated_responder(p, options.persona, derive_seed(options.config.seed, p.id));
    TraceHeader header;
    auto result = run_session(kb, sensor, responder, options.config, p, !oracle, &header);
    if (!options.canonical) header.created_at = utc_now();
    run.runs.results[i] = RunRecord{p.id, p.disease_id, std::move(result)};
    run.headers[i] = std::move(header);
  });
  return run;
}

std::string traces_jsonl(const BenchmarkRun& run) {
  std::string out;
  for (std::size_t i = 0; i < run.headers.size(); ++i) out += trace_jsonl(run.headers[i], run.runs.results[i].result.trace);
  return out;
}

void write_benchmark(const BenchmarkRun& run, const BenchmarkOptions& options, const std::filesystem::path& dir,
                     const nlohmann::json& manifest_extra) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << text;
  };
  write("traces.jsonl", traces_jsonl(run));
  save_results_jsonl(run.runs, dir / "results.jsonl");
  write("metrics.csv", metrics_csv({metrics_row(run.runs, options.config.tau)}));

  nlohmann::json manifest = {{"kb", run.runs.kb_ref},
                             {"config", to_json(options.config)},
                             {"sensor", to_string(options.sensor)},
                             {"persona", to_string(options.persona.archetype)},
                             {"seeds", {{"session", options.config.seed}}},
                             {"n_sessions", run.runs.results.size()}};
  if (manifest_extra.is_object())
    for (const auto& [k, v] : manifest_extra.items()) manifest[k] = v;
  if (!options.canonical) manifest["created_at"] = utc_now();
  write("manifest.json", manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

TopK oracle_accuracy(std::shared_ptr<const KnowledgeBase> kb, const std::vector<PatientProfile>& profiles, int t_max) {
  BenchmarkOptions options;
  options.sensor = SensorMode::oracle;
  options.config.tau = 0.0;
  options.config.t_min = t_max;
  options.config.t_max = t_max;
  options.canonical = true;
  const auto run = run_benchmark(std::move(kb), profiles, options);
  return {top_k_accuracy(run.runs, 1), top_k_accuracy(run.runs, 3)};
}

std::vector<ScalingRow> scaling_experiment(std::shared_ptr<const KnowledgeBase> kb, const std::vector<std::size_t>& sizes,
                                           const std::vector<std::uint64_t>& seeds, const BenchmarkOptions& options) {
  std::vector<ScalingRow> out;
  for (std::size_t size : sizes) {
    if (size < 1 || size > kb->disease_count())
      throw std::invalid_argument("scaling size " + std::to_string(size) + " outside [1, K]");
    for (std::uint64_t seed : seeds) {
      RngStream rng(derive_seed(seed, "subset", size));
      std::vector<std::size_t> idx(kb->disease_count());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      for (std::size_t i = 0; i < size; ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
      idx.resize(size);
      std::sort(idx.begin(), idx.end());

      if (size == 1) {
        // A single candidate: the posterior is one-hot from the start and a
        // one-disease KB is not a valid KnowledgeBase, so no session is run.
        out.push_back({size, seed, 1.0, 1});
        continue;
      }
      std::vector<std::string> ids;
      for (std::size_t d : idx) ids.push_back(kb->disease(d).id);
      auto sub = std::make_shared<const KnowledgeBase>(restrict_diseases(*kb, ids));
      const auto patients = generate_cohort(*sub, 1, derive_seed(seed, "cohort", size));
      const auto run = run_benchmark(sub, patients, options);
      out.push_back({size, seed, top_k_accuracy(run.runs, 1), patients.size()});
    }
  }
  return out;
}

CrossKbResult cross_kb_eval(std::shared_ptr<const KnowledgeBase> native, const KnowledgeBase& foreign,
                            const std::vector<PatientProfile>& foreign_patients, const FeatureMatching& matching,
                            const BenchmarkOptions& options) {
  std::map<std::string, std::string> to_native;  // foreign feature -> native feature
  for (const auto& [a, b] : matching.shared) to_native[b] = a;

  auto native_disease = [&](const std::string& foreign_id) {
    if (native->find_disease(foreign_id)) return foreign_id;
    const auto fd = foreign.find_disease(foreign_id);
    if (fd) {
      const auto name = canonical_name(foreign.disease(*fd).name);
      for (const auto& d : native->diseases())
        if (canonical_name(d.name) == name) return d.id;
    }
    return foreign_id;  // unmatched: can never be named, always a miss
  };

  CrossKbResult out;
  std::vector<PatientProfile> translated;
  double total = 0.0;
  for (const auto& p : foreign_patients) {
    PatientProfile q = p;
    q.disease_id = native_disease(p.disease_id);
    q.findings.clear();
    for (const auto& [f, v] : p.findings) {
      auto it = to_native.find(f);
      if (it == to_native.end()) continue;
      const auto nf = native->feature_index(it->second);
      if (native->find_value(nf, v)) q.findings[it->second] = v;
    }
    q.chief_complaint = chief_complaint(*native, q.findings);
    const double cov = p.findings.empty() ? 0.0 : double(q.findings.size()) / double(p.findings.size());
    out.per_patient_coverage.emplace_back(p.id, cov);
    total += cov;
    translated.push_back(std::move(q));
  }
  out.mean_feature_coverage = foreign_patients.empty() ? 0.0 : total / double(foreign_patients.size());
  const auto run = run_benchmark(native, translated, options);
  out.metrics = metrics_row(run.runs, options.config.tau);
  return out;
}

}  // namespace bmbe
