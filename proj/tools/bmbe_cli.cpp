// bmbe: knowledge bases, cohorts, benchmark runs, evaluation and the HTTP service.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bmbe/evaluation.hpp"
#include "bmbe/experiments.hpp"
#include "bmbe/kb_analysis.hpp"
#include "bmbe/kb_build.hpp"
#include "bmbe/kernels.hpp"
#include "bmbe/service.hpp"

using namespace bmbe;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return json::parse(in);
}

// Writes to `path`, or stdout when it is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::string fmt(double x, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

// A run directory (results.jsonl + traces.jsonl) or a results file.
RunSet load_run(const fs::path& p) {
  if (fs::is_directory(p)) {
    const auto traces = p / "traces.jsonl";
    return load_runset(p / "results.jsonl", fs::exists(traces) ? std::optional<fs::path>(traces) : std::nullopt);
  }
  return load_runset(p);
}

struct RunArgs {
  std::string kb, patients, sensor = "oracle", persona = "plain", policy = "global", out = "runs/latest";
  std::string prior = "empirical", endpoint;
  double tau = 0.9;
  int tmin = 12, tmax = 20;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool canonical = false;
};

BenchmarkOptions benchmark_options(const RunArgs& a) {
  BenchmarkOptions o;
  o.config.tau = a.tau;
  o.config.t_min = a.tmin;
  o.config.t_max = a.tmax;
  o.config.seed = a.seed;
  o.config.policy.mode = policy_mode_from_string(a.policy);
  o.config.prior_strategy.tag = prior_kind_from_string(a.prior);
  o.config.validate();
  o.sensor = sensor_mode_from_string(a.sensor);
  o.persona = default_persona(archetype_from_string(a.persona));
  o.canonical = a.canonical;
  o.threads = a.threads;
  if (!a.endpoint.empty()) o.external.endpoint = a.endpoint;
  return o;
}

void add_session_options(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("--sensor", a.sensor, "oracle | patterns | external")->capture_default_str();
  cmd->add_option("--persona", a.persona, "plain | overanxious | distrustful | dazed | verbose")->capture_default_str();
  cmd->add_option("--tau", a.tau, "Commit threshold")->capture_default_str();
  cmd->add_option("--tmin", a.tmin, "Warm-up turns")->capture_default_str();
  cmd->add_option("--tmax", a.tmax, "Turn budget")->capture_default_str();
  cmd->add_option("--policy", a.policy, "global | focused")->capture_default_str();
  cmd->add_option("--prior", a.prior, "empirical | uniform")->capture_default_str();
  cmd->add_option("--seed", a.seed, "Session seed")->capture_default_str();
  cmd->add_option("--threads", a.threads, "Worker threads")->capture_default_str();
  cmd->add_option("--endpoint", a.endpoint, "External completion endpoint (sensor=external)");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// Belief after the intake and the first `upto` turns of a trace.
Belief replay_belief(const KnowledgeBase& kb, const TraceFile& tf, int upto, AskedSet& asked) {
  UpdateOptions uo;
  uo.numeric_sigma = tf.header.config.numeric_sigma;
  Belief b = prior(kb, tf.header.config.prior_strategy);
  for (const auto& e : tf.header.intake) {
    b = update_belief(b, kb, e, uo);
    asked.insert(e.feature_id);
  }
  for (const auto& t : tf.turns) {
    if (t.turn > upto) break;
    const auto& p = t.final_attempt().parsed;
    if (t.update_applied) b = update_belief(b, kb, {t.asked_feature, p.value, p.confidence, p.tier, t.turn}, uo);
    asked.insert(t.asked_feature);
  }
  return b;
}

std::string stats_csv(const KbStats& s) {
  std::string out = "disease_id,feature_id,kl_bits\n";
  for (const auto& [key, kl] : s.per_pair_kl) out += csv_field(key.first) + "," + csv_field(key.second) + "," + fmt(kl, "%.9f") + "\n";
  return out;
}

std::string stats_feature_csv(const KbStats& s) {
  std::string out = "feature_id,variance,range\n";
  for (const auto& [f, v] : s.per_feature_variance)
    out += csv_field(f) + "," + fmt(v, "%.9f") + "," + fmt(s.per_feature_range.at(f), "%.9f") + "\n";
  return out;
}

Service* g_service = nullptr;
void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian diagnostic dialogue workbench"};
  app.require_subcommand(1);

  // kb ----------------------------------------------------------------------
  auto* kb_cmd = app.add_subcommand("kb", "Knowledge base tools");
  kb_cmd->require_subcommand(1);

  std::string schema_path, records_path, out_path;
  std::size_t top_m = 20;
  auto* kb_build = kb_cmd->add_subcommand("build", "Aggregate patient records into a KB");
  kb_build->add_option("--schema", schema_path, "Schema JSON")->required();
  kb_build->add_option("--records", records_path, "Records JSONL")->required();
  kb_build->add_option("--top-m", top_m, "Multi-choice options kept")->capture_default_str();
  kb_build->add_option("--out", out_path, "Output KB JSON")->required();
  kb_build->callback([&] {
    const auto schema = build_schema_from_json(read_json(schema_path));
    const auto records = load_records_jsonl(records_path);
    BuildOptions opts;
    opts.top_m = top_m;
    const auto data = build_from_records(schema, records, opts);
    const KnowledgeBase kb(data);
    save_kb(data, out_path);
    std::cerr << "kb " << kb.hash() << ": " << kb.disease_count() << " diseases, " << kb.feature_count()
              << " features from " << records.size() << " records\n";
  });

  std::string tables_path, elicit_schema;
  auto* kb_import = kb_cmd->add_subcommand("import-elicited", "Convert elicited probability tables to a KB");
  kb_import->add_option("--tables", tables_path, "Elicited tables JSON")->required();
  kb_import->add_option("--schema", elicit_schema, "KB JSON supplying names and question texts");
  kb_import->add_option("--out", out_path, "Output KB JSON")->required();
  kb_import->callback([&] {
    std::optional<KbData> schema;
    if (!elicit_schema.empty()) schema = kb_data_from_json(read_json(elicit_schema));
    const auto imported = import_elicited(read_json(tables_path), schema);
    for (const auto& w : imported.warnings) std::cerr << "excluded: " << w << "\n";
    const KnowledgeBase kb(imported.data);
    save_kb(imported.data, out_path);
    std::cerr << "kb " << kb.hash() << ": " << kb.disease_count() << " diseases, " << kb.feature_count()
              << " features, " << imported.warnings.size() << " entries excluded\n";
  });

  std::string kb_path, stats_format = "json";
  auto* kb_stats_cmd = kb_cmd->add_subcommand("stats", "Per-pair KL and per-feature spread");
  kb_stats_cmd->add_option("--kb", kb_path, "KB JSON")->required();
  kb_stats_cmd->add_option("--format", stats_format, "json | csv | features-csv")->capture_default_str();
  kb_stats_cmd->add_option("--out", out_path, "Output file (default stdout)");
  kb_stats_cmd->callback([&] {
    const auto stats = kb_stats(*load_kb(kb_path));
    if (stats_format == "json") emit(out_path, to_json(stats).dump(2) + "\n");
    else if (stats_format == "csv") emit(out_path, stats_csv(stats));
    else if (stats_format == "features-csv") emit(out_path, stats_feature_csv(stats));
    else throw CLI::ValidationError("--format", "expected json, csv or features-csv");
  });

  std::string kb_a, kb_b;
  auto* kb_match = kb_cmd->add_subcommand("match", "Feature matching between two KBs");
  kb_match->add_option("--a", kb_a, "First KB")->required();
  kb_match->add_option("--b", kb_b, "Second KB")->required();
  kb_match->add_option("--out", out_path, "Output file (default stdout)");
  kb_match->callback([&] { emit(out_path, to_json(match_features(*load_kb(kb_a), *load_kb(kb_b))).dump(2) + "\n"); });

  // patients ------------------------------------------------------------------
  auto* pat_cmd = app.add_subcommand("patients", "Synthetic cohorts");
  pat_cmd->require_subcommand(1);

  int per_disease = 20;
  std::uint64_t seed = 0;
  auto* pat_sample = pat_cmd->add_subcommand("sample", "Ancestral sampling per disease");
  pat_sample->add_option("--kb", kb_path, "KB JSON")->required();
  pat_sample->add_option("--per-disease", per_disease, "Patients per disease")->capture_default_str();
  pat_sample->add_option("--seed", seed, "Cohort seed")->capture_default_str();
  pat_sample->add_option("--out", out_path, "Output JSONL")->required();
  pat_sample->callback([&] {
    const auto cohort = generate_cohort(*load_kb(kb_path), per_disease, seed);
    save_patients_jsonl(cohort, out_path);
    std::cerr << cohort.size() << " patients\n";
  });

  std::string in_path;
  std::size_t n_subset = 0;
  auto* pat_strat = pat_cmd->add_subcommand("stratify", "Subset covering every disease");
  pat_strat->add_option("--in", in_path, "Cohort JSONL")->required();
  pat_strat->add_option("--n", n_subset, "Subset size")->required();
  pat_strat->add_option("--seed", seed, "Fill seed")->capture_default_str();
  pat_strat->add_option("--out", out_path, "Output JSONL")->required();
  pat_strat->callback([&] {
    const auto subset = stratified_subset(load_patients_jsonl(in_path), n_subset, seed);
    save_patients_jsonl(subset, out_path);
    std::cerr << subset.size() << " patients\n";
  });

  // run -------------------------------------------------------------------------
  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Benchmark one cohort");
  run_cmd->add_option("--kb", run_args.kb, "KB JSON")->required();
  run_cmd->add_option("--patients", run_args.patients, "Cohort JSONL")->required();
  run_cmd->add_option("--out", run_args.out, "Run directory")->capture_default_str();
  run_cmd->add_flag("--canonical", run_args.canonical, "Omit wall-clock fields");
  add_session_options(run_cmd, run_args);
  run_cmd->callback([&] {
    const auto options = benchmark_options(run_args);
    const auto kb = load_kb(run_args.kb);
    const auto patients = load_patients_jsonl(run_args.patients);
    const auto run = run_benchmark(kb, patients, options);
    write_benchmark(run, options, run_args.out, {{"cohort", run_args.patients}, {"n_patients", patients.size()}});
    const auto row = metrics_row(run.runs, options.config.tau);
    std::cerr << "sel_acc " << fmt(row.selective_accuracy, "%.4f") << " coverage " << fmt(row.coverage, "%.4f")
              << " dhs " << fmt(row.dhs, "%.4f") << " top1 " << fmt(row.top1, "%.4f") << " (" << row.n << " sessions)\n";
  });

  // eval ------------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "Evaluation reports");
  eval_cmd->require_subcommand(1);

  std::string run_path;
  double tau = 0.9;
  auto* ev_metrics = eval_cmd->add_subcommand("metrics", "One metrics row at tau");
  ev_metrics->add_option("--run", run_path, "Run directory or results.jsonl")->required();
  ev_metrics->add_option("--tau", tau, "Threshold (re-thresholds final posteriors)");
  ev_metrics->add_option("--out", out_path, "Output CSV (default stdout)");
  ev_metrics->callback([&] {
    const auto rs = load_run(run_path);
    const bool override_tau = ev_metrics->count("--tau") > 0;
    emit(out_path, metrics_csv({metrics_row(rs, tau, override_tau ? std::optional<double>(tau) : std::nullopt)}));
  });

  auto* ev_sweep = eval_cmd->add_subcommand("sweep", "Post-hoc threshold sweep over 0.00..0.95");
  ev_sweep->add_option("--run", run_path, "Run directory or results.jsonl")->required();
  ev_sweep->add_option("--out", out_path, "Output CSV (default stdout)");
  ev_sweep->callback([&] {
    const auto sweep = sweep_threshold(load_run(run_path), default_tau_grid());
    emit(out_path, metrics_csv(sweep.rows));
    std::cerr << "tau* " << fmt(sweep.tau_star, "%.2f") << " dhs " << fmt(sweep.best.dhs, "%.4f") << "\n";
  });

  auto* ev_strata = eval_cmd->add_subcommand("strata", "Metrics by prevalence tercile");
  ev_strata->add_option("--run", run_path, "Run directory or results.jsonl")->required();
  ev_strata->add_option("--kb", kb_path, "KB JSON")->required();
  ev_strata->add_option("--tau", tau, "Threshold")->capture_default_str();
  ev_strata->add_option("--out", out_path, "Output CSV (default stdout)");
  ev_strata->callback([&] {
    const auto strata = stratify_prevalence(load_run(run_path), *load_kb(kb_path), tau);
    std::string out = "group,n_diseases," + std::string(kMetricsCsvHeader) + ",n\n";
    for (const auto& s : strata) {
      auto row = metrics_csv({s.metrics});
      row = row.substr(row.find('\n') + 1);
      row.pop_back();
      out += s.group + "," + std::to_string(s.diseases.size()) + "," + row + "," + std::to_string(s.metrics.n) + "\n";
    }
    emit(out_path, out);
  });

  std::string patients_path;
  double gamma = 0.80;
  auto* ev_fail = eval_cmd->add_subcommand("failures", "Tag committed misdiagnoses");
  ev_fail->add_option("--run", run_path, "Run directory or results.jsonl")->required();
  ev_fail->add_option("--kb", kb_path, "KB JSON")->required();
  ev_fail->add_option("--patients", patients_path, "Cohort JSONL")->required();
  ev_fail->add_option("--gamma", gamma, "Oracle gap threshold")->capture_default_str();
  ev_fail->add_option("--out", out_path, "Output JSON (default stdout)");
  ev_fail->callback([&] {
    std::map<std::string, PatientProfile> profiles;
    for (auto& p : load_patients_jsonl(patients_path)) profiles.emplace(p.id, std::move(p));
    const auto tags = classify_failures(load_run(run_path), *load_kb(kb_path), profiles, gamma);
    json out = json::object();
    json counts = {{"kb_failure", 0}, {"llm_fp", 0}, {"llm_we", 0}, {"inference_close", 0}, {"inference_diverged", 0}};
    for (const auto& [id, t] : tags) {
      out[id] = to_json(t);
      counts["kb_failure"] = counts["kb_failure"].get<int>() + t.kb_failure;
      counts["llm_fp"] = counts["llm_fp"].get<int>() + t.llm_fp;
      counts["llm_we"] = counts["llm_we"].get<int>() + t.llm_we;
      counts["inference_close"] = counts["inference_close"].get<int>() + t.inference_close;
      counts["inference_diverged"] = counts["inference_diverged"].get<int>() + t.inference_diverged;
    }
    emit(out_path, json{{"gamma", gamma}, {"counts", counts}, {"sessions", out}}.dump(2) + "\n");
  });

  auto* ev_base = eval_cmd->add_subcommand("baseline", "Majority-guess reference on a cohort");
  ev_base->add_option("--kb", kb_path, "KB JSON")->required();
  ev_base->add_option("--patients", patients_path, "Cohort JSONL")->required();
  ev_base->add_option("--out", out_path, "Output CSV (default stdout)");
  ev_base->callback([&] {
    emit(out_path, metrics_csv({majority_baseline(*load_kb(kb_path), load_patients_jsonl(patients_path))}));
  });

  RunArgs scale_args;
  std::string sizes_arg = "2,5,10", seeds_arg = "0,1,2";
  auto* ev_scale = eval_cmd->add_subcommand("scaling", "Top-1 accuracy on random disease subsets");
  ev_scale->add_option("--kb", scale_args.kb, "KB JSON")->required();
  ev_scale->add_option("--sizes", sizes_arg, "Comma-separated subset sizes")->capture_default_str();
  ev_scale->add_option("--seeds", seeds_arg, "Comma-separated subset seeds")->capture_default_str();
  ev_scale->add_option("--out", out_path, "Output CSV (default stdout)");
  add_session_options(ev_scale, scale_args);
  ev_scale->callback([&] {
    std::vector<std::size_t> sizes;
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split_list(sizes_arg)) sizes.push_back(std::stoul(s));
    for (const auto& s : split_list(seeds_arg)) seeds.push_back(std::stoull(s));
    scale_args.canonical = true;
    const auto rows = scaling_experiment(load_kb(scale_args.kb), sizes, seeds, benchmark_options(scale_args));
    std::string out = "size,seed,top1,n\n";
    for (const auto& r : rows)
      out += std::to_string(r.size) + "," + std::to_string(r.seed) + "," + fmt(r.top1) + "," + std::to_string(r.n) + "\n";
    emit(out_path, out);
  });

  RunArgs cross_args;
  std::string foreign_path;
  auto* ev_cross = eval_cmd->add_subcommand("cross-kb", "Foreign-KB patients through a native KB");
  ev_cross->add_option("--native", cross_args.kb, "Native KB")->required();
  ev_cross->add_option("--foreign", foreign_path, "Foreign KB")->required();
  ev_cross->add_option("--patients", cross_args.patients, "Foreign cohort JSONL")->required();
  ev_cross->add_option("--out", out_path, "Output JSON (default stdout)");
  add_session_options(ev_cross, cross_args);
  ev_cross->callback([&] {
    cross_args.canonical = true;
    const auto native = load_kb(cross_args.kb);
    const auto foreign = load_kb(foreign_path);
    const auto matching = match_features(*native, *foreign);
    const auto r = cross_kb_eval(native, *foreign, load_patients_jsonl(cross_args.patients), matching,
                                 benchmark_options(cross_args));
    json cov = json::object();
    for (const auto& [id, c] : r.per_patient_coverage) cov[id] = c;
    emit(out_path, json{{"metrics", to_json(r.metrics)},
                        {"matching", to_json(matching)},
                        {"mean_feature_coverage", r.mean_feature_coverage},
                        {"per_patient_coverage", cov}}
                           .dump(2) +
                       "\n");
  });

  // policy ------------------------------------------------------------------------
  auto* pol_cmd = app.add_subcommand("policy", "Question policy diagnostics");
  pol_cmd->require_subcommand(1);
  std::string session_ref, store_dir = "bmbe_store";
  int upto = std::numeric_limits<int>::max();
  auto* pol_score = pol_cmd->add_subcommand("score", "Full EIG table for a session state as CSV");
  pol_score->add_option("--session", session_ref, "Trace JSONL path or a session id in --store")->required();
  pol_score->add_option("--kb", kb_path, "KB JSON")->required();
  pol_score->add_option("--store", store_dir, "Service store directory")->capture_default_str();
  pol_score->add_option("--turn", upto, "Score the state after this many turns (default: last)");
  pol_score->add_option("--out", out_path, "Output CSV (default stdout)");
  pol_score->callback([&] {
    fs::path path = session_ref;
    if (!fs::exists(path)) path = fs::path(store_dir) / "sessions" / (session_ref + ".jsonl");
    const auto tf = read_trace(path);
    const auto kb = load_kb(kb_path);
    if (tf.header.kb_hash != kb->hash()) throw std::runtime_error("trace was recorded against a different KB");
    AskedSet asked;
    const auto b = replay_belief(*kb, tf, upto, asked);
    const auto& policy = tf.header.config.policy;
    const auto scores = score_features(b, *kb, asked, policy);
    std::string out = "feature_id,eig_global,eig_focused,score,selected\n";
    const auto pick = asked.size() < kb->feature_count() ? select_question(b, *kb, asked, policy).feature_id : "";
    for (const auto& s : scores)
      out += csv_field(s.feature_id) + "," + fmt(s.eig_global, "%.12f") + "," + fmt(s.eig_focused, "%.12f") + "," +
             fmt(s.score, "%.12f") + "," + (s.feature_id == pick ? "1" : "0") + "\n";
    emit(out_path, out);
  });

  // serve -------------------------------------------------------------------------
  std::string host = "127.0.0.1", runs_dir = "runs", token, endpoint;
  int port = 8080;
  std::vector<std::string> preload;
  auto* serve = app.add_subcommand("serve", "HTTP service for live sessions and run artifacts");
  serve->add_option("--port", port, "Port")->capture_default_str();
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--store", store_dir, "Session and KB store")->capture_default_str();
  serve->add_option("--runs", runs_dir, "Run directories served under /runs")->capture_default_str();
  serve->add_option("--kb", preload, "Register KBs at start, as id=path");
  serve->add_option("--endpoint", endpoint, "External completion endpoint (enables the external client)");
  serve->callback([&] {
    ServiceOptions opts;
    opts.store_dir = store_dir;
    opts.runs_dir = runs_dir;
    if (const char* t = std::getenv("BMBE_TOKEN")) opts.bearer_token = t;
    if (!endpoint.empty()) {
      opts.external.endpoint = endpoint;
      opts.external.enabled = true;
    }
    Service service(opts);
    for (const auto& spec : preload) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos) throw CLI::ValidationError("--kb", "expected id=path");
      service.register_kb(spec.substr(0, eq), load_kb(spec.substr(eq + 1)));
    }
    g_service = &service;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "listening on " << host << ":" << port << " (" << service.session_count() << " sessions restored, kernel "
              << kernels::to_string(kernels::active_isa()) << ")\n";
    if (!service.listen(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    g_service = nullptr;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "bmbe: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
