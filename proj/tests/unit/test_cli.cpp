#include <doctest.h>

#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "bmbe/evaluation.hpp"
#include "bmbe/question_policy.hpp"
#include "cli_runner.hpp"
#include "test_support.hpp"

using namespace bmbe;
using namespace bmbe::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Workdir {
  fs::path path;
  Workdir() {
    path = fs::temp_directory_path() / ("bmbe_cli_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Workdir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return quote(path / name); }
};

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string l; std::getline(ss, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

const std::string kSep = quote(fixture("separable_kb.json"));

}  // namespace

TEST_CASE("kb commands") {
  Workdir w;
  auto r = run_cli("kb stats --kb " + kSep);
  REQUIRE(r.status == 0);
  CHECK(json::parse(r.out).contains("per_pair_kl"));
  r = run_cli("kb stats --kb " + kSep + " --format csv");
  CHECK(r.status == 0);
  CHECK(lines(r.out).size() == 1 + 10 * 30);

  r = run_cli("kb stats --kb " + quote(fixture("bad_sum_kb.json")));
  CHECK(r.status != 0);
  CHECK(r.err.find("sums to 101") != std::string::npos);

  r = run_cli("kb build --schema " + quote(fixture("build_schema.json")) + " --records " +
              quote(fixture("build_records.jsonl")) + " --out " + (w / "built.json"));
  CHECK(r.status == 0);
  CHECK(load_kb(w.path / "built.json")->disease_count() >= 2);

  r = run_cli("kb import-elicited --tables " + quote(fixture("elicited_tables.json")) + " --out " + (w / "elicited.json"));
  CHECK(r.status == 0);
  CHECK(r.err.find("d_bad") != std::string::npos);
  {
    // The offending entry is dropped; the disease stays with that feature missing.
    const auto kb = load_kb(w.path / "elicited.json");
    const auto d = kb->find_disease("d_bad");
    REQUIRE(d);
    CHECK_FALSE(kb->has_counts(*d, kb->feature_index("f_fever")));
  }

  r = run_cli("kb match --a " + quote(fixture("mixed_a_kb.json")) + " --b " + quote(fixture("mixed_b_kb.json")));
  REQUIRE(r.status == 0);
  CHECK(json::parse(r.out).at("shared").size() == 4);
}

TEST_CASE("cohort, run and eval commands") {
  Workdir w;
  REQUIRE(run_cli("patients sample --kb " + kSep + " --per-disease 4 --seed 3 --out " + (w / "cohort.jsonl")).status == 0);
  CHECK(load_patients_jsonl(w.path / "cohort.jsonl").size() == 40);
  REQUIRE(run_cli("patients stratify --in " + (w / "cohort.jsonl") + " --n 12 --seed 1 --out " + (w / "sub.jsonl")).status == 0);
  const auto sub = load_patients_jsonl(w.path / "sub.jsonl");
  CHECK(sub.size() == 12);
  CHECK(run_cli("patients stratify --in " + (w / "cohort.jsonl") + " --n 5 --out " + (w / "bad.jsonl")).status != 0);

  auto r = run_cli("run --kb " + kSep + " --patients " + (w / "cohort.jsonl") +
                   " --sensor patterns --persona dazed --tmin 4 --canonical --out " + (w / "run"));
  REQUIRE(r.status == 0);
  for (const auto* f : {"traces.jsonl", "results.jsonl", "metrics.csv", "manifest.json"}) CHECK(fs::exists(w.path / "run" / f));
  const auto csv = lines(read_text(w.path / "run" / "metrics.csv"));
  REQUIRE(csv.size() == 2);
  CHECK(csv[0] == kMetricsCsvHeader);
  const auto manifest = json::parse(read_text(w.path / "run" / "manifest.json"));
  CHECK(manifest.at("n_patients") == 40);
  CHECK(read_text(w.path / "run" / "manifest.json").find("created_at") == std::string::npos);

  r = run_cli("eval metrics --run " + (w / "run") + " --tau 0.5");
  REQUIRE(r.status == 0);
  CHECK(lines(r.out).size() == 2);
  CHECK(lines(r.out)[1].rfind("0.50,", 0) == 0);

  r = run_cli("eval sweep --run " + (w / "run"));
  REQUIRE(r.status == 0);
  CHECK(lines(r.out).size() == 21);
  CHECK(r.err.find("tau*") != std::string::npos);

  r = run_cli("eval strata --run " + (w / "run") + " --kb " + kSep + " --tau 0.9");
  CHECK(r.status == 0);
  CHECK(r.out.find("common") != std::string::npos);

  r = run_cli("eval failures --run " + (w / "run") + " --kb " + kSep + " --patients " + (w / "cohort.jsonl") + " --gamma 0.8");
  REQUIRE(r.status == 0);
  const auto failures = json::parse(r.out);
  CHECK(failures.contains("counts"));

  r = run_cli("eval baseline --kb " + kSep + " --patients " + (w / "cohort.jsonl"));
  CHECK(r.status == 0);
  CHECK(r.out.find("0.1000") != std::string::npos);  // uniform priors: d00 always, 4 of 40

  r = run_cli("eval scaling --kb " + kSep + " --sizes 1,4 --seeds 0,1");
  REQUIRE(r.status == 0);
  CHECK(lines(r.out).size() == 5);
  CHECK(lines(r.out)[0] == "size,seed,top1,n");

  REQUIRE(run_cli("patients sample --kb " + quote(fixture("mixed_b_kb.json")) + " --per-disease 5 --seed 0 --out " +
                  (w / "foreign.jsonl")).status == 0);
  r = run_cli("eval cross-kb --native " + quote(fixture("mixed_a_kb.json")) + " --foreign " +
              quote(fixture("mixed_b_kb.json")) + " --patients " + (w / "foreign.jsonl"));
  REQUIRE(r.status == 0);
  CHECK(json::parse(r.out).at("mean_feature_coverage") == 0.5);
}

TEST_CASE("policy score") {
  Workdir w;
  REQUIRE(run_cli("patients sample --kb " + kSep + " --per-disease 1 --seed 9 --out " + (w / "c.jsonl")).status == 0);
  REQUIRE(run_cli("run --kb " + kSep + " --patients " + (w / "c.jsonl") + " --tau 0.99 --canonical --out " + (w / "run")).status == 0);
  // First session of the run, as its own trace file.
  const auto all = lines(read_text(w.path / "run" / "traces.jsonl"));
  std::string first;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (i > 0 && json::parse(all[i]).contains("session_id")) break;
    first += all[i] + "\n";
  }
  std::ofstream(w.path / "one.jsonl") << first;
  auto r = run_cli("policy score --session " + (w / "one.jsonl") + " --kb " + kSep + " --turn 2");
  REQUIRE(r.status == 0);
  const auto rows = lines(r.out);
  CHECK(rows[0] == "feature_id,eig_global,eig_focused,score,selected");
  int selected = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) selected += rows[i].substr(rows[i].rfind(',') + 1) == "1";
  CHECK(selected == 1);
  // The recorded turn-3 pick is the selected row.
  const auto trace = read_trace(w.path / "one.jsonl");
  REQUIRE(trace.turns.size() >= 3);
  bool found = false;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].rfind(trace.turns[2].asked_feature + ",", 0) == 0) found = rows[i].substr(rows[i].rfind(',') + 1) == "1";
  CHECK(found);
  CHECK(run_cli("policy score --session " + (w / "one.jsonl") + " --kb " + quote(fixture("twin_kb.json"))).status != 0);
}

TEST_CASE("usage errors") {
  CHECK(run_cli("").status != 0);
  CHECK(run_cli("frobnicate").status != 0);
  CHECK(run_cli("run --kb " + kSep).status != 0);
  CHECK(run_cli("run --kb " + kSep + " --patients /nonexistent.jsonl --out /tmp/x").status != 0);
}
