#include <doctest.h>

#include <numeric>

#include "bmbe/experiments.hpp"
#include "test_support.hpp"

using namespace bmbe;
using namespace bmbe::testing;

namespace {

// Ten diseases, each owning three features at 100/0 counts (101/102 after smoothing).
std::shared_ptr<const KnowledgeBase> sharp_separable_kb() {
  auto data = load_kb(fixture("separable_kb.json"))->data();
  for (auto& [d, row] : data.counts)
    for (auto& [f, counts] : row) {
      const bool own = counts.at("yes") > 50;
      counts = {{"yes", own ? 100.0 : 0.0}, {"no", own ? 0.0 : 100.0}};
    }
  return make_kb(data);
}

BenchmarkOptions oracle_options(double tau = 0.9) {
  BenchmarkOptions o;
  o.sensor = SensorMode::oracle;
  o.config.tau = tau;
  o.config.t_min = 0;
  o.canonical = true;
  return o;
}

}  // namespace

TEST_CASE("oracle accuracy") {
  SUBCASE("a near-deterministic separable KB is fully identifiable") {
    const auto kb = sharp_separable_kb();
    const auto acc = oracle_accuracy(kb, generate_cohort(*kb, 10, 0));
    CHECK(acc.top1 == 1.0);
    CHECK(acc.top3 == 1.0);
  }
  SUBCASE("twins split the credit") {
    const auto kb = load_kb(fixture("twin_kb.json"));
    std::vector<PatientProfile> twins;
    for (const auto& p : generate_cohort(*kb, 200, 0))
      if (p.disease_id == "d_alpha" || p.disease_id == "d_beta") twins.push_back(p);
    REQUIRE(twins.size() == 400);
    const auto acc = oracle_accuracy(kb, twins);
    MESSAGE("twin top1 = " << acc.top1);
    CHECK(std::abs(acc.top1 - 0.5) <= 0.05);
    CHECK(acc.top3 >= 0.95);
  }
}

TEST_CASE("benchmark output order and thread independence") {
  const auto kb = load_kb(fixture("separable_kb.json"));
  const auto patients = generate_cohort(*kb, 3, 5);
  auto o = oracle_options();
  o.sensor = SensorMode::patterns;
  o.persona = default_persona(Archetype::dazed);
  const auto one = run_benchmark(kb, patients, o);
  o.threads = 4;
  const auto four = run_benchmark(kb, patients, o);
  REQUIRE(one.runs.results.size() == patients.size());
  for (std::size_t i = 0; i < patients.size(); ++i) CHECK(one.runs.results[i].profile_id == patients[i].id);
  CHECK(traces_jsonl(one) == traces_jsonl(four));
}

TEST_CASE("disease scaling") {
  const auto kb = load_kb(fixture("separable_kb.json"));
  const auto o = oracle_options();

  SUBCASE("size K is the full-KB run on the same cohort") {
    const auto rows = scaling_experiment(kb, {10}, {3}, o);
    REQUIRE(rows.size() == 1);
    const auto cohort = generate_cohort(*kb, 1, derive_seed(3, "cohort", 10));
    const auto full = run_benchmark(kb, cohort, o);
    CHECK(rows[0].top1 == top_k_accuracy(full.runs, 1));
    CHECK(rows[0].n == 10);
  }
  SUBCASE("size 1 is trivially right") {
    for (const auto& r : scaling_experiment(kb, {1}, {0, 1, 2}, o)) CHECK(r.top1 == 1.0);
  }
  SUBCASE("top-1 is stable between 4 and 8 diseases") {
    // Project defaults: tau 0.9, warm-up 12, budget 20.
    BenchmarkOptions d;
    d.canonical = true;
    std::vector<std::uint64_t> seeds(20);
    std::iota(seeds.begin(), seeds.end(), 0);
    const auto rows = scaling_experiment(kb, {4, 8}, seeds, d);
    double hits[2] = {0, 0}, n[2] = {0, 0};
    for (const auto& r : rows) {
      const int i = r.size == 8;
      hits[i] += r.top1 * double(r.n);
      n[i] += double(r.n);
    }
    const double t4 = hits[0] / n[0], t8 = hits[1] / n[1];
    MESSAGE("top1 at 4: " << t4 << ", at 8: " << t8);
    CHECK(std::abs(t4 - t8) <= 0.05);
  }
  CHECK_THROWS_AS(scaling_experiment(kb, {11}, {0}, o), std::invalid_argument);
  CHECK_THROWS_AS(scaling_experiment(kb, {0}, {0}, o), std::invalid_argument);
}

TEST_CASE("cross-KB transfer") {
  const auto a = load_kb(fixture("mixed_a_kb.json"));
  const auto b = load_kb(fixture("mixed_b_kb.json"));
  const auto o = oracle_options(0.6);

  SUBCASE("identical KBs") {
    const auto patients = generate_cohort(*a, 10, 1);
    const auto r = cross_kb_eval(a, *a, patients, match_features(*a, *a), o);
    CHECK(r.mean_feature_coverage == 1.0);
    const auto native = metrics_row(run_benchmark(a, patients, o).runs, 0.6);
    CHECK(r.metrics.dhs == native.dhs);
    CHECK(r.metrics.top1 == native.top1);
    CHECK(r.metrics.coverage == native.coverage);
  }
  SUBCASE("half the features shared") {
    const auto m = match_features(*a, *b);
    CHECK(m.shared.size() == 4);
    const auto r = cross_kb_eval(a, *b, generate_cohort(*b, 20, 2), m, o);
    CHECK(r.mean_feature_coverage == doctest::Approx(0.5).epsilon(1e-12));
    for (const auto& [id, c] : r.per_patient_coverage) CHECK(c == 0.5);
  }
  SUBCASE("no matching at all leaves the prior in charge") {
    const auto patients = generate_cohort(*b, 5, 3);
    const auto r = cross_kb_eval(a, *b, patients, FeatureMatching{}, o);
    CHECK(r.mean_feature_coverage == 0.0);
    // Prior 30:20:10 never reaches 0.6, so everything abstains.
    CHECK(r.metrics.coverage == 0.0);
    CHECK(r.metrics.top1 == 0.0);
  }
}
