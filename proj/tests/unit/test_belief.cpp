#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bmbe/belief.hpp"
#include "test_support.hpp"

using namespace bmbe;
using namespace bmbe::testing;

namespace {

// Two diseases, one binary feature with P(yes|d1) = a, P(yes|d2) = b after smoothing.
KnowledgeBase two_disease_kb(double a, double b) {
  auto counts = [](double p) {
    const double yes = p * 102.0 - 1.0;
    return std::map<std::string, double>{{"yes", yes}, {"no", 100.0 - yes}};
  };
  KbData data;
  data.diseases = {{"d1", "one", 1.0, {}}, {"d2", "two", 1.0, {}}};
  data.features = {binary("f")};
  data.counts["d1"]["f"] = counts(a);
  data.counts["d2"]["f"] = counts(b);
  return KnowledgeBase(data);
}

Belief uniform_belief(const KnowledgeBase& kb) { return prior(kb, {PriorKind::uniform, {}, {}}); }

std::vector<double> random_simplex(RngStream& rng, std::size_t k) {
  std::vector<double> w(k);
  double s = 0.0;
  for (auto& x : w) s += x = uniform01(rng) + 0.01;
  for (auto& x : w) x /= s;
  return w;
}

EvidenceTriple random_evidence(RngStream& rng, const KnowledgeBase& kb) {
  static const double cs[] = {1.0, 0.8, 0.5, 0.25, 0.05};
  const auto f = uniform_index(rng, kb.feature_count());
  const auto& feat = kb.feature(f);
  return {feat.id, feat.values[uniform_index(rng, feat.values.size())], cs[uniform_index(rng, 5)], EvidenceTier::oracle, 0};
}

}  // namespace

TEST_CASE("confidence weights") {
  CHECK(map_confidence("very_likely") == 1.00);
  CHECK(map_confidence("likely") == 0.80);
  CHECK(map_confidence("uncertain") == 0.50);
  CHECK(map_confidence("unlikely") == 0.25);
  CHECK(map_confidence("very_unlikely") == 0.05);
  CHECK_THROWS_AS(map_confidence("certainly"), std::invalid_argument);
  ConfidenceScale bad;
  bad.weights[2] = 0.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("Jeffrey update hand cases") {
  const auto kb = two_disease_kb(0.9, 0.1);
  const auto b0 = uniform_belief(kb);

  SUBCASE("c = 1 is Bayes") {
    const auto b = update_belief(b0, kb, {"f", "yes", 1.0});
    CHECK(b.probability(0) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(b.probability(1) == doctest::Approx(0.1).epsilon(1e-12));
  }
  SUBCASE("c = 0.05") {
    const auto lik = observation_likelihood(kb, 0, "yes");
    CHECK(0.05 * lik[0] + 0.95 == doctest::Approx(0.995).epsilon(1e-12));
    CHECK(0.05 * lik[1] + 0.95 == doctest::Approx(0.955).epsilon(1e-12));
    const auto b = update_belief(b0, kb, {"f", "yes", 0.05});
    CHECK(b.probability(0) == doctest::Approx(0.51026).epsilon(1e-5));
    CHECK(b.probability(1) == doctest::Approx(0.48974).epsilon(1e-5));
  }
  SUBCASE("uninformative feature leaves the belief untouched") {
    const auto flat = two_disease_kb(0.5, 0.5);
    auto b = prior(flat, {});
    for (double c : {1.0, 0.5, 0.05}) {
      const auto b2 = update_belief(b, flat, {"f", "no", c});
      CHECK(std::equal(b.log_probs().begin(), b.log_probs().end(), b2.log_probs().begin()));
    }
  }
  SUBCASE("invalid evidence") {
    CHECK_THROWS_AS(update_belief(b0, kb, {"f", "maybe", 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(update_belief(b0, kb, {"nope", "yes", 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(update_belief(b0, kb, {"f", "yes", 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(update_belief(b0, kb, {"f", "yes", 1.5}), std::invalid_argument);
  }
}

TEST_CASE("entropy") {
  const KnowledgeBase big(ddxplus_shaped_kb_data());
  CHECK(entropy(prior(big, {PriorKind::uniform, {}, {}})) == doctest::Approx(std::log2(49.0)).epsilon(1e-12));
  CHECK(entropy(prior(big, {PriorKind::uniform, {}, {}})) == doctest::Approx(5.6147).epsilon(1e-4));
  const auto kb = two_disease_kb(0.9, 0.1);
  const auto order = kb.disease_order();
  const double one_hot[] = {1.0, 0.0};
  CHECK(entropy(Belief::from_weights(order, one_hot)) == 0.0);
  const double skew[] = {0.9, 0.1};
  CHECK(entropy(Belief::from_weights(order, skew)) == doctest::Approx(0.4690).epsilon(1e-4));
}

TEST_CASE("top_k") {
  KbData data;
  for (const auto* id : {"d1", "d2", "d3"}) data.diseases.push_back({id, id, 1.0, {}});
  data.features = {binary("f")};
  const KnowledgeBase kb(data);
  CHECK(top_k(prior(kb, {PriorKind::uniform, {}, {}}), 1)[0].disease_id == "d1");
  const double w[] = {0.2, 0.5, 0.3};
  const auto b = Belief::from_weights(kb.disease_order(), w);
  const auto top = top_k(b, 2);
  REQUIRE(top.size() == 2);
  CHECK(top[0].disease_id == "d2");
  CHECK(top[1].disease_id == "d3");
  double sum = 0.0;
  for (const auto& r : top_k(b, 3)) sum += r.probability;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(b.argmax() == 1);
}

TEST_CASE("zero prior mass is absorbing and never NaN") {
  auto data = two_disease_kb(0.9, 0.1).data();
  data.diseases[1].prior_count = 0.0;
  const KnowledgeBase kb(data);
  auto b = prior(kb, {});
  b = update_belief(b, kb, {"f", "no", 1.0});
  CHECK(b.probability(0) == 1.0);
  CHECK(b.probability(1) == 0.0);
}

// ---------------------------------------------------------------------------
// Properties

TEST_CASE("property: log-space updates match direct arithmetic") {
  RngStream rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const KnowledgeBase kb(random_kb_data(rng, 2 + uniform_index(rng, 5), 1 + uniform_index(rng, 8), 3));
    const auto p0 = random_simplex(rng, kb.disease_count());
    auto b = Belief::from_weights(kb.disease_order(), p0);
    std::vector<EvidenceTriple> seq;
    for (int i = 0, n = 1 + int(uniform_index(rng, 10)); i < n; ++i) {
      seq.push_back(random_evidence(rng, kb));
      b = update_belief(b, kb, seq.back());
    }
    CHECK(sup_distance(b.probabilities(), direct_posterior(kb, p0, seq)) < 1e-9);
  }
}

TEST_CASE("property: normalization survives long runs of tiny likelihoods") {
  // 1e-6 likelihoods: counts {yes: 0, no: 100} over a 1e6-scale grid are not
  // expressible, so the feature is declared with many values instead.
  KbData data;
  data.diseases = {{"d1", "one", 1.0, {}}, {"d2", "two", 1.0, {}}, {"d3", "three", 1.0, {}}};
  Feature f{"f", "f", FeatureKind::categorical, {}, {}, {}, {}};
  for (int v = 0; v < 100; ++v) f.values.push_back("v" + std::to_string(v));
  data.features = {f};
  // P(v0|d1) = 1/200 after smoothing; repeated hard evidence drives mass to ~1e-46.
  data.counts["d1"]["f"]["v1"] = 100;
  data.counts["d2"]["f"]["v0"] = 100;
  const KnowledgeBase kb(data);
  auto b = prior(kb, {});
  for (int i = 0; i < 25; ++i) {
    b = update_belief(b, kb, {"f", "v0", 1.0});
    double sum = 0.0;
    for (double p : b.probabilities()) {
      CHECK_FALSE(std::isnan(p));
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(b.argmax() == 1);
}

TEST_CASE("property: Jeffrey endpoints") {
  RngStream rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const KnowledgeBase kb(random_kb_data(rng, 2 + uniform_index(rng, 5), 3, 3));
    const auto p0 = random_simplex(rng, kb.disease_count());
    const auto b = Belief::from_weights(kb.disease_order(), p0);
    auto e = random_evidence(rng, kb);
    e.confidence = 1.0;
    CHECK(sup_distance(update_belief(b, kb, e).probabilities(), direct_posterior(kb, p0, {e})) < 1e-12);
    e.confidence = 1e-9;
    CHECK(sup_distance(update_belief(b, kb, e).probabilities(), b.probabilities()) < 1e-8);
  }
}

TEST_CASE("property: hard evidence commutes") {
  RngStream rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const KnowledgeBase kb(random_kb_data(rng, 2 + uniform_index(rng, 5), 6, 3));
    std::vector<EvidenceTriple> seq;
    for (int i = 0; i < 5; ++i) {
      auto e = random_evidence(rng, kb);
      e.confidence = 1.0;
      seq.push_back(e);
    }
    auto run = [&](const std::vector<EvidenceTriple>& s) {
      auto b = prior(kb, {});
      for (const auto& e : s) b = update_belief(b, kb, e);
      return b.probabilities();
    };
    const auto base = run(seq);
    for (int perm = 0; perm < 5; ++perm) {
      auto shuffled = seq;
      for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[uniform_index(rng, i)]);
      CHECK(sup_distance(run(shuffled), base) < 1e-9);
    }
  }
}

TEST_CASE("numeric soft match") {
  KbData data;
  data.diseases = {{"d1", "one", 1.0, {}}, {"d2", "two", 1.0, {}}};
  Feature pain{"pain", "pain", FeatureKind::numeric, {}, {}, NumericScale{0, 10, 1}, {}};
  for (int v = 0; v <= 10; ++v) pain.values.push_back(std::to_string(v));
  data.features = {pain};
  RngStream rng(1);
  for (const auto* d : {"d1", "d2"}) data.counts[d]["pain"] = random_counts(rng, pain.values);
  const KnowledgeBase kb(data);

  SUBCASE("sigma -> 0 recovers the point likelihood on the grid") {
    UpdateOptions tight;
    tight.numeric_sigma = 1e-6;
    for (int v = 0; v <= 10; ++v) {
      const auto soft = observation_likelihood(kb, 0, std::to_string(v), tight);
      for (std::size_t d = 0; d < 2; ++d) CHECK(std::abs(soft[d] - kb.likelihood(d, 0, v)) < 1e-6);
    }
  }
  SUBCASE("off-grid readings inside the scale are accepted, outside rejected") {
    const auto mid = observation_likelihood(kb, 0, "4.5");
    for (std::size_t d = 0; d < 2; ++d) {
      double num = 0.0, den = 0.0;
      for (int v = 0; v <= 10; ++v) {
        const double w = std::exp(-0.5 * (4.5 - v) * (4.5 - v));
        num += w * kb.likelihood(d, 0, v);
        den += w;
      }
      CHECK(mid[d] == doctest::Approx(num / den).epsilon(1e-12));
    }
    CHECK_THROWS_AS(observation_likelihood(kb, 0, "11"), std::invalid_argument);
    CHECK_THROWS_AS(observation_likelihood(kb, 0, "seven"), std::invalid_argument);
  }
}
