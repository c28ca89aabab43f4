#pragma once

#include <map>
#include <memory>
#include <string>

#include "bmbe/evaluation.hpp"
#include "bmbe/session.hpp"
#include "test_support.hpp"

namespace bmbe::testing {

// Hand-built committed misdiagnoses, one per failure mode. Each bundles the
// KB, the true profile, a scripted free-text responder and a config under
// which the session commits to the wrong disease for the intended reason.
struct TaxonomyCase {
  std::string name;
  std::shared_ptr<const KnowledgeBase> kb;
  PatientProfile profile;
  Responder responder;
  SessionConfig config;
};

// Diseases d_a, d_b, d_c each own three features (95/5). Feature f_x leans
// towards d_b (90) over d_a (50) and d_c (5).
inline std::shared_ptr<const KnowledgeBase> taxonomy_kb() {
  KbData data;
  const std::vector<std::string> ds = {"a", "b", "c"};
  for (const auto& d : ds) data.diseases.push_back({"d_" + d, "condition " + d, 1.0, {}});
  const std::map<std::string, std::string> names = {
      {"a1", "fever"},    {"a2", "cough"},   {"a3", "sore throat"}, {"b1", "rash"},     {"b2", "itching"},
      {"b3", "swelling"}, {"c1", "nausea"},  {"c2", "vomiting"},    {"c3", "diarrhea"}};
  for (const auto& owner : ds)
    for (int i = 1; i <= 3; ++i) {
      const auto key = owner + std::to_string(i);
      data.features.push_back(binary("f_" + key, names.at(key)));
      for (const auto& d : ds) {
        const double yes = d == owner ? 95 : 5;
        data.counts["d_" + d]["f_" + key] = {{"yes", yes}, {"no", 100 - yes}};
      }
    }
  data.features.push_back(binary("f_x", "dizziness"));
  data.counts["d_a"]["f_x"] = {{"yes", 50}, {"no", 50}};
  data.counts["d_b"]["f_x"] = {{"yes", 90}, {"no", 10}};
  data.counts["d_c"]["f_x"] = {{"yes", 5}, {"no", 95}};
  return make_kb(data);
}

inline PatientProfile taxonomy_patient(bool with_x) {
  PatientProfile p{"tax-a", "d_a", 40, "female", {{"f_a1", "yes"}, {"f_a2", "yes"}, {"f_a3", "yes"}}, "", 0};
  if (with_x) p.findings["f_x"] = "yes";
  return p;
}

// Free-text replies keyed by the first letter after "f_"; "x" for f_x.
inline Responder by_group(std::map<char, std::string> replies) {
  return [replies = std::move(replies)](const Feature& f, const std::string&) {
    return Answer{replies.at(f.id[2]), std::nullopt};
  };
}

inline SessionConfig taxonomy_config(double tau, int t_min) {
  SessionConfig c;
  c.tau = tau;
  c.t_min = t_min;
  c.t_max = 20;
  return c;
}

/// Three positive answers to d_b's features the patient does not have.
inline TaxonomyCase llm_fp_case() {
  return {"llm_fp", taxonomy_kb(), taxonomy_patient(false),
          by_group({{'a', "I'm not sure."}, {'b', "Yes."}, {'c', "No."}, {'x', "I'm not sure."}}),
          taxonomy_config(0.9, 10)};
}

/// Denials of the three findings the patient does have; d_b wins the d_b/d_c tie.
inline TaxonomyCase llm_we_case() {
  return {"llm_we", taxonomy_kb(), taxonomy_patient(false),
          by_group({{'a', "No."}, {'b', "I'm not sure."}, {'c', "I'm not sure."}, {'x', "I'm not sure."}}),
          taxonomy_config(0.4, 10)};
}

/// Truthful but withheld answers: only f_x = yes gets through, which tips
/// d_b over the truth, leaving d_a at rank 2.
inline TaxonomyCase inference_close_case() {
  return {"inference_close", taxonomy_kb(), taxonomy_patient(true),
          by_group({{'a', "I'm not sure."}, {'b', "I'm not sure."}, {'c', "I'm not sure."}, {'x', "Yes."}}),
          taxonomy_config(0.6, 0)};
}

/// d_alpha and d_beta share every conditional; a d_beta patient is named d_alpha.
inline TaxonomyCase kb_failure_case() {
  auto kb = load_kb(fixture("twin_kb.json"));
  PatientProfile p{"tax-twin", "d_beta", 50, "male",
                   {{"f_fever", "yes"}, {"f_cough", "yes"}, {"f_headache", "no"}, {"f_nausea", "no"}, {"f_fatigue", "no"}},
                   "", 0};
  return {"kb_failure", kb, p, oracle_responder(p), taxonomy_config(0.45, 0)};
}

inline RunRecord run_case(const TaxonomyCase& c) {
  static const auto sensor = std::make_shared<const Sensor>();
  return {c.profile.id, c.profile.disease_id, run_session(c.kb, sensor, c.responder, c.config, c.profile, false)};
}

}  // namespace bmbe::testing
