#include <fstream>
#include <sstream>
#include <stdexcept>

#include "bmbe/session.hpp"

namespace bmbe {

using nlohmann::json;

json to_json(const SessionConfig& cfg) {
  json scale = json::object();
  for (auto label : kAllConfidenceLabels) scale[std::string(to_string(label))] = cfg.confidence_scale.weight(label);
  json prior = {{"tag", to_string(cfg.prior_strategy.tag)}};
  if (cfg.prior_strategy.tag == PriorKind::conditional) {
    prior["age_bin"] = cfg.prior_strategy.age_bin;
    prior["sex"] = cfg.prior_strategy.sex;
  }
  return {{"tau", cfg.tau},
          {"t_min", cfg.t_min},
          {"t_max", cfg.t_max},
          {"policy",
           {{"mode", to_string(cfg.policy.mode)},
            {"k", cfg.policy.k},
            {"lambda", cfg.policy.lambda},
            {"theta", cfg.policy.theta}}},
          {"prior_strategy", prior},
          {"confidence_scale", scale},
          {"numeric_sigma", cfg.numeric_sigma},
          {"seed", cfg.seed}};
}

SessionConfig session_config_from_json(const json& j) {
  SessionConfig cfg;
  cfg.tau = j.value("tau", cfg.tau);
  cfg.t_min = j.value("t_min", cfg.t_min);
  cfg.t_max = j.value("t_max", cfg.t_max);
  if (j.contains("policy")) {
    const auto& p = j.at("policy");
    if (p.is_string()) {
      cfg.policy.mode = policy_mode_from_string(p.get<std::string>());
    } else {
      cfg.policy.mode = policy_mode_from_string(p.value("mode", std::string("global")));
      cfg.policy.k = p.value("k", cfg.policy.k);
      cfg.policy.lambda = p.value("lambda", cfg.policy.lambda);
      cfg.policy.theta = p.value("theta", cfg.policy.theta);
    }
  }
  if (j.contains("prior_strategy")) {
    const auto& p = j.at("prior_strategy");
    if (p.is_string()) {
      cfg.prior_strategy.tag = prior_kind_from_string(p.get<std::string>());
    } else {
      cfg.prior_strategy.tag = prior_kind_from_string(p.value("tag", std::string("empirical")));
      cfg.prior_strategy.age_bin = p.value("age_bin", std::string());
      cfg.prior_strategy.sex = p.value("sex", std::string());
    }
  }
  if (j.contains("confidence_scale")) {
    for (const auto& [key, w] : j.at("confidence_scale").items()) {
      auto label = confidence_label_from_string(key);
      if (!label) throw std::invalid_argument("unknown confidence label '" + key + "'");
      cfg.confidence_scale.weights[static_cast<std::size_t>(*label)] = w.get<double>();
    }
  }
  cfg.numeric_sigma = j.value("numeric_sigma", cfg.numeric_sigma);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

json to_json(const EvidenceTriple& e) {
  return {{"feature_id", e.feature_id},
          {"value", e.value},
          {"confidence", e.confidence},
          {"tier", to_string(e.tier)},
          {"turn", e.turn}};
}

EvidenceTriple evidence_from_json(const json& j) {
  return {j.at("feature_id").get<std::string>(), j.at("value").get<std::string>(), j.at("confidence").get<double>(),
          evidence_tier_from_string(j.value("tier", std::string("oracle"))), j.value("turn", 0)};
}

json to_json(const RankedDisease& r) { return {{"disease_id", r.disease_id}, {"probability", r.probability}}; }

json to_json(const ParsedEvidence& p) {
  json j = {{"value", p.value},
            {"confidence_label", p.confidence_label ? json(to_string(*p.confidence_label)) : json(nullptr)},
            {"confidence", p.confidence},
            {"tier", to_string(p.tier)}};
  if (!p.note.empty()) j["note"] = p.note;
  return j;
}

ParsedEvidence parsed_from_json(const json& j) {
  ParsedEvidence p;
  p.value = j.at("value").get<std::string>();
  if (!j.at("confidence_label").is_null())
    p.confidence_label = confidence_label_from_string(j.at("confidence_label").get<std::string>());
  p.confidence = j.value("confidence", 0.0);
  p.tier = evidence_tier_from_string(j.at("tier").get<std::string>());
  p.note = j.value("note", std::string());
  return p;
}

namespace {

json ranked(const std::vector<RankedDisease>& xs) {
  json out = json::array();
  for (const auto& r : xs) out.push_back(to_json(r));
  return out;
}

std::vector<RankedDisease> ranked_from_json(const json& j) {
  std::vector<RankedDisease> out;
  for (const auto& r : j) out.push_back({r.at("disease_id").get<std::string>(), r.at("probability").get<double>()});
  return out;
}

json attempt_json(const Attempt& a) {
  return {{"question_text", a.question_text}, {"raw_answer", a.raw_answer}, {"parsed", to_json(a.parsed)}};
}

}  // namespace

json to_json(const TurnRecord& t) {
  json attempts = json::array();
  for (const auto& a : t.attempts) attempts.push_back(attempt_json(a));
  const auto& last = t.final_attempt();
  return {{"turn", t.turn},
          {"asked_feature", t.asked_feature},
          {"eig_value", t.eig_value},
          {"eig_global", t.eig_global},
          {"question_text", last.question_text},
          {"raw_answer", last.raw_answer},
          {"parsed", to_json(last.parsed)},
          {"attempts", attempts},
          {"update_applied", t.update_applied},
          {"posterior_top5", ranked(t.posterior_top5)},
          {"entropy_bits", t.entropy_bits},
          {"max_posterior", t.max_posterior},
          {"reask_count", t.reask_count()}};
}

TurnRecord turn_from_json(const json& j) {
  TurnRecord t;
  t.turn = j.at("turn").get<int>();
  t.asked_feature = j.at("asked_feature").get<std::string>();
  t.eig_value = j.at("eig_value").get<double>();
  t.eig_global = j.value("eig_global", t.eig_value);
  for (const auto& a : j.at("attempts"))
    t.attempts.push_back({a.at("question_text").get<std::string>(), a.at("raw_answer").get<std::string>(),
                          parsed_from_json(a.at("parsed"))});
  if (t.attempts.empty()) throw std::invalid_argument("turn record without attempts");
  t.update_applied = j.at("update_applied").get<bool>();
  t.posterior_top5 = ranked_from_json(j.at("posterior_top5"));
  t.entropy_bits = j.at("entropy_bits").get<double>();
  t.max_posterior = j.at("max_posterior").get<double>();
  return t;
}

json to_json(const TraceHeader& h) {
  json intake = json::array();
  for (const auto& e : h.intake) intake.push_back(to_json(e));
  json j = {{"session_id", h.session_id},
            {"config", to_json(h.config)},
            {"prior_strategy", to_string(h.config.prior_strategy.tag)},
            {"kb_hash", h.kb_hash},
            {"profile_id", h.profile_id},
            {"intake_text", h.intake_text},
            {"intake", intake}};
  if (h.created_at) j["created_at"] = *h.created_at;
  return j;
}

TraceHeader trace_header_from_json(const json& j) {
  TraceHeader h;
  h.session_id = j.at("session_id").get<std::string>();
  h.config = session_config_from_json(j.at("config"));
  h.kb_hash = j.at("kb_hash").get<std::string>();
  h.profile_id = j.value("profile_id", std::string());
  h.intake_text = j.value("intake_text", std::string());
  for (const auto& e : j.value("intake", json::array())) h.intake.push_back(evidence_from_json(e));
  if (j.contains("created_at")) h.created_at = j.at("created_at").get<std::string>();
  return h;
}

json to_json(const SessionResult& r) {
  json intake = json::array();
  for (const auto& e : r.intake_triples) intake.push_back(to_json(e));
  json j = {{"session_id", r.session_id},
            {"profile_id", r.profile_id},
            {"outcome", to_string(r.outcome)},
            {"diagnosis", r.diagnosis ? json(*r.diagnosis) : json(nullptr)},
            {"final_belief_top5", ranked(r.final_belief_top5)},
            {"final_ranking", ranked(r.final_ranking)},
            {"final_max_posterior", r.final_max_posterior},
            {"turns_used", r.turns_used},
            {"intake_triples", intake},
            {"stop_reason", to_string(r.stop_reason)}};
  if (r.incomplete) {
    j["incomplete"] = true;
    j["error"] = r.error;
  }
  return j;
}

std::string trace_jsonl(const TraceHeader& header, const std::vector<TurnRecord>& turns) {
  std::string out = to_json(header).dump() + "\n";
  for (const auto& t : turns) out += to_json(t).dump() + "\n";
  return out;
}

TraceFile read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace " + path.string());
  TraceFile tf;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    if (first) {
      tf.header = trace_header_from_json(j);
      first = false;
    } else {
      tf.turns.push_back(turn_from_json(j));
    }
  }
  if (first) throw std::runtime_error("empty trace " + path.string());
  return tf;
}

}  // namespace bmbe
