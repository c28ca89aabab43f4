#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bmbe/belief.hpp"
#include "bmbe/knowledge_base.hpp"
#include "bmbe/patient_sim.hpp"
#include "bmbe/question_policy.hpp"
#include "bmbe/sensor.hpp"

namespace bmbe {

struct SessionConfig {
  double tau = 0.9;
  int t_min = 12;
  int t_max = 20;
  PolicyConfig policy;
  PriorStrategy prior_strategy;
  ConfidenceScale confidence_scale;
  double numeric_sigma = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SessionConfig& cfg);
SessionConfig session_config_from_json(const nlohmann::json& j);

struct ParsedEvidence {
  std::string value;
  std::optional<ConfidenceLabel> confidence_label;
  double confidence = 0.0;  // phi(label); 0 for unknown/clarification
  EvidenceTier tier = EvidenceTier::pattern;
  std::string note;
};

struct Attempt {
  std::string question_text;
  std::string raw_answer;
  ParsedEvidence parsed;
};

struct TurnRecord {
  int turn = 0;
  std::string asked_feature;
  double eig_value = 0.0;   // selection score
  double eig_global = 0.0;
  std::vector<Attempt> attempts;  // first ask, then at most one clarification re-ask
  bool update_applied = false;
  std::vector<RankedDisease> posterior_top5;
  double entropy_bits = 0.0;
  double max_posterior = 0.0;

  const Attempt& final_attempt() const { return attempts.back(); }
  int reask_count() const { return static_cast<int>(attempts.size()) - 1; }
};

enum class Outcome { committed, abstained };
enum class StopReason { threshold, budget_abstain };

std::string_view to_string(Outcome o);
std::string_view to_string(StopReason r);

struct SessionResult {
  std::string session_id;
  std::string profile_id;
  Outcome outcome = Outcome::abstained;
  std::optional<std::string> diagnosis;
  std::vector<RankedDisease> final_belief_top5;
  std::vector<RankedDisease> final_ranking;  // all K, descending
  double final_max_posterior = 0.0;
  int turns_used = 0;
  std::vector<EvidenceTriple> intake_triples;
  std::vector<TurnRecord> trace;
  StopReason stop_reason = StopReason::budget_abstain;
  bool incomplete = false;
  std::string error;
};

struct TraceHeader {
  std::string session_id;
  SessionConfig config;
  std::string kb_hash;
  std::string profile_id;
  std::string intake_text;
  std::vector<EvidenceTriple> intake;
  std::optional<std::string> created_at;  // omitted in canonical mode
};

nlohmann::json to_json(const EvidenceTriple& e);
EvidenceTriple evidence_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RankedDisease& r);
nlohmann::json to_json(const ParsedEvidence& p);
ParsedEvidence parsed_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TurnRecord& t);
TurnRecord turn_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TraceHeader& h);
TraceHeader trace_header_from_json(const nlohmann::json& j);
/// Summary without the per-turn trace.
nlohmann::json to_json(const SessionResult& r);

/// Header line followed by one TurnRecord per line.
std::string trace_jsonl(const TraceHeader& header, const std::vector<TurnRecord>& turns);

struct TraceFile {
  TraceHeader header;
  std::vector<TurnRecord> turns;
};
TraceFile read_trace(const std::filesystem::path& path);

/// What a responder hands back for one question. `parsed` bypasses the
/// sensor (oracle tier and replay).
struct Answer {
  std::string text;
  std::optional<ParseOutcome> parsed;
};

using Responder = std::function<Answer(const Feature& f, const std::string& question_text)>;

/// Exact profile value at very_likely; unknown for features not in the profile.
Responder oracle_responder(const PatientProfile& profile);

/// Free-text answers from the persona simulator with its own RNG stream.
Responder simulated_responder(const PatientProfile& profile, const Persona& persona, std::uint64_t seed);

enum class Decision { continue_, commit, abstain };

/// Stop/commit rule: commit when max >= tau and the warm-up is over (or no
/// question can be asked any more); abstain when the budget or the feature
/// set is exhausted; otherwise continue.
Decision decide(const Belief& b, const SessionConfig& cfg, int t, bool exhausted);

enum class SessionState { awaiting_answer, committed, abstained };
std::string_view to_string(SessionState s);

struct PendingQuestion {
  std::size_t feature = 0;
  std::string text;
  double score = 0.0;
  double eig_global = 0.0;
  std::vector<Attempt> attempts;  // earlier attempts for this feature
};

/// Step-wise session: intake, then one answer per call.
class DiagnosticSession {
 public:
  DiagnosticSession(std::shared_ptr<const KnowledgeBase> kb, std::shared_ptr<const Sensor> sensor, SessionConfig cfg,
                    std::string session_id, std::string profile_id = {});

  /// Applies bulk intake of the narrative (at most once) and poses the first question.
  void intake(std::string_view narrative);
  void intake_triples(std::vector<EvidenceTriple> triples, std::string narrative = {});

  void answer(const Answer& a);

  SessionState state() const noexcept { return state_; }
  const std::optional<PendingQuestion>& pending() const noexcept { return pending_; }
  void restore_pending(PendingQuestion p);

  int turn() const noexcept { return t_; }
  const Belief& belief() const noexcept { return belief_; }
  const Belief& prior_belief() const noexcept { return prior_; }
  const TraceHeader& header() const noexcept { return header_; }
  const std::vector<TurnRecord>& turns() const noexcept { return turns_; }
  const AskedSet& asked() const noexcept { return asked_; }
  const KnowledgeBase& kb() const noexcept { return *kb_; }
  const SessionConfig& config() const noexcept { return cfg_; }
  bool intake_done() const noexcept { return intake_done_; }

  SessionResult result() const;
  /// Marks the session aborted (abstained, incomplete).
  void abort(std::string error);

 private:
  void advance();
  void finish(Decision d);
  bool exhausted() const { return asked_.size() >= kb_->feature_count(); }
  ParsedEvidence to_evidence(const ParseOutcome& p) const;

  std::shared_ptr<const KnowledgeBase> kb_;
  std::shared_ptr<const Sensor> sensor_;
  SessionConfig cfg_;
  UpdateOptions update_options_;
  Belief prior_;
  Belief belief_;
  AskedSet asked_;
  TraceHeader header_;
  std::vector<TurnRecord> turns_;
  std::optional<PendingQuestion> pending_;
  SessionState state_ = SessionState::awaiting_answer;
  bool intake_done_ = false;
  int t_ = 0;
  bool incomplete_ = false;
  std::string error_;
};

/// Runs one simulated session to completion. Without `narrative_intake` the
/// chief complaint is not read and every finding must be asked for.
SessionResult run_session(std::shared_ptr<const KnowledgeBase> kb, std::shared_ptr<const Sensor> sensor,
                          const Responder& responder, const SessionConfig& cfg, const PatientProfile& profile,
                          bool narrative_intake = true, TraceHeader* header_out = nullptr);

}  // namespace bmbe
