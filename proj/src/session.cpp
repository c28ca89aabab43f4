#include "bmbe/session.hpp"

#include <algorithm>
#include <stdexcept>

namespace bmbe {

void SessionConfig::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in [0, 1]");
  if (t_min < 0 || t_min > t_max) throw std::invalid_argument("need 0 <= t_min <= t_max");
  if (!(numeric_sigma > 0.0)) throw std::invalid_argument("numeric_sigma must be positive");
  policy.validate();
  confidence_scale.validate();
}

std::string_view to_string(Outcome o) { return o == Outcome::committed ? "committed" : "abstained"; }
std::string_view to_string(StopReason r) { return r == StopReason::threshold ? "threshold" : "budget_abstain"; }

std::string_view to_string(SessionState s) {
  switch (s) {
    case SessionState::awaiting_answer: return "awaiting_answer";
    case SessionState::committed: return "committed";
    case SessionState::abstained: return "abstained";
  }
  return "abstained";
}

Decision decide(const Belief& b, const SessionConfig& cfg, int t, bool exhausted) {
  const bool out_of_questions = exhausted || t >= cfg.t_max;
  if (b.max_probability() >= cfg.tau && (t >= cfg.t_min || out_of_questions)) return Decision::commit;
  if (out_of_questions) return Decision::abstain;
  return Decision::continue_;
}

// ---------------------------------------------------------------------------

Responder oracle_responder(const PatientProfile& profile) {
  return [findings = profile.findings](const Feature& f, const std::string&) {
    auto it = findings.find(f.id);
    if (it == findings.end())
      return Answer{"", ParseOutcome{std::string(kUnknownValue), ConfidenceLabel::likely, EvidenceTier::oracle, {}}};
    return Answer{it->second, ParseOutcome{it->second, ConfidenceLabel::very_likely, EvidenceTier::oracle, {}}};
  };
}

Responder simulated_responder(const PatientProfile& profile, const Persona& persona, std::uint64_t seed) {
  persona.validate();
  auto rng = std::make_shared<RngStream>(seed);
  return [profile, persona, rng](const Feature& f, const std::string&) {
    return Answer{respond(profile, persona, f, *rng), std::nullopt};
  };
}

// ---------------------------------------------------------------------------

DiagnosticSession::DiagnosticSession(std::shared_ptr<const KnowledgeBase> kb, std::shared_ptr<const Sensor> sensor,
                                     SessionConfig cfg, std::string session_id, std::string profile_id)
    : kb_(std::move(kb)), sensor_(std::move(sensor)), cfg_(std::move(cfg)) {
  if (!kb_ || !sensor_) throw std::invalid_argument("session needs a knowledge base and a sensor");
  cfg_.validate();
  update_options_.numeric_sigma = cfg_.numeric_sigma;
  prior_ = prior(*kb_, cfg_.prior_strategy);
  belief_ = prior_;
  header_.session_id = std::move(session_id);
  header_.config = cfg_;
  header_.kb_hash = kb_->hash();
  header_.profile_id = std::move(profile_id);
}

void DiagnosticSession::intake(std::string_view narrative) {
  IntakeOptions opts;
  opts.scale = cfg_.confidence_scale;
  intake_triples(sensor_->bulk_intake(narrative, *kb_, opts), std::string(narrative));
}

void DiagnosticSession::intake_triples(std::vector<EvidenceTriple> triples, std::string narrative) {
  if (intake_done_) throw std::logic_error("intake already applied");
  Belief b = belief_;
  AskedSet asked = asked_;
  std::vector<EvidenceTriple> applied;
  for (auto& e : triples) {
    if (e.value == kUnknownValue || e.value == kClarificationValue) continue;
    e.turn = 0;
    b = update_belief(b, *kb_, e, update_options_);
    asked.insert(e.feature_id);
    applied.push_back(std::move(e));
  }
  belief_ = std::move(b);
  asked_ = std::move(asked);
  header_.intake = std::move(applied);
  header_.intake_text = std::move(narrative);
  intake_done_ = true;
  advance();
}

ParsedEvidence DiagnosticSession::to_evidence(const ParseOutcome& p) const {
  ParsedEvidence ev{p.value, p.confidence_label, 0.0, p.tier, p.note};
  if (p.value != kUnknownValue && p.value != kClarificationValue) {
    if (!p.confidence_label) throw std::invalid_argument("parsed value without a confidence label");
    ev.confidence = cfg_.confidence_scale.weight(*p.confidence_label);
  }
  return ev;
}

void DiagnosticSession::advance() {
  if (t_ > 0 || exhausted() || cfg_.t_max == 0) {
    const auto d = decide(belief_, cfg_, t_, exhausted());
    if (d != Decision::continue_) return finish(d);
  }
  const auto pick = select_question(belief_, *kb_, asked_, cfg_.policy);
  const auto kappa = confidence_indicator(std::min(1.0, belief_.max_probability()));
  pending_ = PendingQuestion{pick.index, sensor_->verbalise_question(kb_->feature(pick.index), kappa), pick.score,
                             pick.eig_global, {}};
}

void DiagnosticSession::answer(const Answer& a) {
  if (state_ != SessionState::awaiting_answer || !pending_) throw std::logic_error("session is not awaiting an answer");
  if (!intake_done_) throw std::logic_error("intake has not been applied");
  const Feature& feat = kb_->feature(pending_->feature);
  const ParseOutcome parsed = a.parsed ? *a.parsed : sensor_->parse_response(a.text, feat);
  auto attempts = pending_->attempts;
  attempts.push_back(Attempt{pending_->text, a.text, to_evidence(parsed)});
  const ParsedEvidence& ev = attempts.back().parsed;

  const bool no_value = ev.value == kUnknownValue || ev.value == kClarificationValue;
  if (no_value && attempts.size() == 1) {
    const auto kappa = confidence_indicator(std::min(1.0, belief_.max_probability()));
    pending_->text = sensor_->verbalise_question(feat, kappa, true);
    pending_->attempts = std::move(attempts);
    return;
  }

  Belief next = belief_;
  if (!no_value) next = update_belief(belief_, *kb_, {feat.id, ev.value, ev.confidence, ev.tier, t_ + 1}, update_options_);

  ++t_;
  belief_ = std::move(next);
  asked_.insert(feat.id);
  TurnRecord rec;
  rec.turn = t_;
  rec.asked_feature = feat.id;
  rec.eig_value = pending_->score;
  rec.eig_global = pending_->eig_global;
  rec.attempts = std::move(attempts);
  rec.update_applied = !no_value;
  rec.posterior_top5 = top_k(belief_, std::min<std::size_t>(5, belief_.size()));
  rec.entropy_bits = entropy(belief_);
  rec.max_posterior = belief_.max_probability();
  turns_.push_back(std::move(rec));
  pending_.reset();
  advance();
}

void DiagnosticSession::restore_pending(PendingQuestion p) {
  if (state_ != SessionState::awaiting_answer) throw std::logic_error("session is terminal");
  if (p.feature >= kb_->feature_count() || asked_.count(kb_->feature(p.feature).id))
    throw std::invalid_argument("pending question refers to an invalid feature");
  pending_ = std::move(p);
}

void DiagnosticSession::finish(Decision d) {
  state_ = d == Decision::commit ? SessionState::committed : SessionState::abstained;
  pending_.reset();
}

void DiagnosticSession::abort(std::string error) {
  incomplete_ = true;
  error_ = std::move(error);
  state_ = SessionState::abstained;
  pending_.reset();
}

SessionResult DiagnosticSession::result() const {
  SessionResult r;
  r.session_id = header_.session_id;
  r.profile_id = header_.profile_id;
  r.outcome = state_ == SessionState::committed ? Outcome::committed : Outcome::abstained;
  if (r.outcome == Outcome::committed) r.diagnosis = kb_->disease(belief_.argmax()).id;
  r.final_belief_top5 = top_k(belief_, std::min<std::size_t>(5, belief_.size()));
  r.final_ranking = top_k(belief_, belief_.size());
  r.final_max_posterior = belief_.max_probability();
  r.turns_used = t_;
  r.intake_triples = header_.intake;
  r.trace = turns_;
  r.stop_reason = r.outcome == Outcome::committed ? StopReason::threshold : StopReason::budget_abstain;
  r.incomplete = incomplete_;
  r.error = error_;
  return r;
}

SessionResult run_session(std::shared_ptr<const KnowledgeBase> kb, std::shared_ptr<const Sensor> sensor,
                          const Responder& responder, const SessionConfig& cfg, const PatientProfile& profile,
                          bool narrative_intake, TraceHeader* header_out) {
  DiagnosticSession s(kb, std::move(sensor), cfg, profile.id, profile.id);
  try {
    if (narrative_intake)
      s.intake(profile.chief_complaint);
    else
      s.intake_triples({});
    while (s.state() == SessionState::awaiting_answer) {
      const auto& p = *s.pending();
      s.answer(responder(kb->feature(p.feature), p.text));
    }
  } catch (const std::exception& e) {
    s.abort(e.what());
  }
  if (header_out) *header_out = s.header();
  return s.result();
}

}  // namespace bmbe
