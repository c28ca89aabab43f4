#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bmbe/belief.hpp"
#include "bmbe/knowledge_base.hpp"

namespace bmbe {

// The language layer. Nothing here sees a Belief, an entropy or an EIG value;
// the only engine signal that crosses over is the three-valued Kappa.

enum class Kappa { low, medium, high };

std::string_view to_string(Kappa k);
Kappa kappa_from_string(std::string_view s);

/// low below 0.33, medium below 0.66, high otherwise.
Kappa confidence_indicator(double max_posterior);

std::filesystem::path default_data_dir();

/// Phrase lists driving the deterministic first tier. Phrases are matched on
/// whole normalized tokens.
struct PatternRules {
  std::vector<std::string> unknown_phrases;
  std::vector<std::string> affirmatives;
  std::vector<std::string> negatives;
  std::vector<std::string> hedges;
  std::vector<std::string> soft_cues;
  std::vector<std::string> uncertainty_cues;
  std::vector<std::string> negation_cues;
  std::map<std::string, std::string> kappa_prefix;
  std::string clarification_prefix = "Just to clarify: ";

  static PatternRules from_json(const nlohmann::json& j);
  static PatternRules load(const std::filesystem::path& path);
  /// The shipped table under default_data_dir().
  static const PatternRules& shipped();
};

/// Lowercase, apostrophes dropped, everything else that is not alphanumeric
/// (or a decimal point inside a number) turned into a separator.
std::vector<std::string> normalize_tokens(std::string_view text);

struct ExternalClientConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8088/complete
  std::chrono::milliseconds timeout{5000};
  std::filesystem::path template_dir;
  bool enabled = false;
};

/// True when BMBE_EXTERNAL_DISABLED=1 is set in the environment.
bool external_globally_disabled();

struct ExternalReply {
  std::optional<std::string> text;
  std::string error;  // set when text is empty
};

/// Minimal completion client: POSTs {template_id, slots, prompt} as JSON and
/// reads a plain-text body. A disabled client never touches the network.
class ExternalClient {
 public:
  explicit ExternalClient(ExternalClientConfig config);

  bool active() const;
  const ExternalClientConfig& config() const noexcept { return config_; }

  /// Fills `{slot}` placeholders of the named template file.
  std::string render(std::string_view template_id, const std::map<std::string, std::string>& slots) const;
  ExternalReply complete(std::string_view template_id, const std::map<std::string, std::string>& slots) const;

 private:
  ExternalClientConfig config_;
};

struct ParseOutcome {
  std::string value;  // value label, numeric reading, "unknown" or "clarification"
  std::optional<ConfidenceLabel> confidence_label;
  EvidenceTier tier = EvidenceTier::pattern;
  std::string note;  // external failures and similar diagnostics
};

struct IntakeOptions {
  std::size_t negation_window = 3;
  ConfidenceScale scale;
};

class Sensor {
 public:
  explicit Sensor(PatternRules rules = PatternRules::shipped(), std::shared_ptr<const ExternalClient> external = nullptr);

  ParseOutcome parse_response(std::string_view utterance, const Feature& f) const;

  /// Tier 1 alone; nullopt when the rules abstain.
  std::optional<ParseOutcome> parse_pattern(std::string_view utterance, const Feature& f) const;

  std::string verbalise_question(const Feature& f, Kappa kappa, bool clarification = false) const;

  std::vector<EvidenceTriple> bulk_intake(std::string_view narrative, const KnowledgeBase& kb,
                                          const IntakeOptions& options = {}) const;
  std::vector<EvidenceTriple> keyword_intake(std::string_view narrative, const KnowledgeBase& kb,
                                             const IntakeOptions& options = {}) const;

  const PatternRules& rules() const noexcept { return rules_; }
  bool external_active() const { return external_ && external_->active(); }

 private:
  using Phrase = std::vector<std::string>;

  PatternRules rules_;
  std::shared_ptr<const ExternalClient> external_;
  std::vector<Phrase> unknown_, affirm_, negate_, hedge_, soft_, uncertain_, negation_cues_;
};

/// Parses a "value|confidence_level" completion; nullopt when malformed or
/// the value is outside the feature schema.
std::optional<ParseOutcome> parse_external_reply(std::string_view reply, const Feature& f);

}  // namespace bmbe
