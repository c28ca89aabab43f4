#include "bmbe/sensor.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "bmbe/kb_analysis.hpp"

#ifndef BMBE_DEFAULT_DATA_DIR
#define BMBE_DEFAULT_DATA_DIR "data"
#endif

namespace bmbe {

std::string_view to_string(Kappa k) {
  switch (k) {
    case Kappa::low: return "low";
    case Kappa::medium: return "medium";
    case Kappa::high: return "high";
  }
  return "low";
}

Kappa kappa_from_string(std::string_view s) {
  if (s == "low") return Kappa::low;
  if (s == "medium") return Kappa::medium;
  if (s == "high") return Kappa::high;
  throw std::invalid_argument("unknown confidence indicator '" + std::string(s) + "'");
}

Kappa confidence_indicator(double max_posterior) {
  if (!(max_posterior >= 0.0 && max_posterior <= 1.0))
    throw std::invalid_argument("confidence_indicator: value outside [0, 1]");
  if (max_posterior < 0.33) return Kappa::low;
  if (max_posterior < 0.66) return Kappa::medium;
  return Kappa::high;
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("BMBE_DATA_DIR"); env && *env) return env;
  return BMBE_DEFAULT_DATA_DIR;
}

// ---------------------------------------------------------------------------
// Rule table

namespace {

std::vector<std::string> string_list(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return {};
  return j.at(key).get<std::vector<std::string>>();
}

bool is_number(std::string_view tok, double* out = nullptr) {
  if (tok.empty()) return false;
  std::string tmp(tok);
  char* end = nullptr;
  const double x = std::strtod(tmp.c_str(), &end);
  if (end == tmp.c_str() || *end != '\0' || !std::isfinite(x)) return false;
  if (out) *out = x;
  return true;
}

constexpr std::string_view kBlank = "\x1f";

// Start offsets of every occurrence of `phrase` in `tokens`.
std::vector<std::size_t> find_phrase(const std::vector<std::string>& tokens, const std::vector<std::string>& phrase) {
  std::vector<std::size_t> hits;
  if (phrase.empty() || phrase.size() > tokens.size()) return hits;
  for (std::size_t i = 0; i + phrase.size() <= tokens.size(); ++i)
    if (std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) hits.push_back(i);
  return hits;
}

// Blanks every occurrence of the phrases (longest first); returns the count.
std::size_t consume(std::vector<std::string>& tokens, const std::vector<std::vector<std::string>>& phrases) {
  std::size_t n = 0;
  for (const auto& p : phrases) {
    for (std::size_t at : find_phrase(tokens, p)) {
      // Occurrences may overlap an earlier blanking in this loop.
      bool intact = true;
      for (std::size_t i = at; i < at + p.size(); ++i) intact = intact && tokens[i] != kBlank;
      if (!intact) continue;
      for (std::size_t i = at; i < at + p.size(); ++i) tokens[i] = std::string(kBlank);
      ++n;
    }
  }
  return n;
}

bool contains_any(const std::vector<std::string>& tokens, const std::vector<std::vector<std::string>>& phrases) {
  for (const auto& p : phrases)
    if (!find_phrase(tokens, p).empty()) return true;
  return false;
}

std::vector<std::vector<std::string>> compile(const std::vector<std::string>& phrases) {
  std::vector<std::vector<std::string>> out;
  for (const auto& p : phrases) {
    auto toks = normalize_tokens(p);
    if (!toks.empty()) out.push_back(std::move(toks));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
  return out;
}

std::string join(const std::vector<std::string>& xs, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += xs[i];
  }
  return out;
}

bool reading_in_scale(const Feature& f, double x) {
  double lo = 0.0, hi = 0.0;
  if (f.numeric_scale) {
    lo = f.numeric_scale->min;
    hi = f.numeric_scale->max;
  } else {
    if (!is_number(f.values.front(), &lo) || !is_number(f.values.back(), &hi)) return false;
  }
  return x >= lo && x <= hi;
}

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

}  // namespace

std::vector<std::string> normalize_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (c == '\'') {
      // dropped: "don't" -> "dont"
    } else if (c == 0xE2 && i + 2 < text.size() && static_cast<unsigned char>(text[i + 1]) == 0x80 &&
               (static_cast<unsigned char>(text[i + 2]) == 0x99 || static_cast<unsigned char>(text[i + 2]) == 0x98)) {
      i += 2;  // typographic apostrophe
    } else if (c == '.' && !cur.empty() && std::isdigit(static_cast<unsigned char>(cur.back())) &&
               i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
      cur += '.';
    } else if (c == '-' && cur.empty() && i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
      cur += '-';
    } else {
      flush();
    }
  }
  flush();
  return out;
}

PatternRules PatternRules::from_json(const nlohmann::json& j) {
  PatternRules r;
  r.unknown_phrases = string_list(j, "unknown_phrases");
  r.affirmatives = string_list(j, "affirmatives");
  r.negatives = string_list(j, "negatives");
  r.hedges = string_list(j, "hedges");
  r.soft_cues = string_list(j, "soft_cues");
  r.uncertainty_cues = string_list(j, "uncertainty_cues");
  r.negation_cues = string_list(j, "negation_cues");
  if (j.contains("kappa_prefix")) r.kappa_prefix = j.at("kappa_prefix").get<std::map<std::string, std::string>>();
  if (j.contains("clarification_prefix")) r.clarification_prefix = j.at("clarification_prefix").get<std::string>();
  if (r.affirmatives.empty() || r.negatives.empty()) throw std::invalid_argument("pattern rules: empty polarity lists");
  return r;
}

PatternRules PatternRules::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pattern rules " + path.string());
  return from_json(nlohmann::json::parse(in));
}

const PatternRules& PatternRules::shipped() {
  static const PatternRules rules = load(default_data_dir() / "pattern_rules.json");
  return rules;
}

// ---------------------------------------------------------------------------

Sensor::Sensor(PatternRules rules, std::shared_ptr<const ExternalClient> external)
    : rules_(std::move(rules)), external_(std::move(external)) {
  unknown_ = compile(rules_.unknown_phrases);
  affirm_ = compile(rules_.affirmatives);
  negate_ = compile(rules_.negatives);
  hedge_ = compile(rules_.hedges);
  soft_ = compile(rules_.soft_cues);
  uncertain_ = compile(rules_.uncertainty_cues);
  negation_cues_ = compile(rules_.negation_cues);
}

std::optional<ParseOutcome> Sensor::parse_pattern(std::string_view utterance, const Feature& f) const {
  auto tokens = normalize_tokens(utterance);
  const bool had_unknown = consume(tokens, unknown_) > 0;
  const bool hedged = contains_any(tokens, hedge_);
  const bool soft = contains_any(tokens, soft_);

  auto label_for = [&] {
    if (hedged || had_unknown) return ConfidenceLabel::uncertain;
    if (soft) return ConfidenceLabel::likely;
    return ConfidenceLabel::very_likely;
  };
  auto outcome = [&](std::string value) {
    return ParseOutcome{std::move(value), label_for(), EvidenceTier::pattern, {}};
  };
  auto clarification = [] { return ParseOutcome{std::string(kClarificationValue), std::nullopt, EvidenceTier::pattern, {}}; };

  std::optional<std::string> value;
  switch (f.kind) {
    case FeatureKind::binary: {
      auto rest = tokens;
      const bool neg = consume(rest, negate_) > 0;
      const bool aff = consume(rest, affirm_) > 0;
      if (neg && aff) return clarification();
      if (neg) value = "no";
      else if (aff) value = "yes";
      else if (hedged) value = "yes";  // "I think so", "maybe"
      break;
    }
    case FeatureKind::numeric: {
      std::set<double> readings;
      std::string first;
      for (const auto& t : tokens) {
        double x = 0.0;
        if (t != kBlank && is_number(t, &x) && reading_in_scale(f, x)) {
          if (readings.insert(x).second && first.empty()) first = t;
        }
      }
      if (readings.size() > 1) return clarification();
      if (readings.size() == 1) value = first;
      break;
    }
    case FeatureKind::categorical:
    case FeatureKind::ordinal: {
      std::vector<std::pair<std::vector<std::string>, std::size_t>> labels;
      for (std::size_t v = 0; v < f.values.size(); ++v) labels.emplace_back(normalize_tokens(f.values[v]), v);
      std::stable_sort(labels.begin(), labels.end(),
                       [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
      auto rest = tokens;
      std::set<std::size_t> matched;
      for (const auto& [phrase, v] : labels)
        if (consume(rest, {phrase}) > 0) matched.insert(v);
      if (matched.size() > 1) return clarification();
      if (matched.size() == 1) value = f.values[*matched.begin()];
      break;
    }
  }
  if (value) return outcome(*value);
  if (had_unknown) return ParseOutcome{std::string(kUnknownValue), ConfidenceLabel::likely, EvidenceTier::pattern, {}};
  return std::nullopt;
}

std::optional<ParseOutcome> parse_external_reply(std::string_view reply, const Feature& f) {
  auto text = trim(reply);
  if (text.size() >= 2 && text.front() == '"' && text.back() == '"') text = text.substr(1, text.size() - 2);
  const auto bar = text.find('|');
  if (bar == std::string::npos) return std::nullopt;
  auto value = trim(std::string_view(text).substr(0, bar));
  auto label = trim(std::string_view(text).substr(bar + 1));
  std::transform(label.begin(), label.end(), label.begin(), [](unsigned char c) { return std::tolower(c); });
  auto conf = confidence_label_from_string(label);
  if (!conf) return std::nullopt;
  if (value == kUnknownValue) return ParseOutcome{value, conf, EvidenceTier::external, {}};
  if (value == kClarificationValue) return ParseOutcome{value, std::nullopt, EvidenceTier::external, {}};
  for (const auto& v : f.values)
    if (v == value) return ParseOutcome{value, conf, EvidenceTier::external, {}};
  double x = 0.0;
  if (f.kind == FeatureKind::numeric && is_number(value, &x) && reading_in_scale(f, x))
    return ParseOutcome{value, conf, EvidenceTier::external, {}};
  return std::nullopt;
}

ParseOutcome Sensor::parse_response(std::string_view utterance, const Feature& f) const {
  if (auto p = parse_pattern(utterance, f)) return *p;

  std::string note;
  if (external_active()) {
    auto reply = external_->complete("parsing", {{"utterance", std::string(utterance)},
                                                 {"feature", f.name},
                                                 {"schema", join(f.values, ", ")}});
    if (reply.text) {
      if (auto parsed = parse_external_reply(*reply.text, f)) {
        if (parsed->confidence_label && parsed->value != kUnknownValue &&
            *parsed->confidence_label != ConfidenceLabel::uncertain &&
            contains_any(normalize_tokens(utterance), uncertain_)) {
          parsed->confidence_label = ConfidenceLabel::uncertain;
          parsed->tier = EvidenceTier::downgrade;
        }
        return *parsed;
      }
      note = "external: malformed reply";
    } else {
      note = "external: " + reply.error;
    }
  }
  return ParseOutcome{std::string(kUnknownValue), ConfidenceLabel::likely, EvidenceTier::downgrade, note};
}

std::string Sensor::verbalise_question(const Feature& f, Kappa kappa, bool clarification) const {
  std::string body;
  if (external_active()) {
    auto reply = external_->complete(
        "verbaliser", {{"feature", f.name}, {"schema", join(f.values, ", ")}, {"kappa", std::string(to_string(kappa))}});
    if (reply.text) {
      auto text = trim(*reply.text);
      const bool leaks = text.find("f_") != std::string::npos || text.find("d_") != std::string::npos ||
                         (f.id.find('_') != std::string::npos && text.find(f.id) != std::string::npos);
      if (!text.empty() && !leaks) body = text;
    }
  }
  if (body.empty()) {
    if (!f.question_text.empty()) {
      body = f.question_text;
    } else {
      const auto name = canonical_name(f.name);
      switch (f.kind) {
        case FeatureKind::binary: body = "Do you have " + name + "?"; break;
        case FeatureKind::numeric: {
          std::ostringstream os;
          os << "On a scale from " << f.values.front() << " to " << f.values.back() << ", how would you rate your "
             << name << "?";
          body = os.str();
          break;
        }
        default: body = "How would you describe your " + name + "? (" + join(f.values, ", ") + ")"; break;
      }
    }
  }
  if (clarification) return rules_.clarification_prefix + body;
  auto it = rules_.kappa_prefix.find(std::string(to_string(kappa)));
  return (it == rules_.kappa_prefix.end() ? std::string() : it->second) + body;
}

// ---------------------------------------------------------------------------
// Intake

std::vector<EvidenceTriple> Sensor::keyword_intake(std::string_view narrative, const KnowledgeBase& kb,
                                                   const IntakeOptions& options) const {
  auto tokens = normalize_tokens(narrative);
  if (tokens.empty()) return {};
  const double c = options.scale.weight(ConfidenceLabel::likely);

  struct Candidate {
    std::vector<std::string> phrase;
    std::size_t feature;
  };
  std::vector<Candidate> candidates;
  for (std::size_t f = 0; f < kb.feature_count(); ++f) {
    const auto& feat = kb.feature(f);
    candidates.push_back({normalize_tokens(feat.name), f});
    for (const auto& syn : feat.synonyms) candidates.push_back({normalize_tokens(syn), f});
  }
  std::erase_if(candidates, [](const Candidate& x) { return x.phrase.empty(); });
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.phrase.size() > b.phrase.size(); });

  const auto original = tokens;
  std::map<std::size_t, EvidenceTriple> found;
  for (const auto& cand : candidates) {
    if (found.count(cand.feature)) continue;
    const auto& feat = kb.feature(cand.feature);
    for (std::size_t at : find_phrase(tokens, cand.phrase)) {
      const std::size_t end = at + cand.phrase.size();
      std::optional<std::string> value;
      if (feat.kind == FeatureKind::binary) {
        bool negated = false;
        const std::size_t from = at >= options.negation_window ? at - options.negation_window : 0;
        std::vector<std::string> window(original.begin() + static_cast<std::ptrdiff_t>(from),
                                        original.begin() + static_cast<std::ptrdiff_t>(at));
        negated = contains_any(window, negation_cues_);
        value = negated ? "no" : "yes";
      } else {
        const std::size_t stop = std::min(original.size(), end + options.negation_window);
        std::vector<std::string> window(original.begin() + static_cast<std::ptrdiff_t>(end),
                                        original.begin() + static_cast<std::ptrdiff_t>(stop));
        if (feat.kind == FeatureKind::numeric) {
          for (const auto& t : window) {
            double x = 0.0;
            if (is_number(t, &x) && reading_in_scale(feat, x)) {
              value = t;
              break;
            }
          }
        } else {
          for (const auto& label : feat.values)
            if (!find_phrase(window, normalize_tokens(label)).empty()) {
              value = label;
              break;
            }
        }
      }
      if (!value) continue;
      for (std::size_t i = at; i < end; ++i) tokens[i] = std::string(kBlank);
      found[cand.feature] = EvidenceTriple{feat.id, *value, c, EvidenceTier::intake, 0};
      break;
    }
  }
  std::vector<EvidenceTriple> out;
  for (auto& [f, t] : found) out.push_back(std::move(t));
  return out;
}

std::vector<EvidenceTriple> Sensor::bulk_intake(std::string_view narrative, const KnowledgeBase& kb,
                                                const IntakeOptions& options) const {
  if (normalize_tokens(narrative).empty()) return {};
  if (!external_active()) return keyword_intake(narrative, kb, options);

  std::string allowed;
  for (const auto& f : kb.features()) allowed += "- " + f.id + ": " + f.name + " (Values: " + join(f.values, ", ") + ")\n";
  auto reply = external_->complete("bulk_intake", {{"narrative", std::string(narrative)}, {"allowed_features", allowed}});
  if (!reply.text) return keyword_intake(narrative, kb, options);

  try {
    const auto j = nlohmann::json::parse(*reply.text);
    if (!j.is_object()) throw std::invalid_argument("not an object");
    std::map<std::size_t, EvidenceTriple> found;
    for (const auto& [key, entry] : j.items()) {
      if (key == "demographics") continue;
      const auto f = kb.find_feature(key);
      if (!f) throw std::invalid_argument("unknown feature");
      const auto& feat = kb.feature(*f);
      auto value = entry.at("value").get<std::string>();
      auto label = confidence_label_from_string(entry.at("confidence").get<std::string>());
      double x = 0.0;
      const bool ok = kb.find_value(*f, value).has_value() ||
                      (feat.kind == FeatureKind::numeric && is_number(value, &x) && reading_in_scale(feat, x));
      if (!ok || !label) throw std::invalid_argument("bad entry");
      found[*f] = EvidenceTriple{feat.id, value, options.scale.weight(*label), EvidenceTier::external, 0};
    }
    std::vector<EvidenceTriple> out;
    for (auto& [f, t] : found) out.push_back(std::move(t));
    return out;
  } catch (const std::exception&) {
    return keyword_intake(narrative, kb, options);
  }
}

}  // namespace bmbe
