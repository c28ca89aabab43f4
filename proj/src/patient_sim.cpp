#include "bmbe/patient_sim.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <stdexcept>

#include "bmbe/kb_analysis.hpp"

namespace bmbe {

nlohmann::json to_json(const PatientProfile& p) {
  return {{"id", p.id},         {"disease_id", p.disease_id},           {"age", p.age}, {"sex", p.sex},
          {"findings", p.findings}, {"chief_complaint", p.chief_complaint}, {"seed", p.seed}};
}

PatientProfile patient_from_json(const nlohmann::json& j) {
  PatientProfile p;
  p.id = j.at("id").get<std::string>();
  p.disease_id = j.at("disease_id").get<std::string>();
  p.age = j.value("age", 0);
  p.sex = j.value("sex", std::string("female"));
  if (j.contains("findings")) p.findings = j.at("findings").get<std::map<std::string, std::string>>();
  p.chief_complaint = j.value("chief_complaint", std::string());
  p.seed = j.value("seed", std::uint64_t{0});
  return p;
}

void save_patients_jsonl(const std::vector<PatientProfile>& patients, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : patients) out << to_json(p).dump() << '\n';
}

std::vector<PatientProfile> load_patients_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<PatientProfile> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(patient_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Archetype a) {
  switch (a) {
    case Archetype::plain: return "plain";
    case Archetype::overanxious: return "overanxious";
    case Archetype::distrustful: return "distrustful";
    case Archetype::dazed: return "dazed";
    case Archetype::verbose: return "verbose";
  }
  return "plain";
}

Archetype archetype_from_string(std::string_view s) {
  for (auto a : {Archetype::plain, Archetype::overanxious, Archetype::distrustful, Archetype::dazed, Archetype::verbose})
    if (to_string(a) == s) return a;
  throw std::invalid_argument("unknown persona '" + std::string(s) + "'");
}

void Persona::validate() const {
  for (double p : {p_false_positive, p_withhold, p_flip, p_hedge})
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("persona probabilities must lie in [0, 1]");
  if (verbosity_pad < 0) throw std::invalid_argument("verbosity_pad must be nonnegative");
}

Persona default_persona(Archetype a) {
  Persona p;
  p.archetype = a;
  switch (a) {
    case Archetype::plain: break;
    case Archetype::overanxious: p.p_false_positive = 0.25; break;
    case Archetype::distrustful: p.p_withhold = 0.5; break;
    case Archetype::dazed:
      p.p_flip = 0.15;
      p.p_hedge = 0.6;
      break;
    case Archetype::verbose: p.verbosity_pad = 25; break;
  }
  return p;
}

// ---------------------------------------------------------------------------

namespace {

bool informative(const KnowledgeBase& kb, std::size_t d, std::size_t f) {
  if (!kb.has_counts(d, f)) return false;
  const double first = kb.likelihood(d, f, 0);
  for (std::size_t v = 1; v < kb.feature(f).values.size(); ++v)
    if (kb.likelihood(d, f, v) != first) return true;
  return false;
}

// Positive means "yes" for binary features and anything past the first grid
// value otherwise (the first ordinal/numeric value encodes absence).
bool positive(const Feature& f, const std::string& value) {
  if (f.kind == FeatureKind::binary) return value == "yes";
  if (f.kind == FeatureKind::categorical) return false;
  return value != f.values.front();
}

}  // namespace

std::string chief_complaint(const KnowledgeBase& kb, const std::map<std::string, std::string>& findings) {
  std::vector<std::string> parts;
  for (const auto& f : kb.features()) {
    auto it = findings.find(f.id);
    if (it == findings.end() || !positive(f, it->second)) continue;
    parts.push_back(f.kind == FeatureKind::binary ? canonical_name(f.name) : canonical_name(f.name) + " " + it->second);
    if (parts.size() == 3) break;
  }
  if (parts.empty()) return {};
  std::string out = "I have " + parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out += (i + 1 == parts.size() ? " and " : ", ") + parts[i];
  return out + ".";
}

PatientProfile sample_patient(const KnowledgeBase& kb, std::string_view disease_id, std::uint64_t seed, std::string id) {
  const std::size_t d = kb.disease_index(disease_id);
  RngStream rng(seed);
  PatientProfile p;
  p.id = id.empty() ? std::string(disease_id) + "-" + std::to_string(seed) : std::move(id);
  p.disease_id = std::string(disease_id);
  p.seed = seed;
  p.age = 18 + static_cast<int>(uniform_index(rng, 73));
  p.sex = uniform_index(rng, 2) == 0 ? "female" : "male";
  for (std::size_t f = 0; f < kb.feature_count(); ++f) {
    if (!informative(kb, d, f)) continue;
    const auto& feat = kb.feature(f);
    const double u = uniform01(rng);
    double acc = 0.0;
    std::size_t pick = feat.values.size() - 1;
    for (std::size_t v = 0; v < feat.values.size(); ++v) {
      acc += kb.likelihood(d, f, v);
      if (u < acc) {
        pick = v;
        break;
      }
    }
    p.findings[feat.id] = feat.values[pick];
  }
  p.chief_complaint = chief_complaint(kb, p.findings);
  return p;
}

std::vector<PatientProfile> generate_cohort(const KnowledgeBase& kb, int n_per, std::uint64_t seed) {
  if (n_per < 1) throw std::invalid_argument("n_per must be at least 1");
  std::vector<PatientProfile> out;
  out.reserve(kb.disease_count() * static_cast<std::size_t>(n_per));
  for (const auto& d : kb.diseases())
    for (int i = 0; i < n_per; ++i) {
      const auto s = derive_seed(seed, d.id, static_cast<std::uint64_t>(i));
      out.push_back(sample_patient(kb, d.id, s, d.id + "-" + std::to_string(i)));
    }
  return out;
}

std::vector<PatientProfile> stratified_subset(const std::vector<PatientProfile>& cohort, std::size_t n,
                                              std::uint64_t seed) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    auto& g = groups[cohort[i].disease_id];
    if (g.empty()) order.push_back(cohort[i].disease_id);
    g.push_back(i);
  }
  if (n < order.size())
    throw std::invalid_argument("stratified subset of " + std::to_string(n) + " cannot cover " +
                                std::to_string(order.size()) + " diseases");
  if (n > cohort.size()) throw std::invalid_argument("stratified subset larger than the cohort");

  RngStream rng(seed);
  auto shuffle = [&](std::vector<std::size_t>& xs) {
    for (std::size_t i = xs.size(); i > 1; --i) std::swap(xs[i - 1], xs[uniform_index(rng, i)]);
  };
  std::set<std::size_t> chosen;
  std::vector<std::size_t> rest;
  for (const auto& d : order) {
    auto g = groups[d];
    shuffle(g);
    chosen.insert(g.front());
    rest.insert(rest.end(), g.begin() + 1, g.end());
  }
  std::sort(rest.begin(), rest.end());
  shuffle(rest);
  for (std::size_t i = 0; chosen.size() < n; ++i) chosen.insert(rest[i]);

  std::vector<PatientProfile> out;
  for (std::size_t i : chosen) out.push_back(cohort[i]);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 24> kFiller = {
    "honestly", "the",   "weather", "has",    "been",   "strange", "lately", "my",
    "neighbour", "mentioned", "her", "garden", "coffee", "this", "morning", "bus",
    "was",       "late",  "again",  "anyway", "cousin",  "visited", "traffic", "kitchen"};

bool draw(RngStream& rng, double p) { return p > 0.0 && uniform01(rng) < p; }

std::string filler(RngStream& rng, int n) {
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += kFiller[uniform_index(rng, kFiller.size())];
  }
  return out;
}

}  // namespace

std::string respond(const PatientProfile& profile, const Persona& persona, const Feature& f, RngStream& rng) {
  std::optional<std::string> value;
  if (auto it = profile.findings.find(f.id); it != profile.findings.end()) value = it->second;

  if (persona.p_false_positive > 0.0) {
    const bool negative_or_absent = !value || (f.kind == FeatureKind::binary ? *value == "no" : *value == f.values.front());
    if (negative_or_absent && f.kind != FeatureKind::categorical && draw(rng, persona.p_false_positive))
      value = f.kind == FeatureKind::binary ? std::string("yes") : f.values.back();
  }

  std::string text;
  if (draw(rng, persona.p_withhold)) {
    text = "I'd rather not say.";
  } else {
    if (value && draw(rng, persona.p_flip)) {
      if (f.kind == FeatureKind::binary) {
        value = *value == "yes" ? "no" : "yes";
      } else {
        std::vector<std::string> others;
        for (const auto& v : f.values)
          if (v != *value) others.push_back(v);
        value = others[uniform_index(rng, others.size())];
      }
    }
    const bool hedge = value && draw(rng, persona.p_hedge);
    if (!value) text = "I'm not sure.";
    else if (f.kind == FeatureKind::binary)
      text = hedge ? (*value == "yes" ? "I think so." : "I don't think so.") : (*value == "yes" ? "Yes." : "No.");
    else
      text = (hedge ? "I think it's " : "It's ") + *value + ".";
  }

  if (persona.verbosity_pad > 0) {
    const int before = persona.verbosity_pad / 2;
    const auto lead = filler(rng, before);
    const auto tail = filler(rng, persona.verbosity_pad - before);
    text = (lead.empty() ? "" : lead + ", ") + text + (tail.empty() ? "" : " " + tail + ".");
  }
  return text;
}

}  // namespace bmbe
