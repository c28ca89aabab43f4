#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bmbe/knowledge_base.hpp"
#include "bmbe/rng.hpp"

namespace bmbe {

struct PatientProfile {
  std::string id;
  std::string disease_id;
  int age = 0;
  std::string sex;  // "male" | "female"
  std::map<std::string, std::string> findings;
  std::string chief_complaint;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const PatientProfile& p);
PatientProfile patient_from_json(const nlohmann::json& j);
void save_patients_jsonl(const std::vector<PatientProfile>& patients, const std::filesystem::path& path);
std::vector<PatientProfile> load_patients_jsonl(const std::filesystem::path& path);

enum class Archetype { plain, overanxious, distrustful, dazed, verbose };

std::string_view to_string(Archetype a);
Archetype archetype_from_string(std::string_view s);

struct Persona {
  Archetype archetype = Archetype::plain;
  double p_false_positive = 0.0;
  double p_withhold = 0.0;
  double p_flip = 0.0;
  double p_hedge = 0.0;
  int verbosity_pad = 0;

  void validate() const;
};

/// Default perturbation parameters for an archetype.
Persona default_persona(Archetype a);

/// Ancestral sample: every feature whose conditional for d is informative
/// (counts present and not exactly uniform) gets a value drawn from P(X_f|d);
/// the rest stay out of the findings. Age is uniform on [18, 90].
PatientProfile sample_patient(const KnowledgeBase& kb, std::string_view disease_id, std::uint64_t seed,
                              std::string id = {});

/// "I have a, b and c." over the first three positive findings in KB order;
/// empty when there are none.
std::string chief_complaint(const KnowledgeBase& kb, const std::map<std::string, std::string>& findings);

/// n_per patients for every disease, seeds derived from (seed, disease_id, index).
std::vector<PatientProfile> generate_cohort(const KnowledgeBase& kb, int n_per, std::uint64_t seed);

/// n profiles with at least one per disease present in `cohort`; throws when
/// n is smaller than the number of diseases. Keeps cohort order.
std::vector<PatientProfile> stratified_subset(const std::vector<PatientProfile>& cohort, std::size_t n,
                                              std::uint64_t seed);

/// Persona-perturbed free-text answer to a question about `f`.
std::string respond(const PatientProfile& profile, const Persona& persona, const Feature& f, RngStream& rng);

}  // namespace bmbe
