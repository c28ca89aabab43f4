#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace bmbe {

/// Raised for malformed or inconsistent knowledge-base input. `path()` names
/// the offending JSON key path, e.g. `counts.d_flu.f_fever`.
class KbError : public std::runtime_error {
 public:
  KbError(std::string path, const std::string& message);
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

enum class FeatureKind { binary, categorical, ordinal, numeric };

std::string_view to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(std::string_view s);

struct NumericScale {
  double min = 0.0;
  double max = 10.0;
  double step = 1.0;
};

struct Disease {
  std::string id;
  std::string name;
  double prior_count = 1.0;
  // Keyed by "<age_bin>|<sex>".
  std::map<std::string, double> demographic_counts;
};

struct Feature {
  std::string id;
  std::string name;
  FeatureKind kind = FeatureKind::binary;
  std::vector<std::string> values;
  std::string question_text;
  std::optional<NumericScale> numeric_scale;
  std::vector<std::string> synonyms;
};

struct Demographics {
  std::vector<std::string> age_bins;
  std::vector<std::string> sexes;
};

// disease_id -> feature_id -> value -> count (pre-smoothing, sums to 100 per pair)
using CountTable = std::map<std::string, std::map<std::string, std::map<std::string, double>>>;

/// Plain description of a knowledge base as it appears on disk.
struct KbData {
  int version = 1;
  std::vector<Disease> diseases;
  std::vector<Feature> features;
  CountTable counts;
  std::vector<std::string> negated_features;
  std::optional<Demographics> demographics;
};

std::string demographic_key(std::string_view age_bin, std::string_view sex);

/// Immutable, validated knowledge base with smoothed likelihood tables.
///
/// Likelihoods are stored per feature as a dense |V_f| x K_pad block (value
/// major, disease minor) where K_pad rounds K up to a multiple of 4. Padding
/// entries are zero in both the probability and the log-probability tables.
class KnowledgeBase {
 public:
  explicit KnowledgeBase(KbData data);

  const KbData& data() const noexcept { return data_; }
  int version() const noexcept { return data_.version; }

  std::size_t disease_count() const noexcept { return data_.diseases.size(); }
  std::size_t feature_count() const noexcept { return data_.features.size(); }
  std::size_t padded_disease_count() const noexcept { return padded_k_; }
  std::size_t max_value_count() const noexcept { return max_values_; }

  const Disease& disease(std::size_t d) const { return data_.diseases.at(d); }
  const Feature& feature(std::size_t f) const { return data_.features.at(f); }
  const std::vector<Disease>& diseases() const noexcept { return data_.diseases; }
  const std::vector<Feature>& features() const noexcept { return data_.features; }

  std::optional<std::size_t> find_disease(std::string_view id) const;
  std::optional<std::size_t> find_feature(std::string_view id) const;
  std::optional<std::size_t> find_value(std::size_t f, std::string_view value) const;

  // Throwing lookups; the error message names the unknown id.
  std::size_t disease_index(std::string_view id) const;
  std::size_t feature_index(std::string_view id) const;
  std::size_t value_index(std::size_t f, std::string_view value) const;

  /// Shared disease id list; fixes the index semantics of every Belief built
  /// from this KB.
  const std::shared_ptr<const std::vector<std::string>>& disease_order() const noexcept {
    return disease_ids_;
  }

  /// Dirichlet-smoothed P(X_f = v | d); 1/|V_f| when the pair has no counts.
  double likelihood(std::size_t d, std::size_t f, std::size_t v) const {
    return lik_[offsets_[f] + v * padded_k_ + d];
  }
  double likelihood(std::string_view d, std::string_view f, std::string_view v) const;

  std::span<const double> likelihood_row(std::size_t f, std::size_t v) const {
    return {lik_.data() + offsets_[f] + v * padded_k_, padded_k_};
  }
  std::span<const double> log_likelihood_row(std::size_t f, std::size_t v) const {
    return {log_lik_.data() + offsets_[f] + v * padded_k_, padded_k_};
  }
  /// Whole |V_f| x K_pad block for feature f.
  const double* likelihood_block(std::size_t f) const { return lik_.data() + offsets_[f]; }
  const double* log_likelihood_block(std::size_t f) const { return log_lik_.data() + offsets_[f]; }

  bool has_counts(std::size_t d, std::size_t f) const { return present_[d * feature_count() + f]; }
  bool is_negated(std::string_view feature_id) const;

  /// Stable 64-bit content hash (hex) over the canonical JSON serialization.
  const std::string& hash() const noexcept { return hash_; }

 private:
  void validate() const;
  void compile();

  KbData data_;
  std::shared_ptr<const std::vector<std::string>> disease_ids_;
  std::unordered_map<std::string, std::size_t> disease_lookup_;
  std::unordered_map<std::string, std::size_t> feature_lookup_;
  std::vector<std::unordered_map<std::string, std::size_t>> value_lookup_;
  std::vector<std::size_t> offsets_;
  std::vector<double> lik_;
  std::vector<double> log_lik_;
  std::vector<bool> present_;
  std::size_t padded_k_ = 0;
  std::size_t max_values_ = 0;
  std::string hash_;
};

// JSON serialization (KB schema, UTF-8).
nlohmann::json to_json(const KbData& data);
KbData kb_data_from_json(const nlohmann::json& j);

std::shared_ptr<const KnowledgeBase> load_kb(const std::filesystem::path& path);
void save_kb(const KbData& data, const std::filesystem::path& path);

}  // namespace bmbe
