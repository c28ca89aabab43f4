#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bmbe/knowledge_base.hpp"

namespace bmbe {

/// A schema feature for record aggregation. Multi-choice features list their
/// options in `feature.values` and are expanded into binary sub-features.
struct SchemaFeature {
  Feature feature;
  bool multi_choice = false;
};

struct BuildSchema {
  std::vector<Disease> diseases;
  std::vector<SchemaFeature> features;
  std::vector<std::string> negated_features;
  std::optional<Demographics> demographics;
};

/// One training record. Single-valued findings hold one element; multi-choice
/// findings hold every selected option.
struct Record {
  std::string disease_id;
  std::map<std::string, std::vector<std::string>> findings;
  std::string age_bin;
  std::string sex;
};

struct BuildOptions {
  std::size_t top_m = 20;        // multi-choice options kept, by frequency
  bool fill_absent_binary = true;  // absent binary findings count as "no"
};

/// Sub-feature id for option `option` of multi-choice feature `base`.
std::string multi_choice_feature_id(std::string_view base, std::string_view option);

/// Aggregates co-occurrence counts, rescales every (d, f) pair to sum to 100
/// and sets prior_count to the number of records per disease.
KbData build_from_records(const BuildSchema& schema, std::span<const Record> records, const BuildOptions& options = {});

BuildSchema build_schema_from_json(const nlohmann::json& j);
Record record_from_json(const nlohmann::json& j);
std::vector<Record> load_records_jsonl(const std::filesystem::path& path);

struct ElicitedImport {
  KbData data;
  std::vector<std::string> warnings;  // one per excluded entry
};

/// Converts elicited probabilities ({disease: {feature: {prob_yes} |
/// {distribution: {value: p}}}}) to counts x100 with uniform priors. Entries
/// that fail validation are excluded and reported. `schema`, when given,
/// supplies display names and question texts for matching ids.
ElicitedImport import_elicited(const nlohmann::json& tables, const std::optional<KbData>& schema = std::nullopt);

}  // namespace bmbe
