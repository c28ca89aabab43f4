#include "bmbe/kb_build.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace bmbe {

namespace {

std::string display_name(std::string_view id) {
  std::string out(id);
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

bool parse_number(const std::string& s, double& out) {
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end != s.c_str() && *end == '\0' && std::isfinite(out);
}

std::string slug(std::string_view option) {
  std::string out;
  for (char c : option) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else if (!out.empty() && out.back() != '_')
      out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

void rescale_to_100(std::map<std::string, double>& counts) {
  double total = 0.0;
  for (const auto& [v, n] : counts) total += n;
  if (total <= 0.0) return;
  for (auto& [v, n] : counts) n = n * 100.0 / total;
}

}  // namespace

std::string multi_choice_feature_id(std::string_view base, std::string_view option) {
  return std::string(base) + "__" + slug(option);
}

KbData build_from_records(const BuildSchema& schema, std::span<const Record> records, const BuildOptions& options) {
  if (records.empty()) throw KbError("records", "no records");

  std::map<std::string, std::size_t> disease_pos;
  for (std::size_t i = 0; i < schema.diseases.size(); ++i) disease_pos.emplace(schema.diseases[i].id, i);
  std::map<std::string, const SchemaFeature*> feature_by_id;
  for (const auto& sf : schema.features) feature_by_id.emplace(sf.feature.id, &sf);

  // Validate and tally multi-choice option frequencies.
  std::map<std::string, std::map<std::string, std::size_t>> option_freq;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::string path = "records[" + std::to_string(r) + "]";
    if (!disease_pos.count(rec.disease_id)) throw KbError(path + ".disease", "undeclared disease '" + rec.disease_id + "'");
    for (const auto& [fid, vals] : rec.findings) {
      auto it = feature_by_id.find(fid);
      if (it == feature_by_id.end()) throw KbError(path + ".findings." + fid, "undeclared feature");
      const auto& declared = it->second->feature.values;
      if (!it->second->multi_choice && vals.size() != 1)
        throw KbError(path + ".findings." + fid, "single-valued feature given " + std::to_string(vals.size()) + " values");
      for (const auto& v : vals) {
        if (std::find(declared.begin(), declared.end(), v) == declared.end())
          throw KbError(path + ".findings." + fid, "undeclared value '" + v + "'");
        if (it->second->multi_choice) ++option_freq[fid][v];
      }
    }
  }

  KbData out;
  out.version = 1;
  out.diseases = schema.diseases;
  for (auto& d : out.diseases) {
    d.prior_count = 0.0;
    d.demographic_counts.clear();
  }
  out.negated_features = schema.negated_features;
  out.demographics = schema.demographics;

  // Expanded feature list: (output feature, source feature id, option or empty).
  struct Slot {
    std::string source;
    std::string option;
  };
  std::vector<Slot> slots;
  for (const auto& sf : schema.features) {
    if (!sf.multi_choice) {
      out.features.push_back(sf.feature);
      slots.push_back({sf.feature.id, ""});
      continue;
    }
    std::vector<std::string> kept = sf.feature.values;
    const auto& freq = option_freq[sf.feature.id];
    std::stable_sort(kept.begin(), kept.end(), [&](const std::string& a, const std::string& b) {
      auto fa = freq.count(a) ? freq.at(a) : 0;
      auto fb = freq.count(b) ? freq.at(b) : 0;
      return fa > fb;
    });
    kept.erase(std::remove_if(kept.begin(), kept.end(), [&](const std::string& o) { return !freq.count(o); }),
               kept.end());
    if (kept.size() > options.top_m) kept.resize(options.top_m);
    // Restore declaration order among the kept options.
    std::vector<std::string> ordered;
    for (const auto& o : sf.feature.values)
      if (std::find(kept.begin(), kept.end(), o) != kept.end()) ordered.push_back(o);
    for (const auto& o : ordered) {
      Feature sub;
      sub.id = multi_choice_feature_id(sf.feature.id, o);
      sub.name = sf.feature.name + ": " + o;
      sub.kind = FeatureKind::binary;
      sub.values = {"yes", "no"};
      sub.question_text = sf.feature.question_text.empty() ? "Does \"" + o + "\" apply to you?"
                                                           : sf.feature.question_text + " (" + o + ")";
      out.features.push_back(std::move(sub));
      slots.push_back({sf.feature.id, o});
    }
  }

  std::set<std::string> negated(schema.negated_features.begin(), schema.negated_features.end());
  for (const auto& neg : schema.negated_features)
    if (!feature_by_id.count(neg)) throw KbError("negated_features", "unknown feature '" + neg + "'");

  for (const auto& rec : records) {
    auto& disease = out.diseases[disease_pos.at(rec.disease_id)];
    disease.prior_count += 1.0;
    if (out.demographics && !rec.age_bin.empty() && !rec.sex.empty())
      disease.demographic_counts[demographic_key(rec.age_bin, rec.sex)] += 1.0;

    auto& per_feature = out.counts[rec.disease_id];
    for (std::size_t i = 0; i < out.features.size(); ++i) {
      const auto& feat = out.features[i];
      const auto& slot = slots[i];
      auto fit = rec.findings.find(slot.source);
      std::string value;
      if (!slot.option.empty()) {
        const bool selected =
            fit != rec.findings.end() && std::find(fit->second.begin(), fit->second.end(), slot.option) != fit->second.end();
        if (selected)
          value = "yes";
        else if (options.fill_absent_binary && !negated.count(slot.source))
          value = "no";
      } else if (fit != rec.findings.end()) {
        value = fit->second.front();
      } else if (feat.kind == FeatureKind::binary && options.fill_absent_binary && !negated.count(feat.id)) {
        value = "no";
      }
      if (value.empty()) continue;
      auto& counts = per_feature[feat.id];
      if (counts.empty())
        for (const auto& v : feat.values) counts[v] = 0.0;
      counts[value] += 1.0;
    }
    if (per_feature.empty()) out.counts.erase(rec.disease_id);
  }

  for (auto& [d, per_feature] : out.counts)
    for (auto& [f, counts] : per_feature) rescale_to_100(counts);
  return out;
}

BuildSchema build_schema_from_json(const nlohmann::json& j) {
  // Same layout as the KB schema; "kind": "multi_choice" marks expandable features.
  nlohmann::json copy = j;
  std::vector<bool> multi;
  if (copy.contains("features")) {
    for (auto& f : copy["features"]) {
      const bool m = f.value("kind", "") == "multi_choice";
      multi.push_back(m);
      if (m) f["kind"] = "categorical";
    }
  }
  if (!copy.contains("version")) copy["version"] = 1;
  KbData data = kb_data_from_json(copy);
  BuildSchema schema;
  schema.diseases = std::move(data.diseases);
  for (std::size_t i = 0; i < data.features.size(); ++i)
    schema.features.push_back({std::move(data.features[i]), multi[i]});
  schema.negated_features = std::move(data.negated_features);
  schema.demographics = std::move(data.demographics);
  return schema;
}

Record record_from_json(const nlohmann::json& j) {
  Record r;
  r.disease_id = j.at("disease").get<std::string>();
  if (j.contains("findings")) {
    for (const auto& [k, v] : j.at("findings").items()) {
      if (v.is_array())
        r.findings[k] = v.get<std::vector<std::string>>();
      else
        r.findings[k] = {v.get<std::string>()};
    }
  }
  r.age_bin = j.value("age_bin", "");
  r.sex = j.value("sex", "");
  return r;
}

std::vector<Record> load_records_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw KbError("", "cannot open records file '" + path.string() + "'");
  std::vector<Record> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw KbError("line " + std::to_string(lineno), std::string("parse error: ") + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ElicitedImport import_elicited(const nlohmann::json& tables, const std::optional<KbData>& schema) {
  if (!tables.is_object()) throw KbError("", "elicited tables must be a JSON object");
  constexpr double kTol = 1e-6;

  ElicitedImport result;
  struct FeatureInfo {
    bool binary = true;
    std::set<std::string> labels;
  };
  std::map<std::string, FeatureInfo> infos;
  std::map<std::string, std::map<std::string, std::map<std::string, double>>> probs;

  auto warn = [&](const std::string& d, const std::string& f, const std::string& why) {
    result.warnings.push_back(d + "." + f + ": " + why + " (entry excluded)");
  };

  for (const auto& [d, per_feature] : tables.items()) {
    if (!per_feature.is_object()) throw KbError(d, "expected an object of features");
    for (const auto& [f, entry] : per_feature.items()) {
      if (entry.contains("prob_yes")) {
        if (!entry.at("prob_yes").is_number()) {
          warn(d, f, "prob_yes is not a number");
          continue;
        }
        const double p = entry.at("prob_yes").get<double>();
        if (!(p >= 0.0 && p <= 1.0)) {
          warn(d, f, "prob_yes outside [0, 1]");
          continue;
        }
        if (infos.count(f) && !infos[f].binary) {
          warn(d, f, "binary entry for a distribution-valued feature");
          continue;
        }
        infos[f].binary = true;
        probs[d][f] = {{"yes", p}, {"no", 1.0 - p}};
      } else if (entry.contains("distribution") && entry.at("distribution").is_object()) {
        std::map<std::string, double> dist;
        double sum = 0.0;
        bool ok = true;
        for (const auto& [v, p] : entry.at("distribution").items()) {
          if (!p.is_number() || !(p.get<double>() >= 0.0 && p.get<double>() <= 1.0)) {
            ok = false;
            break;
          }
          dist[v] = p.get<double>();
          sum += p.get<double>();
        }
        if (!ok || dist.size() < 2) {
          warn(d, f, "invalid distribution");
          continue;
        }
        if (std::abs(sum - 1.0) > kTol) {
          char buf[64];
          std::snprintf(buf, sizeof buf, "distribution sums to %.6g, must sum to 1", sum);
          warn(d, f, buf);
          continue;
        }
        if (infos.count(f) && infos[f].binary && !infos[f].labels.empty()) {
          warn(d, f, "distribution entry for a binary feature");
          continue;
        }
        auto& info = infos[f];
        info.binary = false;
        for (const auto& [v, p] : dist) info.labels.insert(v);
        probs[d][f] = std::move(dist);
      } else {
        warn(d, f, "neither prob_yes nor distribution given");
      }
      if (infos.count(f) && infos[f].binary) infos[f].labels = {"yes", "no"};
    }
  }

  if (probs.empty()) throw KbError("", "empty KB: every elicited entry was invalid");

  KbData& data = result.data;
  data.version = 1;
  auto schema_feature = [&](const std::string& id) -> const Feature* {
    if (!schema) return nullptr;
    for (const auto& f : schema->features)
      if (f.id == id) return &f;
    return nullptr;
  };
  auto schema_disease = [&](const std::string& id) -> const Disease* {
    if (!schema) return nullptr;
    for (const auto& d : schema->diseases)
      if (d.id == id) return &d;
    return nullptr;
  };

  for (const auto& [d, per_feature] : tables.items()) {
    Disease disease;
    disease.id = d;
    const Disease* known = schema_disease(d);
    disease.name = known ? known->name : display_name(d);
    disease.prior_count = 1.0;
    data.diseases.push_back(std::move(disease));
  }

  for (const auto& [f, info] : infos) {
    Feature feat;
    feat.id = f;
    const Feature* known = schema_feature(f);
    feat.name = known ? known->name : display_name(f);
    if (info.binary) {
      feat.kind = FeatureKind::binary;
      feat.values = {"yes", "no"};
      feat.question_text = "Do you have " + feat.name + "?";
    } else {
      feat.kind = FeatureKind::ordinal;
      std::vector<std::string> labels(info.labels.begin(), info.labels.end());
      const bool numeric = std::all_of(labels.begin(), labels.end(), [](const std::string& s) {
        double x;
        return parse_number(s, x);
      });
      if (numeric)
        std::sort(labels.begin(), labels.end(), [](const std::string& a, const std::string& b) {
          return std::strtod(a.c_str(), nullptr) < std::strtod(b.c_str(), nullptr);
        });
      feat.values = labels;
      feat.question_text = "On a scale from " + labels.front() + " to " + labels.back() + ", how would you rate your " +
                           feat.name + "?";
    }
    if (known) {
      if (!known->question_text.empty()) feat.question_text = known->question_text;
      feat.synonyms = known->synonyms;
    }
    data.features.push_back(std::move(feat));
  }

  for (const auto& [d, per_feature] : probs)
    for (const auto& [f, dist] : per_feature) {
      auto& counts = data.counts[d][f];
      for (const auto& label : infos.at(f).labels) counts[label] = 0.0;
      double total = 0.0;
      for (const auto& [v, p] : dist) total += p;
      for (const auto& [v, p] : dist) counts[v] = 100.0 * p / total;
    }
  return result;
}

}  // namespace bmbe
