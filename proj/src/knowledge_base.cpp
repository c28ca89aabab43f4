#include "bmbe/knowledge_base.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "bmbe/rng.hpp"

namespace bmbe {

namespace {

constexpr double kSumTolerance = 1e-6;

std::string format_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

bool parse_double(std::string_view s, double& out) {
  std::string tmp(s);
  char* end = nullptr;
  out = std::strtod(tmp.c_str(), &end);
  return end != tmp.c_str() && *end == '\0' && std::isfinite(out);
}

}  // namespace

KbError::KbError(std::string path, const std::string& message)
    : std::runtime_error(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}

std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::binary: return "binary";
    case FeatureKind::categorical: return "categorical";
    case FeatureKind::ordinal: return "ordinal";
    case FeatureKind::numeric: return "numeric";
  }
  return "binary";
}

FeatureKind feature_kind_from_string(std::string_view s) {
  if (s == "binary") return FeatureKind::binary;
  if (s == "categorical") return FeatureKind::categorical;
  if (s == "ordinal") return FeatureKind::ordinal;
  if (s == "numeric") return FeatureKind::numeric;
  throw KbError("", "unknown feature kind '" + std::string(s) + "'");
}

std::string demographic_key(std::string_view age_bin, std::string_view sex) {
  std::string key(age_bin);
  key += '|';
  key += sex;
  return key;
}

KnowledgeBase::KnowledgeBase(KbData data) : data_(std::move(data)) {
  validate();
  compile();
}

void KnowledgeBase::validate() const {
  if (data_.diseases.size() < 2) throw KbError("diseases", "at least two diseases required");
  if (data_.features.empty()) throw KbError("features", "at least one feature required");

  std::set<std::string> disease_ids;
  bool any_prior = false;
  for (std::size_t i = 0; i < data_.diseases.size(); ++i) {
    const auto& d = data_.diseases[i];
    const std::string path = "diseases[" + std::to_string(i) + "]";
    if (d.id.empty()) throw KbError(path + ".id", "empty disease id");
    if (!disease_ids.insert(d.id).second) throw KbError(path + ".id", "duplicate disease id '" + d.id + "'");
    if (!(d.prior_count >= 0.0) || !std::isfinite(d.prior_count))
      throw KbError(path + ".prior_count", "prior_count must be a finite nonnegative number");
    if (d.prior_count > 0.0) any_prior = true;
    for (const auto& [key, n] : d.demographic_counts) {
      if (!(n >= 0.0)) throw KbError(path + ".demographic_counts." + key, "negative count");
      if (data_.demographics) {
        const auto bar = key.find('|');
        const bool ok = bar != std::string::npos &&
                        std::count(data_.demographics->age_bins.begin(), data_.demographics->age_bins.end(),
                                   key.substr(0, bar)) > 0 &&
                        std::count(data_.demographics->sexes.begin(), data_.demographics->sexes.end(),
                                   key.substr(bar + 1)) > 0;
        if (!ok) throw KbError(path + ".demographic_counts." + key, "undeclared demographic cell");
      }
    }
  }
  if (!any_prior) throw KbError("diseases", "at least one disease needs prior_count > 0");

  std::set<std::string> feature_ids;
  for (std::size_t i = 0; i < data_.features.size(); ++i) {
    const auto& f = data_.features[i];
    const std::string path = "features[" + std::to_string(i) + "]";
    if (f.id.empty()) throw KbError(path + ".id", "empty feature id");
    if (!feature_ids.insert(f.id).second) throw KbError(path + ".id", "duplicate feature id '" + f.id + "'");
    if (f.values.size() < 2) throw KbError(path + ".values", "at least two values required");
    std::set<std::string> labels(f.values.begin(), f.values.end());
    if (labels.size() != f.values.size()) throw KbError(path + ".values", "duplicate value label");
    if (labels.count("unknown") || labels.count("clarification"))
      throw KbError(path + ".values", "'unknown' and 'clarification' are reserved labels");
    if (f.kind == FeatureKind::binary && labels != std::set<std::string>{"yes", "no"})
      throw KbError(path + ".values", "binary features take exactly {yes, no}");
    if (f.kind == FeatureKind::numeric) {
      double prev = -INFINITY;
      for (const auto& v : f.values) {
        double x;
        if (!parse_double(v, x)) throw KbError(path + ".values", "numeric value '" + v + "' is not a number");
        if (!(x > prev)) throw KbError(path + ".values", "numeric grid must be strictly increasing");
        prev = x;
      }
      if (f.numeric_scale) {
        const auto& s = *f.numeric_scale;
        if (!(s.step > 0.0) || !(s.max >= s.min))
          throw KbError(path + ".numeric_scale", "invalid numeric scale");
      }
    }
  }

  for (const auto& neg : data_.negated_features)
    if (!feature_ids.count(neg)) throw KbError("negated_features", "unknown feature '" + neg + "'");

  for (const auto& [d_id, per_feature] : data_.counts) {
    if (!disease_ids.count(d_id)) throw KbError("counts." + d_id, "unknown disease id");
    for (const auto& [f_id, per_value] : per_feature) {
      const std::string path = "counts." + d_id + "." + f_id;
      auto it = std::find_if(data_.features.begin(), data_.features.end(),
                             [&](const Feature& f) { return f.id == f_id; });
      if (it == data_.features.end()) throw KbError(path, "unknown feature id");
      double sum = 0.0;
      for (const auto& [v, n] : per_value) {
        if (std::find(it->values.begin(), it->values.end(), v) == it->values.end())
          throw KbError(path + "." + v, "undeclared value");
        if (!(n >= 0.0) || !std::isfinite(n)) throw KbError(path + "." + v, "count must be finite and nonnegative");
        sum += n;
      }
      if (std::abs(sum - 100.0) > kSumTolerance)
        throw KbError(path, "sums to " + format_number(sum) + " (expected 100)");
    }
  }
}

void KnowledgeBase::compile() {
  const std::size_t k = data_.diseases.size();
  const std::size_t n = data_.features.size();
  padded_k_ = (k + 3) / 4 * 4;

  auto ids = std::make_shared<std::vector<std::string>>();
  for (std::size_t d = 0; d < k; ++d) {
    ids->push_back(data_.diseases[d].id);
    disease_lookup_.emplace(data_.diseases[d].id, d);
  }
  disease_ids_ = std::move(ids);

  value_lookup_.resize(n);
  offsets_.resize(n);
  std::size_t total = 0;
  for (std::size_t f = 0; f < n; ++f) {
    const auto& feat = data_.features[f];
    feature_lookup_.emplace(feat.id, f);
    for (std::size_t v = 0; v < feat.values.size(); ++v) value_lookup_[f].emplace(feat.values[v], v);
    offsets_[f] = total;
    total += feat.values.size() * padded_k_;
    max_values_ = std::max(max_values_, feat.values.size());
  }

  lik_.assign(total, 0.0);
  log_lik_.assign(total, 0.0);
  present_.assign(k * n, false);

  for (std::size_t d = 0; d < k; ++d) {
    const auto dit = data_.counts.find(data_.diseases[d].id);
    for (std::size_t f = 0; f < n; ++f) {
      const auto& feat = data_.features[f];
      const std::size_t nv = feat.values.size();
      const std::map<std::string, double>* counts = nullptr;
      if (dit != data_.counts.end()) {
        auto fit = dit->second.find(feat.id);
        if (fit != dit->second.end()) counts = &fit->second;
      }
      present_[d * n + f] = counts != nullptr;
      double denom = static_cast<double>(nv);
      if (counts)
        for (const auto& [v, c] : *counts) denom += c;
      for (std::size_t v = 0; v < nv; ++v) {
        double alpha = 1.0;
        if (counts) {
          auto cit = counts->find(feat.values[v]);
          if (cit != counts->end()) alpha += cit->second;
        }
        const double p = alpha / denom;
        lik_[offsets_[f] + v * padded_k_ + d] = p;
        log_lik_[offsets_[f] + v * padded_k_ + d] = std::log(p);
      }
    }
  }

  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(to_json(data_).dump())));
  hash_ = buf;
}

std::optional<std::size_t> KnowledgeBase::find_disease(std::string_view id) const {
  auto it = disease_lookup_.find(std::string(id));
  if (it == disease_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> KnowledgeBase::find_feature(std::string_view id) const {
  auto it = feature_lookup_.find(std::string(id));
  if (it == feature_lookup_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> KnowledgeBase::find_value(std::size_t f, std::string_view value) const {
  const auto& lookup = value_lookup_.at(f);
  auto it = lookup.find(std::string(value));
  if (it == lookup.end()) return std::nullopt;
  return it->second;
}

std::size_t KnowledgeBase::disease_index(std::string_view id) const {
  if (auto d = find_disease(id)) return *d;
  throw std::invalid_argument("unknown disease id '" + std::string(id) + "'");
}

std::size_t KnowledgeBase::feature_index(std::string_view id) const {
  if (auto f = find_feature(id)) return *f;
  throw std::invalid_argument("unknown feature id '" + std::string(id) + "'");
}

std::size_t KnowledgeBase::value_index(std::size_t f, std::string_view value) const {
  if (auto v = find_value(f, value)) return *v;
  throw std::invalid_argument("unknown value '" + std::string(value) + "' for feature '" + feature(f).id + "'");
}

double KnowledgeBase::likelihood(std::string_view d, std::string_view f, std::string_view v) const {
  const auto fi = feature_index(f);
  return likelihood(disease_index(d), fi, value_index(fi, v));
}

bool KnowledgeBase::is_negated(std::string_view feature_id) const {
  return std::find(data_.negated_features.begin(), data_.negated_features.end(), feature_id) !=
         data_.negated_features.end();
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const KbData& data) {
  using nlohmann::json;
  json j;
  j["version"] = data.version;
  json diseases = json::array();
  for (const auto& d : data.diseases) {
    json jd{{"id", d.id}, {"name", d.name}, {"prior_count", d.prior_count}};
    if (!d.demographic_counts.empty()) jd["demographic_counts"] = d.demographic_counts;
    diseases.push_back(std::move(jd));
  }
  j["diseases"] = std::move(diseases);
  json features = json::array();
  for (const auto& f : data.features) {
    json jf{{"id", f.id},
            {"name", f.name},
            {"kind", std::string(to_string(f.kind))},
            {"values", f.values},
            {"question_text", f.question_text}};
    if (f.numeric_scale)
      jf["numeric_scale"] = {{"min", f.numeric_scale->min}, {"max", f.numeric_scale->max}, {"step", f.numeric_scale->step}};
    if (!f.synonyms.empty()) jf["synonyms"] = f.synonyms;
    features.push_back(std::move(jf));
  }
  j["features"] = std::move(features);
  j["counts"] = data.counts;
  j["negated_features"] = data.negated_features;
  if (data.demographics)
    j["demographics"] = {{"age_bins", data.demographics->age_bins}, {"sexes", data.demographics->sexes}};
  return j;
}

KbData kb_data_from_json(const nlohmann::json& j) {
  auto require = [](const nlohmann::json& obj, const char* key, const std::string& path) -> const nlohmann::json& {
    if (!obj.is_object() || !obj.contains(key)) throw KbError(path.empty() ? key : path + "." + key, "missing field");
    return obj.at(key);
  };

  KbData data;
  try {
    if (!j.is_object()) throw KbError("", "top-level value must be an object");
    data.version = require(j, "version", "").get<int>();
    const auto& diseases = require(j, "diseases", "");
    if (!diseases.is_array()) throw KbError("diseases", "must be an array");
    for (std::size_t i = 0; i < diseases.size(); ++i) {
      const std::string path = "diseases[" + std::to_string(i) + "]";
      const auto& jd = diseases[i];
      Disease d;
      d.id = require(jd, "id", path).get<std::string>();
      d.name = jd.value("name", d.id);
      d.prior_count = jd.value("prior_count", 1.0);
      if (jd.contains("demographic_counts"))
        d.demographic_counts = jd.at("demographic_counts").get<std::map<std::string, double>>();
      data.diseases.push_back(std::move(d));
    }
    const auto& features = require(j, "features", "");
    if (!features.is_array()) throw KbError("features", "must be an array");
    for (std::size_t i = 0; i < features.size(); ++i) {
      const std::string path = "features[" + std::to_string(i) + "]";
      const auto& jf = features[i];
      Feature f;
      f.id = require(jf, "id", path).get<std::string>();
      f.name = jf.value("name", f.id);
      try {
        f.kind = feature_kind_from_string(require(jf, "kind", path).get<std::string>());
      } catch (const KbError& e) {
        throw KbError(path + ".kind", e.what());
      }
      f.values = require(jf, "values", path).get<std::vector<std::string>>();
      f.question_text = jf.value("question_text", "");
      if (jf.contains("numeric_scale")) {
        const auto& s = jf.at("numeric_scale");
        f.numeric_scale = NumericScale{s.at("min").get<double>(), s.at("max").get<double>(), s.at("step").get<double>()};
      }
      if (jf.contains("synonyms")) f.synonyms = jf.at("synonyms").get<std::vector<std::string>>();
      data.features.push_back(std::move(f));
    }
    if (j.contains("counts")) data.counts = j.at("counts").get<CountTable>();
    if (j.contains("negated_features")) data.negated_features = j.at("negated_features").get<std::vector<std::string>>();
    if (j.contains("demographics")) {
      const auto& jd = j.at("demographics");
      data.demographics = Demographics{jd.at("age_bins").get<std::vector<std::string>>(),
                                       jd.at("sexes").get<std::vector<std::string>>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw KbError("", std::string("schema violation: ") + e.what());
  }
  return data;
}

std::shared_ptr<const KnowledgeBase> load_kb(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw KbError("", "cannot open knowledge base file '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw KbError("", std::string("parse error: ") + e.what());
  }
  return std::make_shared<const KnowledgeBase>(kb_data_from_json(j));
}

void save_kb(const KbData& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << to_json(data).dump(1) << '\n';
}

}  // namespace bmbe
