#include "bmbe/service.hpp"

#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <httplib.h>

#include "bmbe/evaluation.hpp"
#include "bmbe/experiments.hpp"
#include "bmbe/kb_analysis.hpp"

namespace bmbe {

using nlohmann::json;

namespace {

constexpr const char* kIntakePrompt = "Please tell me, in your own words, what brings you in today.";

// Thrown inside handlers and mapped straight onto a status code.
struct HttpError : std::runtime_error {
  int status;
  HttpError(int s, const std::string& msg) : std::runtime_error(msg), status(s) {}
};

HttpResponse json_response(int status, const json& body) { return {status, body.dump(), "application/json"}; }
HttpResponse error_response(int status, const std::string& msg) { return json_response(status, {{"error", msg}}); }

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '/'))
    if (!part.empty()) parts.push_back(part);
  return parts;
}

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool safe_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) return false;
  return id != "." && id != "..";
}

ParseOutcome outcome_from(const ParsedEvidence& p) { return {p.value, p.confidence_label, p.tier, p.note}; }

json feature_schema(const Feature& f) {
  // Display fields only: no ids reach the patient.
  return {{"name", f.name}, {"kind", to_string(f.kind)}, {"values", f.values}};
}

}  // namespace

Service::Service(ServiceOptions options) : options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  std::shared_ptr<const ExternalClient> client;
  if (options_.external.enabled) client = std::make_shared<const ExternalClient>(options_.external);
  sensor_ = std::make_shared<const Sensor>(PatternRules::shipped(), client);
  std::filesystem::create_directories(options_.store_dir / "sessions");
  std::filesystem::create_directories(options_.store_dir / "kbs");
  load_store();
}

Service::~Service() = default;

std::size_t Service::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

void Service::register_kb(const std::string& id, std::shared_ptr<const KnowledgeBase> kb) {
  if (!safe_id(id)) throw std::invalid_argument("invalid kb id '" + id + "'");
  save_kb(kb->data(), options_.store_dir / "kbs" / (id + ".json"));
  std::lock_guard lock(mu_);
  kbs_[id] = std::move(kb);
}

std::shared_ptr<const KnowledgeBase> Service::find_kb(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = kbs_.find(id);
  if (it == kbs_.end()) throw HttpError(404, "unknown kb '" + id + "'");
  return it->second;
}

std::shared_ptr<Service::Entry> Service::find_session(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw HttpError(404, "unknown session '" + id + "'");
  return it->second;
}

std::string Service::new_session_id() {
  static thread_local std::mt19937_64 gen{std::random_device{}()};
  std::lock_guard lock(mu_);
  char buf[40];
  std::snprintf(buf, sizeof buf, "s%06llu-%08llx", static_cast<unsigned long long>(++id_counter_),
                static_cast<unsigned long long>(gen() & 0xffffffffULL));
  return buf;
}

// ---------------------------------------------------------------------------
// Persistence

void Service::persist(const std::string& id, const Entry& e) const {
  const auto dir = options_.store_dir / "sessions";
  const auto& s = *e.session;
  json meta = {{"kb_id", e.kb_id},
               {"mode", e.mode},
               {"profile_id", s.header().profile_id},
               {"config", to_json(s.config())}};
  const auto result = s.result();
  if (result.incomplete) meta["aborted"] = result.error;
  write_atomic(dir / (id + ".meta.json"), meta.dump() + "\n");
  if (s.intake_done()) write_atomic(dir / (id + ".jsonl"), trace_jsonl(s.header(), s.turns()));

  const auto pending_path = dir / (id + ".pending.json");
  if (s.pending() && !s.pending()->attempts.empty()) {
    json attempts = json::array();
    for (const auto& a : s.pending()->attempts)
      attempts.push_back({{"question_text", a.question_text}, {"raw_answer", a.raw_answer}, {"parsed", to_json(a.parsed)}});
    write_atomic(pending_path,
                 json{{"feature_id", s.kb().feature(s.pending()->feature).id}, {"attempts", attempts}}.dump() + "\n");
  } else {
    std::error_code ec;
    std::filesystem::remove(pending_path, ec);
  }
}

void Service::load_store() {
  for (const auto& ent : std::filesystem::directory_iterator(options_.store_dir / "kbs")) {
    if (ent.path().extension() != ".json") continue;
    kbs_[ent.path().stem().string()] = load_kb(ent.path());
  }
  const auto dir = options_.store_dir / "sessions";
  for (const auto& ent : std::filesystem::directory_iterator(dir)) {
    const auto name = ent.path().filename().string();
    const std::string suffix = ".meta.json";
    if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
    const auto id = name.substr(0, name.size() - suffix.size());
    const auto meta = json::parse(read_file(ent.path()));
    auto kb_it = kbs_.find(meta.at("kb_id").get<std::string>());
    if (kb_it == kbs_.end()) throw std::runtime_error("session " + id + " refers to a missing kb");

    auto e = std::make_shared<Entry>();
    e->kb_id = kb_it->first;
    e->mode = meta.value("mode", std::string("human_patient"));
    e->session = std::make_unique<DiagnosticSession>(kb_it->second, sensor_, session_config_from_json(meta.at("config")),
                                                     id, meta.value("profile_id", std::string()));
    auto& s = *e->session;

    // Replay the recorded evidence; the sensor is bypassed so replay never
    // depends on parser or network behaviour.
    auto replay = [&](const std::string& feature_id, const std::vector<Attempt>& attempts) {
      for (const auto& a : attempts) {
        if (!s.pending() || s.kb().feature(s.pending()->feature).id != feature_id)
          throw std::runtime_error("session " + id + ": trace diverges from replay at feature " + feature_id);
        s.answer(Answer{a.raw_answer, outcome_from(a.parsed)});
      }
    };
    if (std::filesystem::exists(dir / (id + ".jsonl"))) {
      const auto tf = read_trace(dir / (id + ".jsonl"));
      s.intake_triples(tf.header.intake, tf.header.intake_text);
      for (const auto& t : tf.turns) replay(t.asked_feature, t.attempts);
    }
    if (std::filesystem::exists(dir / (id + ".pending.json"))) {
      const auto p = json::parse(read_file(dir / (id + ".pending.json")));
      std::vector<Attempt> attempts;
      for (const auto& a : p.at("attempts"))
        attempts.push_back({a.at("question_text").get<std::string>(), a.at("raw_answer").get<std::string>(),
                            parsed_from_json(a.at("parsed"))});
      replay(p.at("feature_id").get<std::string>(), attempts);
    }
    if (meta.contains("aborted")) s.abort(meta.at("aborted").get<std::string>());
    sessions_[id] = std::move(e);
    ++id_counter_;
  }
}

// ---------------------------------------------------------------------------
// Handlers

json Service::handle_json(const std::string& id, const Entry& e) const {
  const auto& s = *e.session;
  json h = {{"session_id", id}, {"kb_id", e.kb_id}, {"mode", e.mode}, {"state", to_string(s.state())}, {"turn", s.turn()}};
  if (s.state() == SessionState::awaiting_answer) {
    if (!s.intake_done()) {
      h["current_question"] = {{"text", kIntakePrompt}, {"kind", "intake"}, {"feature", nullptr}};
    } else {
      const auto& p = *s.pending();
      h["current_question"] = {{"text", p.text},
                               {"kind", "feature"},
                               {"reask", !p.attempts.empty()},
                               {"feature", feature_schema(s.kb().feature(p.feature))}};
    }
  } else {
    const auto r = s.result();
    json outcome = {{"result", to_string(r.outcome)}, {"stop_reason", to_string(r.stop_reason)}};
    if (r.diagnosis) {
      const auto& d = s.kb().disease(s.kb().disease_index(*r.diagnosis));
      outcome["diagnosis"] = {{"name", d.name}};
      outcome["confidence_band"] = to_string(confidence_indicator(std::min(1.0, r.final_max_posterior)));
    } else {
      outcome["message"] = "referred for further evaluation";
    }
    h["outcome"] = outcome;
  }
  return h;
}

HttpResponse Service::post_kb(const json& body) {
  json kb_json = body.contains("kb") ? body.at("kb") : body;
  std::shared_ptr<const KnowledgeBase> kb;
  try {
    kb = std::make_shared<const KnowledgeBase>(kb_data_from_json(kb_json));
  } catch (const std::exception& e) {
    throw HttpError(400, e.what());
  }
  const std::string id = body.contains("id") ? body.at("id").get<std::string>() : "kb-" + kb->hash();
  if (!safe_id(id)) throw HttpError(400, "invalid kb id");
  register_kb(id, kb);
  return json_response(201, {{"id", id},
                             {"hash", kb->hash()},
                             {"diseases", kb->disease_count()},
                             {"features", kb->feature_count()}});
}

HttpResponse Service::kb_stats(const std::string& id) {
  const auto kb = find_kb(id);
  auto j = to_json(bmbe::kb_stats(*kb));
  j["id"] = id;
  j["hash"] = kb->hash();
  return json_response(200, j);
}

HttpResponse Service::create_session(const json& body) {
  if (!body.contains("kb_id")) throw HttpError(400, "kb_id is required");
  const auto kb_id = body.at("kb_id").get<std::string>();
  const auto kb = find_kb(kb_id);

  SessionConfig cfg;
  try {
    cfg = session_config_from_json(body.value("config", json::object()));
    cfg.validate();
  } catch (const std::exception& e) {
    throw HttpError(400, std::string("invalid config: ") + e.what());
  }

  std::string mode = "human_patient";
  json sim;
  if (body.contains("mode")) {
    const auto& m = body.at("mode");
    if (m.is_string()) {
      mode = m.get<std::string>();
      if (mode == "simulated") sim = body;
    } else if (m.is_object() && m.contains("simulated")) {
      mode = "simulated";
      sim = m.at("simulated");
    }
  }
  if (mode != "human_patient" && mode != "simulated") throw HttpError(400, "unknown mode '" + mode + "'");

  const auto id = new_session_id();
  auto e = std::make_shared<Entry>();
  e->kb_id = kb_id;
  e->mode = mode;

  if (mode == "simulated") {
    if (!sim.contains("profile")) throw HttpError(400, "simulated mode needs a profile");
    PatientProfile profile;
    Persona persona;
    SensorMode sensor = SensorMode::patterns;
    try {
      profile = patient_from_json(sim.at("profile"));
      persona = default_persona(archetype_from_string(sim.value("persona", std::string("plain"))));
      sensor = sensor_mode_from_string(sim.value("sensor", std::string("patterns")));
      kb->disease_index(profile.disease_id);
    } catch (const std::exception& ex) {
      throw HttpError(400, ex.what());
    }
    e->session = std::make_unique<DiagnosticSession>(kb, sensor_, cfg, id, profile.id);
    auto& s = *e->session;
    const bool oracle = sensor == SensorMode::oracle;
    const auto responder = oracle ? oracle_responder(profile) : simulated_responder(profile, persona, derive_seed(cfg.seed, profile.id));
    try {
      if (oracle) s.intake_triples({});
      else s.intake(profile.chief_complaint);
      while (s.state() == SessionState::awaiting_answer) {
        const auto& p = *s.pending();
        s.answer(responder(kb->feature(p.feature), p.text));
      }
    } catch (const std::exception& ex) {
      s.abort(ex.what());
    }
  } else {
    e->session = std::make_unique<DiagnosticSession>(kb, sensor_, cfg, id);
    if (body.contains("narrative")) e->session->intake(body.at("narrative").get<std::string>());
  }

  persist(id, *e);
  auto handle = handle_json(id, *e);
  {
    std::lock_guard lock(mu_);
    sessions_[id] = std::move(e);
  }
  return json_response(201, handle);
}

HttpResponse Service::get_session(const std::string& id) {
  auto e = find_session(id);
  std::lock_guard lock(e->mu);
  return json_response(200, handle_json(id, *e));
}

HttpResponse Service::post_answer(const std::string& id, const json& body) {
  auto e = find_session(id);
  std::lock_guard lock(e->mu);
  auto& s = *e->session;
  const auto nonce = body.value("turn_nonce", std::string());
  if (!nonce.empty() && nonce == e->last_nonce) return json_response(200, handle_json(id, *e));
  if (s.state() != SessionState::awaiting_answer) throw HttpError(409, "session is " + std::string(to_string(s.state())));

  if (!s.intake_done()) {
    if (!body.contains("text")) throw HttpError(400, "the opening answer must be free text");
    s.intake(body.at("text").get<std::string>());
  } else if (body.contains("structured")) {
    const auto& st = body.at("structured");
    ParseOutcome p;
    try {
      p.value = st.at("value").get<std::string>();
      const auto label = confidence_label_from_string(st.value("confidence_label", std::string("very_likely")));
      if (!label) throw std::invalid_argument("unknown confidence label");
      p.confidence_label = label;
      p.tier = EvidenceTier::oracle;
      const auto& f = s.kb().feature(s.pending()->feature);
      if (p.value != kUnknownValue && !s.kb().find_value(s.kb().feature_index(f.id), p.value) &&
          f.kind != FeatureKind::numeric)
        throw std::invalid_argument("'" + p.value + "' is not an allowed value");
      s.answer(Answer{p.value, p});
    } catch (const std::logic_error& ex) {
      throw HttpError(400, ex.what());
    }
  } else if (body.contains("text")) {
    s.answer(Answer{body.at("text").get<std::string>(), std::nullopt});
  } else {
    throw HttpError(400, "answer needs text or structured");
  }
  e->last_nonce = nonce;
  persist(id, *e);
  return json_response(200, handle_json(id, *e));
}

HttpResponse Service::get_trace(const std::string& id, const std::string& audience) {
  auto e = find_session(id);
  std::lock_guard lock(e->mu);
  const auto& s = *e->session;
  json turns = json::array();
  json out = {{"session_id", id}, {"state", to_string(s.state())}, {"audience", audience}};
  if (audience == "clinician") {
    for (const auto& t : s.turns()) turns.push_back(to_json(t));
    out["header"] = to_json(s.header());
    out["turns"] = turns;
    out["prior_top5"] = nullptr;
    json prior = json::array();
    for (const auto& r : top_k(s.prior_belief(), std::min<std::size_t>(5, s.prior_belief().size())))
      prior.push_back(to_json(r));
    out["prior_top5"] = prior;
    if (s.state() != SessionState::awaiting_answer) {
      const auto r = s.result();
      out["result"] = to_json(r);
      out["stop_reason"] = to_string(r.stop_reason);
    }
  } else if (audience == "patient") {
    for (const auto& t : s.turns()) {
      json attempts = json::array();
      for (const auto& a : t.attempts) attempts.push_back({{"question_text", a.question_text}, {"answer", a.raw_answer}});
      turns.push_back({{"turn", t.turn}, {"exchanges", attempts}});
    }
    out["turns"] = turns;
    if (s.state() != SessionState::awaiting_answer) {
      out["stop_reason"] = to_string(s.result().stop_reason);
      out["outcome"] = handle_json(id, *e).at("outcome");
    }
  } else {
    throw HttpError(400, "audience must be patient or clinician");
  }
  return json_response(200, out);
}

HttpResponse Service::run_metrics(const std::string& id) {
  if (!safe_id(id)) throw HttpError(400, "invalid run id");
  const auto path = options_.runs_dir / id / "metrics.csv";
  if (!std::filesystem::exists(path)) throw HttpError(404, "unknown run '" + id + "'");
  return {200, read_file(path), "text/csv"};
}

HttpResponse Service::handle(const HttpRequest& req) {
  try {
    if (!options_.bearer_token.empty() && req.authorization != "Bearer " + options_.bearer_token)
      return error_response(401, "missing or invalid bearer token");
    const auto parts = split_path(req.path);
    auto body = [&] {
      if (req.body.empty()) return json::object();
      try {
        return json::parse(req.body);
      } catch (const std::exception&) {
        throw HttpError(400, "request body is not valid JSON");
      }
    };
    const auto n = parts.size();
    if (req.method == "POST" && n == 1 && parts[0] == "kbs") return post_kb(body());
    if (req.method == "GET" && n == 3 && parts[0] == "kbs" && parts[2] == "stats") return kb_stats(parts[1]);
    if (req.method == "POST" && n == 1 && parts[0] == "sessions") return create_session(body());
    if (req.method == "GET" && n == 2 && parts[0] == "sessions") return get_session(parts[1]);
    if (req.method == "POST" && n == 3 && parts[0] == "sessions" && parts[2] == "answer")
      return post_answer(parts[1], body());
    if (req.method == "GET" && n == 3 && parts[0] == "sessions" && parts[2] == "trace") {
      auto it = req.query.find("audience");
      return get_trace(parts[1], it == req.query.end() ? "patient" : it->second);
    }
    if (req.method == "GET" && n == 3 && parts[0] == "runs" && parts[2] == "metrics.csv") return run_metrics(parts[1]);
    return error_response(404, "no route for " + req.method + " " + req.path);
  } catch (const HttpError& e) {
    return error_response(e.status, e.what());
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, e.what());
  } catch (const std::invalid_argument& e) {
    return error_response(400, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

// ---------------------------------------------------------------------------

bool Service::listen(const std::string& host, int port) {
  auto bridge = [this](const httplib::Request& req, httplib::Response& res) {
    HttpRequest r{req.method, req.path, {}, req.body, req.get_header_value("Authorization")};
    for (const auto& [k, v] : req.params) r.query[k] = v;
    const auto out = handle(r);
    res.status = out.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(out.body, out.content_type);
  };
  server_->Get(".*", bridge);
  server_->Post(".*", bridge);
  server_->Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.status = 204;
  });
  // Publish that we are about to serve before looking at the stop flag; stop()
  // does the reverse, so one of the two always sees the other.
  listening_ = true;
  bool ok = false;
  if (!stop_requested_ && server_->bind_to_port(host, port)) ok = server_->listen_after_bind();
  listening_ = false;
  return ok;
}

void Service::stop() {
  stop_requested_ = true;
  while (listening_ && !server_->is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  server_->stop();
}

}  // namespace bmbe
