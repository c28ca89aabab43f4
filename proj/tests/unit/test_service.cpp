#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include <arpa/inet.h>
#include <httplib.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "bmbe/evaluation.hpp"
#include "bmbe/service.hpp"
#include "test_support.hpp"

using namespace bmbe;
using namespace bmbe::testing;
using nlohmann::json;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("bmbe_service_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

ServiceOptions options(const TempDir& dir, std::string token = {}) {
  ServiceOptions o;
  o.store_dir = dir.path / "store";
  o.runs_dir = dir.path / "runs";
  o.bearer_token = std::move(token);
  return o;
}

json kb_json(const std::string& name) {
  std::ifstream in(fixture(name));
  return json::parse(in);
}

struct Reply {
  int status;
  json body;
};

Reply call(Service& s, const std::string& method, const std::string& path, const json& body = nullptr,
           std::map<std::string, std::string> query = {}, std::string auth = {}) {
  HttpRequest req{method, path, std::move(query), body.is_null() ? "" : body.dump(), std::move(auth)};
  const auto res = s.handle(req);
  json j;
  if (res.content_type == "application/json") j = json::parse(res.body);
  else j = res.body;
  return {res.status, j};
}

// Every key anywhere in a JSON document.
void collect_keys(const json& j, std::vector<std::string>& out) {
  if (j.is_object())
    for (const auto& [k, v] : j.items()) {
      out.push_back(k);
      collect_keys(v, out);
    }
  else if (j.is_array())
    for (const auto& v : j) collect_keys(v, out);
}

std::string start_human_session(Service& s, json config = json::object()) {
  const auto r = call(s, "POST", "/sessions", {{"kb_id", "sep"}, {"mode", "human_patient"}, {"config", config}});
  REQUIRE(r.status == 201);
  return r.body.at("session_id");
}

int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

}  // namespace

TEST_CASE("KB registration and stats") {
  TempDir dir("kb");
  Service s(options(dir));
  auto r = call(s, "POST", "/kbs", {{"id", "sep"}, {"kb", kb_json("separable_kb.json")}});
  CHECK(r.status == 201);
  CHECK(r.body.at("diseases") == 10);
  CHECK(r.body.at("features") == 30);
  r = call(s, "GET", "/kbs/sep/stats");
  CHECK(r.status == 200);
  CHECK(r.body.at("id") == "sep");
  CHECK(r.body.contains("per_pair_kl"));
  CHECK(call(s, "GET", "/kbs/nope/stats").status == 404);
  CHECK(call(s, "POST", "/kbs", kb_json("bad_sum_kb.json")).status == 400);
  CHECK(call(s, "POST", "/kbs", {{"id", "../etc"}, {"kb", kb_json("minimal_kb.json")}}).status == 400);
  r = call(s, "POST", "/kbs", kb_json("minimal_kb.json"));
  CHECK(r.status == 201);
  CHECK(r.body.at("id").get<std::string>().rfind("kb-", 0) == 0);
}

TEST_CASE("routing, auth and validation errors") {
  TempDir dir("errors");
  Service s(options(dir, "sekrit"));
  CHECK(call(s, "GET", "/sessions/x").status == 401);
  CHECK(call(s, "GET", "/sessions/x", nullptr, {}, "Bearer wrong").status == 401);
  const std::string ok = "Bearer sekrit";
  CHECK(call(s, "POST", "/kbs", {{"id", "sep"}, {"kb", kb_json("separable_kb.json")}}, {}, ok).status == 201);
  CHECK(call(s, "GET", "/sessions/nope", nullptr, {}, ok).status == 404);
  CHECK(call(s, "GET", "/nowhere", nullptr, {}, ok).status == 404);
  CHECK(call(s, "POST", "/sessions", {{"kb_id", "missing"}}, {}, ok).status == 404);
  const auto bad_tau = call(s, "POST", "/sessions", {{"kb_id", "sep"}, {"config", {{"tau", 1.5}}}}, {}, ok);
  CHECK(bad_tau.status == 400);
  CHECK(bad_tau.body.at("error").get<std::string>().find("invalid config") != std::string::npos);
  CHECK(call(s, "POST", "/sessions", {{"kb_id", "sep"}, {"mode", "telepathic"}}, {}, ok).status == 400);
  HttpRequest garbage{"POST", "/sessions", {}, "{not json", ok};
  CHECK(s.handle(garbage).status == 400);
  CHECK(call(s, "GET", "/runs/none/metrics.csv", nullptr, {}, ok).status == 404);
}

TEST_CASE("human-patient session over its whole life") {
  TempDir dir("human");
  Service s(options(dir));
  call(s, "POST", "/kbs", {{"id", "sep"}, {"kb", kb_json("separable_kb.json")}});
  const auto id = start_human_session(s, {{"tau", 0.9}, {"t_min", 2}, {"t_max", 6}});

  auto h = call(s, "GET", "/sessions/" + id).body;
  CHECK(h.at("state") == "awaiting_answer");
  CHECK(h.at("turn") == 0);
  CHECK(h.at("current_question").at("kind") == "intake");

  h = call(s, "POST", "/sessions/" + id + "/answer", {{"text", "I have chest pain and a cough."}}).body;
  CHECK(h.at("turn") == 0);
  CHECK(h.at("current_question").at("kind") == "feature");
  const auto q = h.at("current_question");
  CHECK_FALSE(q.at("feature").contains("id"));
  CHECK(q.at("text").get<std::string>().find("f_") == std::string::npos);

  SUBCASE("structured and text answers, then the terminal state") {
    h = call(s, "POST", "/sessions/" + id + "/answer", {{"text", "yes"}}).body;
    CHECK(h.at("turn") == 1);
    CHECK(call(s, "POST", "/sessions/" + id + "/answer", {{"structured", {{"value", "purple"}}}}).status == 400);
    CHECK(call(s, "POST", "/sessions/" + id + "/answer", json::object()).status == 400);
    int guard = 0;
    while (h.at("state") == "awaiting_answer" && guard++ < 20)
      h = call(s, "POST", "/sessions/" + id + "/answer", {{"structured", {{"value", "no"}, {"confidence_label", "likely"}}}}).body;
    CHECK(h.at("state") != "awaiting_answer");
    CHECK_FALSE(h.contains("current_question"));
    CHECK(h.at("outcome").contains("stop_reason"));
    CHECK(h.at("turn").get<int>() <= 6);
    CHECK(call(s, "POST", "/sessions/" + id + "/answer", {{"text", "yes"}}).status == 409);

    const auto patient = call(s, "GET", "/sessions/" + id + "/trace", nullptr, {{"audience", "patient"}}).body;
    CHECK(patient.contains("stop_reason"));
    std::vector<std::string> keys;
    collect_keys(patient, keys);
    for (const auto& k : keys) {
      CHECK(k.find("posterior") == std::string::npos);
      CHECK(k.find("entropy") == std::string::npos);
      CHECK(k.find("eig") == std::string::npos);
      CHECK(k.find("prob") == std::string::npos);
    }
    const auto clinician = call(s, "GET", "/sessions/" + id + "/trace", nullptr, {{"audience", "clinician"}}).body;
    CHECK(clinician.contains("stop_reason"));
    const auto file = read_trace(dir.path / "store" / "sessions" / (id + ".jsonl"));
    REQUIRE(clinician.at("turns").size() == file.turns.size());
    for (std::size_t i = 0; i < file.turns.size(); ++i)
      CHECK(clinician.at("turns")[i].at("posterior_top5") == to_json(file.turns[i]).at("posterior_top5"));
    CHECK(call(s, "GET", "/sessions/" + id + "/trace", nullptr, {{"audience", "public"}}).status == 400);
  }
  SUBCASE("retries with the same nonce are applied once") {
    const json body = {{"text", "no"}, {"turn_nonce", "n-1"}};
    CHECK(call(s, "POST", "/sessions/" + id + "/answer", body).body.at("turn") == 1);
    CHECK(call(s, "POST", "/sessions/" + id + "/answer", body).body.at("turn") == 1);
    CHECK(call(s, "POST", "/sessions/" + id + "/answer", {{"text", "no"}, {"turn_nonce", "n-2"}}).body.at("turn") == 2);
  }
  SUBCASE("an unusable answer is re-asked once") {
    h = call(s, "POST", "/sessions/" + id + "/answer", {{"text", "the weather is nice"}}).body;
    CHECK(h.at("turn") == 0);
    CHECK(h.at("current_question").at("reask") == true);
    CHECK(h.at("current_question").at("text").get<std::string>().rfind("Just to clarify: ", 0) == 0);
    h = call(s, "POST", "/sessions/" + id + "/answer", {{"text", "still the weather"}}).body;
    CHECK(h.at("turn") == 1);
    CHECK(h.at("current_question").at("reask") == false);
  }
}

TEST_CASE("structured very_likely answers equal oracle evidence") {
  TempDir dir("structured");
  Service s(options(dir));
  call(s, "POST", "/kbs", {{"id", "sep"}, {"kb", kb_json("separable_kb.json")}});
  const json cfg = {{"tau", 0.99}, {"t_min", 5}, {"t_max", 5}};
  const auto id = start_human_session(s, cfg);
  call(s, "POST", "/sessions/" + id + "/answer", {{"text", "nothing in particular"}});

  const auto kb = load_kb(fixture("separable_kb.json"));
  const auto profile = sample_patient(*kb, "d04", 12);
  DiagnosticSession ref(kb, std::make_shared<const Sensor>(), session_config_from_json(cfg), "ref");
  ref.intake("nothing in particular");
  const auto oracle = oracle_responder(profile);
  while (ref.state() == SessionState::awaiting_answer) {
    const auto& f = kb->feature(ref.pending()->feature);
    const auto a = oracle(f, "");
    ref.answer(a);
    call(s, "POST", "/sessions/" + id + "/answer", {{"structured", {{"value", a.parsed->value}, {"confidence_label", "very_likely"}}}});
  }
  const auto trace = call(s, "GET", "/sessions/" + id + "/trace", nullptr, {{"audience", "clinician"}}).body;
  REQUIRE(trace.at("turns").size() == ref.turns().size());
  for (std::size_t i = 0; i < ref.turns().size(); ++i) {
    const auto& t = trace.at("turns")[i];
    CHECK(t.at("asked_feature") == ref.turns()[i].asked_feature);
    CHECK(t.at("posterior_top5") == to_json(ref.turns()[i]).at("posterior_top5"));
  }
}

TEST_CASE("simulated sessions run to completion server-side") {
  TempDir dir("sim");
  Service s(options(dir));
  call(s, "POST", "/kbs", {{"id", "sep"}, {"kb", kb_json("separable_kb.json")}});
  const auto kb = load_kb(fixture("separable_kb.json"));
  const auto profile = sample_patient(*kb, "d07", 2);
  for (const auto* sensor : {"oracle", "patterns"}) {
    const auto r = call(s, "POST", "/sessions",
                        {{"kb_id", "sep"},
                         {"mode", {{"simulated", {{"profile", to_json(profile)}, {"persona", "dazed"}, {"sensor", sensor}}}}}});
    REQUIRE(r.status == 201);
    CHECK(r.body.at("state") != "awaiting_answer");
    CHECK(r.body.at("mode") == "simulated");
  }
  auto bad = to_json(profile);
  bad["disease_id"] = "d_unknown";
  CHECK(call(s, "POST", "/sessions", {{"kb_id", "sep"}, {"mode", "simulated"}, {"profile", bad}}).status == 400);
  CHECK(call(s, "POST", "/sessions", {{"kb_id", "sep"}, {"mode", "simulated"}}).status == 400);
  CHECK(s.session_count() == 2);
}

TEST_CASE("restart replays the store to identical states") {
  TempDir dir("restart");
  std::vector<std::string> ids;
  std::map<std::string, std::pair<json, json>> before;
  {
    Service s(options(dir));
    call(s, "POST", "/kbs", {{"id", "sep"}, {"kb", kb_json("separable_kb.json")}});
    const json cfg = {{"tau", 0.9}, {"t_min", 3}, {"t_max", 8}, {"policy", {{"mode", "focused"}}}};
    // Fresh, mid-session, mid re-ask, finished.
    ids.push_back(start_human_session(s, cfg));
    ids.push_back(start_human_session(s, cfg));
    call(s, "POST", "/sessions/" + ids[1] + "/answer", {{"text", "I have chest pain and nausea"}});
    for (const auto* a : {"yes", "I think so", "no"}) call(s, "POST", "/sessions/" + ids[1] + "/answer", {{"text", a}});
    ids.push_back(start_human_session(s, cfg));
    call(s, "POST", "/sessions/" + ids[2] + "/answer", {{"text", "a fever"}});
    call(s, "POST", "/sessions/" + ids[2] + "/answer", {{"text", "yes and no"}});
    ids.push_back(start_human_session(s, cfg));
    call(s, "POST", "/sessions/" + ids[3] + "/answer", {{"text", "fatigue"}});
    for (int i = 0; i < 10; ++i) call(s, "POST", "/sessions/" + ids[3] + "/answer", {{"structured", {{"value", "yes"}}}});
    for (const auto& id : ids)
      before[id] = {call(s, "GET", "/sessions/" + id).body,
                    call(s, "GET", "/sessions/" + id + "/trace", nullptr, {{"audience", "clinician"}}).body};
  }
  Service again(options(dir));
  CHECK(again.session_count() == ids.size());
  for (const auto& id : ids) {
    CAPTURE(id);
    CHECK(call(again, "GET", "/sessions/" + id).body == before[id].first);
    CHECK(call(again, "GET", "/sessions/" + id + "/trace", nullptr, {{"audience", "clinician"}}).body == before[id].second);
  }
  // The re-asked question continues where it left off.
  const auto h = call(again, "POST", "/sessions/" + ids[2] + "/answer", {{"text", "yes"}}).body;
  CHECK(h.at("turn") == 1);
  CHECK(call(again, "GET", "/kbs/sep/stats").status == 200);
}

TEST_CASE("stop before or during start-up never leaves listen() blocked") {
  for (int i = 0; i < 20; ++i) {
    TempDir dir("stop" + std::to_string(i));
    Service s(options(dir));
    const int port = free_port();
    std::thread t([&] { s.listen("127.0.0.1", port); });
    if (i % 2) std::this_thread::sleep_for(std::chrono::microseconds(50 * i));
    s.stop();
    t.join();
  }
  TempDir dir("stop-first");
  Service s(options(dir));
  s.stop();
  CHECK_FALSE(s.listen("127.0.0.1", free_port()));
}

TEST_CASE("run metrics are served as CSV") {
  TempDir dir("runs");
  std::filesystem::create_directories(dir.path / "runs" / "r1");
  std::ofstream(dir.path / "runs" / "r1" / "metrics.csv") << kMetricsCsvHeader << "\n0.90,1,1,1,1,1,3\n";
  Service s(options(dir));
  const auto res = s.handle({"GET", "/runs/r1/metrics.csv", {}, "", ""});
  CHECK(res.status == 200);
  CHECK(res.content_type == "text/csv");
  CHECK(res.body.rfind(kMetricsCsvHeader, 0) == 0);
}

TEST_CASE("HTTP binding") {
  TempDir dir("http");
  Service s(options(dir, "tok"));
  s.register_kb("sep", load_kb(fixture("separable_kb.json")));
  const int port = free_port();
  std::thread t([&] { s.listen("127.0.0.1", port); });
  struct Join {
    Service& s;
    std::thread& t;
    ~Join() {
      s.stop();
      t.join();
    }
  } join{s, t};
  httplib::Client cli("127.0.0.1", port);
  std::shared_ptr<httplib::Result> res;
  for (int i = 0; i < 100; ++i) {
    auto r = cli.Get("/kbs/sep/stats");
    if (r) {
      res = std::make_shared<httplib::Result>(std::move(r));
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  REQUIRE(res);
  CHECK((*res)->status == 401);
  cli.set_bearer_token_auth("tok");
  auto created = cli.Post("/sessions", json{{"kb_id", "sep"}}.dump(), "application/json");
  REQUIRE_MESSAGE(created, httplib::to_string(created.error()));
  CHECK(created->status == 201);
  CHECK(created->get_header_value("Access-Control-Allow-Origin") == "*");
  const auto id = json::parse(created->body).at("session_id").get<std::string>();
  auto got = cli.Get(("/sessions/" + id + "/trace?audience=patient").c_str());
  REQUIRE(got);
  CHECK(got->status == 200);
  CHECK(json::parse(got->body).at("audience") == "patient");
  auto pre = cli.Options("/sessions");
  REQUIRE(pre);
  CHECK(pre->status / 100 == 2);
}
