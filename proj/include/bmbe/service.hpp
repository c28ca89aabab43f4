#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "bmbe/knowledge_base.hpp"
#include "bmbe/session.hpp"

namespace httplib {
class Server;
}

namespace bmbe {

struct ServiceOptions {
  std::filesystem::path store_dir = "bmbe_store";  // sessions/ and kbs/ live here
  std::filesystem::path runs_dir = "runs";         // GET /runs/{id}/metrics.csv
  std::string bearer_token;                        // empty: no auth
  ExternalClientConfig external;
};

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
  std::string authorization;
};

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Live-session service. Sessions persist as trace JSONL (plus a small meta
/// file and, mid re-ask, a pending file) and are rebuilt from them on start.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();

  /// Routes one request; used by the HTTP binding and directly by tests.
  HttpResponse handle(const HttpRequest& req);

  void register_kb(const std::string& id, std::shared_ptr<const KnowledgeBase> kb);

  /// Blocks serving HTTP until stop() is called; stop() may come from any
  /// thread at any time, including before the socket is bound.
  bool listen(const std::string& host, int port);
  void stop();

  std::size_t session_count() const;

 private:
  struct Entry {
    std::mutex mu;
    std::string kb_id;
    std::string mode;
    std::unique_ptr<DiagnosticSession> session;
    std::string last_nonce;  // retried submissions with the same nonce are not reapplied
  };

  HttpResponse post_kb(const nlohmann::json& body);
  HttpResponse kb_stats(const std::string& id);
  HttpResponse create_session(const nlohmann::json& body);
  HttpResponse get_session(const std::string& id);
  HttpResponse post_answer(const std::string& id, const nlohmann::json& body);
  HttpResponse get_trace(const std::string& id, const std::string& audience);
  HttpResponse run_metrics(const std::string& id);

  std::shared_ptr<const KnowledgeBase> find_kb(const std::string& id) const;
  std::shared_ptr<Entry> find_session(const std::string& id) const;
  nlohmann::json handle_json(const std::string& id, const Entry& e) const;
  void persist(const std::string& id, const Entry& e) const;
  void load_store();
  std::string new_session_id();

  ServiceOptions options_;
  std::shared_ptr<const Sensor> sensor_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const KnowledgeBase>> kbs_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t id_counter_ = 0;
  std::unique_ptr<httplib::Server> server_;
  std::atomic<bool> stop_requested_{false};
  std::atomic<bool> listening_{false};
};

}  // namespace bmbe
