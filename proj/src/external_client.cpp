#include <cstdlib>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "bmbe/sensor.hpp"

namespace bmbe {

bool external_globally_disabled() {
  const char* env = std::getenv("BMBE_EXTERNAL_DISABLED");
  return env && std::string_view(env) == "1";
}

ExternalClient::ExternalClient(ExternalClientConfig config) : config_(std::move(config)) {
  if (config_.template_dir.empty()) config_.template_dir = default_data_dir() / "templates";
}

bool ExternalClient::active() const { return config_.enabled && !config_.endpoint.empty() && !external_globally_disabled(); }

std::string ExternalClient::render(std::string_view template_id, const std::map<std::string, std::string>& slots) const {
  const auto path = config_.template_dir / (std::string(template_id) + ".txt");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing prompt template " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  for (const auto& [key, value] : slots) {
    const std::string needle = "{" + key + "}";
    for (std::size_t at = text.find(needle); at != std::string::npos; at = text.find(needle, at + value.size()))
      text.replace(at, needle.size(), value);
  }
  return text;
}

ExternalReply ExternalClient::complete(std::string_view template_id,
                                       const std::map<std::string, std::string>& slots) const {
  if (!active()) return {std::nullopt, "external client disabled"};

  // endpoint = scheme://host[:port]/path
  const auto scheme_end = config_.endpoint.find("://");
  const auto path_start = config_.endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string base = config_.endpoint.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);

  nlohmann::json body;
  try {
    body = {{"template_id", template_id}, {"slots", slots}, {"prompt", render(template_id, slots)}};
  } catch (const std::exception& e) {
    return {std::nullopt, e.what()};
  }

  httplib::Client cli(base);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  cli.set_connection_timeout(static_cast<time_t>(secs.count()), static_cast<time_t>(usecs.count()));
  cli.set_read_timeout(static_cast<time_t>(secs.count()), static_cast<time_t>(usecs.count()));
  auto res = cli.Post(path, body.dump(), "application/json");
  if (!res) return {std::nullopt, "transport error: " + httplib::to_string(res.error())};
  if (res->status != 200) return {std::nullopt, "HTTP " + std::to_string(res->status)};
  return {res->body, {}};
}

}  // namespace bmbe
