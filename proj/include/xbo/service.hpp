#pragma once

// HTTP session service for the tuning workbench. Requests are dispatched by
// Service::handle, which is independent of the transport; listen() serves it
// over HTTP. Every session is persisted as a JSON-lines event log and recovered
// on startup.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "xbo/harness.hpp"
#include "xbo/llm_client.hpp"
#include "xbo/tntrules.hpp"

namespace xbo {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path scenarios = XBO_DEFAULT_SCENARIOS;
  std::filesystem::path log_dir = "xbo-logs";
  std::optional<LlmConfig> llm;
  ExplainConfig explainer;
};

using EnvLookup = std::function<const char*(const char*)>;

/// XBO_SCENARIOS, XBO_LOG_DIR, XBO_LLM_ENDPOINT, XBO_LLM_KEY.
void apply_env(ServiceConfig& config, const EnvLookup& getenv);

/// Keys: listen ("host:port"), scenarios, log_dir, llm {endpoint, key, timeout_s},
/// explainer {n_e, t_s, t_alpha, weights [4], seed}. Relative paths resolve
/// against `base_dir`. Throws ConfigError on unknown keys or wrong types.
void apply_config_json(ServiceConfig& config, const nlohmann::json& j, const std::filesystem::path& base_dir = {});
void apply_config_file(ServiceConfig& config, const std::filesystem::path& path);

/// Parses "host:port" or ":port".
void set_listen(ServiceConfig& config, const std::string& listen);

struct HttpResponse {
  int status = 200;
  std::string body;  // JSON

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

class Service {
 public:
  /// Loads scenarios, prepares the log directory and replays every session log in it.
  /// Throws LoadError / ConfigError when any of that fails.
  explicit Service(ServiceConfig config);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body,
                      const std::string& idempotency_key = "");

  /// Binds the listening socket (port 0 picks a free one) and returns the port.
  /// Throws ConfigError when the address cannot be bound.
  int bind();
  /// Serves requests until stop(); bind() first.
  void listen();
  void stop();

  std::size_t session_count() const;
  /// Snapshot of a session; empty when unknown.
  std::optional<Session> session(const std::string& id) const;
  const Harness& harness() const noexcept { return harness_; }
  const ServiceConfig& config() const noexcept { return config_; }

 private:
  struct Slot {
    std::mutex mutex;
    Session session;
    std::size_t persisted = 0;  // events already in the log
  };
  struct StoredResponse {
    std::string fingerprint;
    HttpResponse response;
  };

  HttpResponse dispatch(const std::string& method, const std::string& path, const std::string& body);
  HttpResponse create_session(const std::string& body);
  HttpResponse with_session(const std::string& id, const std::function<HttpResponse(Session&)>& f, bool mutates);
  void persist(Slot& slot, const Session& updated);
  std::shared_ptr<Slot> find_slot(const std::string& id) const;
  std::string new_session_id();
  void recover();
  void load_idempotency();
  void store_idempotency(const std::string& key, const StoredResponse& r);

  ServiceConfig config_;
  Harness harness_;
  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::mutex idempotency_mutex_;
  std::map<std::string, StoredResponse> idempotency_;
  std::map<std::string, std::shared_ptr<std::mutex>> key_locks_;

  struct Server;
  std::unique_ptr<Server> server_;
};

}  // namespace xbo
