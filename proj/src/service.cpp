#include "xbo/service.hpp"

#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <vector>

#include "xbo/errors.hpp"
#include "xbo/session_log.hpp"

// After the project headers: httplib pulls in <resolv.h>, whose macros clash with Eigen.
#include <httplib.h>

namespace xbo {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kIdempotencyFile = "idempotency.keys";

HttpResponse json_response(int status, const ojson& body) { return {status, body.dump()}; }

HttpResponse error_response(int status, const std::string& code, const std::string& message) {
  ojson j;
  j["code"] = code;
  j["message"] = message;
  return json_response(status, j);
}

int status_for(const std::string& code) {
  static const std::map<std::string, int> kStatus{
      {"session_not_found", 404},     {"trials_exhausted", 409},  {"egg_completed", 409},
      {"session_completed", 409},     {"egg_not_active", 409},    {"already_rated", 409},
      {"egg_not_completed", 409},     {"no_completed_egg", 409},  {"unknown_scenario", 422},
      {"out_of_bounds", 422},         {"fixed_parameter_modified", 422},
      {"no_adjustment", 422},         {"uncookable", 422},        {"invalid_rating", 422},
  };
  const auto it = kStatus.find(code);
  return it == kStatus.end() ? 422 : it->second;
}

HttpResponse protocol_error(const ProtocolError& e) { return error_response(status_for(e.code()), e.code(), e.what()); }

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path.substr(0, path.find('?'))) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) parts.push_back(std::move(cur));
  return parts;
}

nlohmann::json parse_body(const std::string& body) {
  if (body.empty()) return nlohmann::json::object();
  auto j = nlohmann::json::parse(body);
  if (!j.is_object()) throw ConfigError("request body must be a JSON object");
  return j;
}

std::string fingerprint(const std::string& method, const std::string& path, const std::string& body) {
  std::string canonical = body;
  try {
    if (!body.empty()) canonical = nlohmann::json::parse(body).dump();
  } catch (const nlohmann::json::exception&) {
  }
  return method + " " + path + "\n" + canonical;
}

std::string config_string(const nlohmann::json& j, const char* key) {
  if (!j.at(key).is_string()) throw ConfigError(std::string("config field '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() || base.empty() ? p : base / p; }

Harness make_harness(const ServiceConfig& config) {
  HarnessOptions options;
  options.llm = config.llm;
  return Harness(load_scenarios(config.scenarios), options);
}

}  // namespace

void set_listen(ServiceConfig& config, const std::string& listen) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw ConfigError("listen address must be host:port, got '" + listen + "'");
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(listen.substr(colon + 1), &used);
    if (used != listen.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("bad port in listen address '" + listen + "'");
  }
  if (port < 0 || port > 65535) throw ConfigError("port out of range in '" + listen + "'");
  if (colon > 0) config.host = listen.substr(0, colon);
  config.port = port;
}

void apply_env(ServiceConfig& config, const EnvLookup& getenv) {
  if (const char* v = getenv("XBO_LISTEN"); v && *v) set_listen(config, v);
  if (const char* v = getenv("XBO_SCENARIOS"); v && *v) config.scenarios = v;
  if (const char* v = getenv("XBO_LOG_DIR"); v && *v) config.log_dir = v;
  if (const char* v = getenv("XBO_LLM_ENDPOINT"); v && *v) {
    if (!config.llm) config.llm = LlmConfig{};
    config.llm->endpoint = v;
  }
  if (const char* v = getenv("XBO_LLM_KEY"); v && *v) {
    if (!config.llm) config.llm = LlmConfig{};
    config.llm->key = v;
  }
}

void apply_config_json(ServiceConfig& config, const nlohmann::json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "listen") {
        set_listen(config, config_string(j, "listen"));
      } else if (key == "scenarios") {
        config.scenarios = resolve(config_string(j, "scenarios"), base_dir);
      } else if (key == "log_dir") {
        config.log_dir = resolve(config_string(j, "log_dir"), base_dir);
      } else if (key == "llm") {
        if (value.is_null()) {
          config.llm.reset();
          continue;
        }
        LlmConfig llm = config.llm.value_or(LlmConfig{});
        for (const auto& [k, v] : value.items()) {
          if (k == "endpoint") llm.endpoint = v.get<std::string>();
          else if (k == "key") llm.key = v.get<std::string>();
          else if (k == "timeout_s") llm.timeout_s = v.get<double>();
          else throw ConfigError("unknown config field 'llm." + k + "'");
        }
        config.llm = llm;
      } else if (key == "explainer") {
        ExplainConfig& e = config.explainer;
        for (const auto& [k, v] : value.items()) {
          if (k == "n_e") {
            e.n_e = v.get<std::size_t>();
          } else if (k == "t_s") {
            if (v.is_null()) e.t_s.reset();
            else e.t_s = v.get<double>();
          } else if (k == "t_alpha") {
            e.t_alpha = v.get<double>();
          } else if (k == "seed") {
            e.seed = v.get<std::uint64_t>();
          } else if (k == "weights") {
            const auto w = v.get<std::vector<double>>();
            if (w.size() != 4) throw ConfigError("config field 'explainer.weights' needs 4 values");
            e.weights = RuleWeights{w[0], w[1], w[2], w[3]};
          } else {
            throw ConfigError("unknown config field 'explainer." + k + "'");
          }
        }
      } else {
        throw ConfigError("unknown config field '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

void apply_config_file(ServiceConfig& config, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path.string() + "': " + e.what());
  }
  apply_config_json(config, j, path.parent_path());
}

struct Service::Server {
  httplib::Server http;
  int port = -1;
};

Service::Service(ServiceConfig config) : config_(std::move(config)), harness_(make_harness(config_)) {
  std::error_code ec;
  fs::create_directories(config_.log_dir, ec);
  if (!fs::is_directory(config_.log_dir)) {
    throw ConfigError("log directory '" + config_.log_dir.string() + "' cannot be created");
  }
  const fs::path probe = config_.log_dir / ".write-probe";
  if (!std::ofstream(probe)) throw ConfigError("log directory '" + config_.log_dir.string() + "' is not writable");
  fs::remove(probe, ec);
  recover();
  load_idempotency();
}

Service::~Service() { stop(); }

void Service::recover() {
  for (const auto& entry : fs::directory_iterator(config_.log_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".jsonl") continue;
    const fs::path& path = entry.path();
    Session session;
    try {
      const auto events = read_events(path);
      session = harness_.replay(events);
    } catch (const std::exception& e) {
      throw LoadError("session log '" + path.string() + "': " + e.what());
    }
    // A torn final line was dropped; rewrite so later appends start on a clean line.
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    const auto size = static_cast<std::streamoff>(in.tellg());
    char last = '\n';
    if (size > 0) {
      in.seekg(size - 1);
      in.get(last);
    }
    if (last != '\n') {
      const fs::path tmp = path.string() + ".tmp";
      {
        std::ofstream out(tmp, std::ios::trunc);
        for (const auto& e : session.history) write_event(out, e);
      }
      fs::rename(tmp, path);
    }
    auto slot = std::make_shared<Slot>();
    slot->persisted = session.history.size();
    const std::string id = session.id;
    slot->session = std::move(session);
    sessions_[id] = std::move(slot);
  }
}

void Service::load_idempotency() {
  std::ifstream in(config_.log_dir / kIdempotencyFile);
  std::string line;
  while (std::getline(in, line)) {
    try {
      const auto j = nlohmann::json::parse(line);
      idempotency_[j.at("key").get<std::string>()] =
          StoredResponse{j.at("fingerprint").get<std::string>(),
                         HttpResponse{j.at("status").get<int>(), j.at("body").get<std::string>()}};
    } catch (const nlohmann::json::exception&) {
      // torn line from an interrupted write; the request simply is not deduplicated
    }
  }
}

void Service::store_idempotency(const std::string& key, const StoredResponse& r) {
  idempotency_[key] = r;
  nlohmann::json j;
  j["key"] = key;
  j["fingerprint"] = r.fingerprint;
  j["status"] = r.response.status;
  j["body"] = r.response.body;
  std::ofstream out(config_.log_dir / kIdempotencyFile, std::ios::app);
  out << j.dump() << '\n';
  out.flush();
}

std::size_t Service::session_count() const {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

std::shared_ptr<Service::Slot> Service::find_slot(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::optional<Session> Service::session(const std::string& id) const {
  auto slot = find_slot(id);
  if (!slot) return std::nullopt;
  std::lock_guard lock(slot->mutex);
  return slot->session;
}

std::string Service::new_session_id() {
  static thread_local std::mt19937_64 gen{std::random_device{}()};
  for (;;) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << gen();
    const std::string id = os.str();
    std::lock_guard lock(sessions_mutex_);
    if (!sessions_.count(id)) return id;
  }
}

void Service::persist(Slot& slot, const Session& updated) {
  if (updated.history.size() > slot.persisted) {
    std::vector<Event> fresh(updated.history.begin() + static_cast<std::ptrdiff_t>(slot.persisted),
                             updated.history.end());
    append_events(session_log_path(config_.log_dir, updated.id), fresh);
  }
  slot.persisted = updated.history.size();
  slot.session = updated;
}

HttpResponse Service::handle(const std::string& method, const std::string& path, const std::string& body,
                             const std::string& idempotency_key) {
  if (method != "POST" || idempotency_key.empty()) return dispatch(method, path, body);

  std::shared_ptr<std::mutex> key_lock;
  {
    std::lock_guard lock(idempotency_mutex_);
    auto& m = key_locks_[idempotency_key];
    if (!m) m = std::make_shared<std::mutex>();
    key_lock = m;
  }
  std::lock_guard serial(*key_lock);
  const std::string fp = fingerprint(method, path, body);
  {
    std::lock_guard lock(idempotency_mutex_);
    if (const auto it = idempotency_.find(idempotency_key); it != idempotency_.end()) {
      if (it->second.fingerprint != fp) {
        return error_response(422, "idempotency_key_reused",
                              "Idempotency-Key was already used for a different request");
      }
      return it->second.response;
    }
  }
  HttpResponse r = dispatch(method, path, body);
  if (r.status < 500) {
    std::lock_guard lock(idempotency_mutex_);
    store_idempotency(idempotency_key, StoredResponse{fp, r});
  }
  return r;
}

HttpResponse Service::dispatch(const std::string& method, const std::string& path, const std::string& body) {
  const auto parts = split_path(path);
  const auto n = parts.size();
  const auto route = [&](std::initializer_list<const char*> shape) {
    if (shape.size() != n) return false;
    std::size_t i = 0;
    for (const char* s : shape) {
      if (*s != '*' && parts[i] != s) return false;
      ++i;
    }
    return true;
  };
  const auto allow = [&](const char* m) { return method == m; };
  const auto not_allowed = [&] { return error_response(405, "method_not_allowed", method + " not allowed on " + path); };

  try {
    if (route({"scenarios"})) {
      if (!allow("GET")) return not_allowed();
      auto out = ojson::array();
      for (const auto& s : harness_.scenarios()) out.push_back(scenario_public_json(s));
      return json_response(200, out);
    }
    if (route({"sessions"})) {
      if (!allow("POST")) return not_allowed();
      return create_session(body);
    }
    if (route({"sessions", "*"})) {
      if (!allow("GET")) return not_allowed();
      return with_session(parts[1], [&](Session& s) { return json_response(200, session_to_json(s, harness_)); },
                          false);
    }
    if (route({"sessions", "*", "metrics"})) {
      if (!allow("GET")) return not_allowed();
      return with_session(
          parts[1], [&](Session& s) { return json_response(200, metrics_to_json(session_metrics(s))); }, false);
    }
    if (route({"sessions", "*", "trials"})) {
      if (!allow("POST")) return not_allowed();
      const auto req = parse_body(body);
      return with_session(
          parts[1],
          [&](Session& s) {
            std::string scenario_id;
            if (req.contains("scenario_id")) {
              if (!req["scenario_id"].is_string()) throw ConfigError("scenario_id must be a string");
              scenario_id = req["scenario_id"].get<std::string>();
            } else if (const EggRecord* egg = s.current_egg()) {
              scenario_id = egg->scenario_id;
            } else {
              throw ProtocolError("session_completed", "session already completed");
            }
            if (!req.contains("parameters")) throw ConfigError("missing field 'parameters'");
            const EggParameters p = parameters_from_json(req["parameters"]);
            const TrialOutcome out = harness_.submit_trial(s, scenario_id, p);
            ojson j;
            j["scenario_id"] = scenario_id;
            j["trial"] = trial_to_json(out.record);
            j["egg_completed"] = out.egg_completed;
            j["egg_outcome"] = to_string(out.egg_outcome);
            j["session_completed"] = out.session_completed;
            j["session"] = session_to_json(s, harness_);
            return json_response(201, j);
          },
          true);
    }
    if (route({"sessions", "*", "eggs", "current", "explanation"})) {
      if (!allow("GET")) return not_allowed();
      return with_session(
          parts[1],
          [&](Session& s) {
            const EggRecord* egg = s.current_egg();
            if (!egg) throw ProtocolError("session_completed", "session already completed");
            const std::string id = egg->scenario_id;
            const RenderedExplanation r = harness_.get_explanation(s, id);
            ojson j;
            j["scenario_id"] = id;
            const auto rendered = rendered_to_json(r);
            j["format"] = rendered["format"];
            j["payload"] = rendered["payload"];
            const auto fb = s.explanation_fallback.find(id);
            j["llm_fallback"] = fb != s.explanation_fallback.end() && fb->second;
            return json_response(200, j);
          },
          true);
    }
    if (route({"sessions", "*", "eggs", "current", "difficulty"})) {
      if (!allow("POST")) return not_allowed();
      const auto req = parse_body(body);
      return with_session(
          parts[1],
          [&](Session& s) {
            if (!req.contains("rating") || !req["rating"].is_number_integer()) {
              throw ProtocolError("invalid_rating", "rating must be an integer from 1 to 7");
            }
            std::string scenario_id;
            if (req.contains("scenario_id")) {
              if (!req["scenario_id"].is_string()) throw ConfigError("scenario_id must be a string");
              scenario_id = req["scenario_id"].get<std::string>();
            }
            const auto before = s.eggs;
            const auto rating = req["rating"].get<long long>();
            harness_.record_difficulty(s, scenario_id,
                                       rating < 1 || rating > 7 ? 0 : static_cast<int>(rating));
            for (std::size_t i = 0; i < s.eggs.size(); ++i) {
              if (s.eggs[i].difficulty != before[i].difficulty) scenario_id = s.eggs[i].scenario_id;
            }
            ojson j;
            j["scenario_id"] = scenario_id;
            j["difficulty"] = rating;
            return json_response(200, j);
          },
          true);
    }
    return error_response(404, "not_found", "no route for " + path);
  } catch (const ProtocolError& e) {
    return protocol_error(e);
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, "invalid_json", e.what());
  } catch (const ConfigError& e) {
    return error_response(422, "invalid_request", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal_error", e.what());
  }
}

HttpResponse Service::create_session(const std::string& body) {
  const auto req = parse_body(body);
  if (!req.contains("condition") || !req["condition"].is_string()) {
    throw ConfigError("field 'condition' must be one of visual, rules, language");
  }
  const Condition condition = condition_from_string(req["condition"].get<std::string>());
  std::uint64_t seed = 0;
  if (req.contains("seed")) {
    if (!req["seed"].is_number_unsigned()) throw ConfigError("field 'seed' must be a non-negative integer");
    seed = req["seed"].get<std::uint64_t>();
  } else {
    seed = std::random_device{}();
  }
  const std::string id = new_session_id();
  auto slot = std::make_shared<Slot>();
  std::lock_guard slot_lock(slot->mutex);
  persist(*slot, harness_.start_session(condition, seed, id));
  {
    std::lock_guard lock(sessions_mutex_);
    sessions_[id] = slot;
  }
  return json_response(201, session_to_json(slot->session, harness_));
}

HttpResponse Service::with_session(const std::string& id, const std::function<HttpResponse(Session&)>& f,
                                   bool mutates) {
  auto slot = find_slot(id);
  if (!slot) return error_response(404, "session_not_found", "no session '" + id + "'");
  std::lock_guard lock(slot->mutex);
  Session working = slot->session;
  HttpResponse r = f(working);
  if (mutates) persist(*slot, working);
  return r;
}

int Service::bind() {
  if (!server_) {
    server_ = std::make_unique<Server>();
    const auto forward = [this](const httplib::Request& req, httplib::Response& res) {
      const HttpResponse r = handle(req.method, req.path, req.body, req.get_header_value("Idempotency-Key"));
      res.status = r.status;
      res.set_content(r.body, "application/json");
    };
    auto& http = server_->http;
    // Plain SO_REUSEADDR: SO_REUSEPORT would let a second server share a port in use.
    http.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    http.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    http.Get(".*", forward);
    http.Post(".*", forward);
    http.Put(".*", forward);
    http.Delete(".*", forward);
    http.Patch(".*", forward);
    http.Options(".*", [](const httplib::Request&, httplib::Response& res) {
      res.status = 204;
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type, Idempotency-Key");
    });
  }
  if (server_->port >= 0) return server_->port;
  const int port = config_.port == 0 ? server_->http.bind_to_any_port(config_.host)
                                     : (server_->http.bind_to_port(config_.host, config_.port) ? config_.port : -1);
  if (port < 0) {
    throw ConfigError("cannot listen on " + config_.host + ":" + std::to_string(config_.port));
  }
  server_->port = port;
  return port;
}

void Service::listen() {
  if (!server_ || server_->port < 0) bind();
  server_->http.listen_after_bind();
}

void Service::stop() {
  if (server_) server_->http.stop();
}

}  // namespace xbo
