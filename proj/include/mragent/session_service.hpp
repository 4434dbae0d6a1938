#pragma once

// Session service: live sessions behind a small versioned web API. The
// SessionService class holds all behaviour; HttpSessionServer only maps it
// onto `/v1` routes and a server-sent event stream.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "mragent/sim_harness.hpp"
#include "mragent/vision_http.hpp"

namespace mragent::service {

using Json = nlohmann::ordered_json;

class UnknownScenario : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class UnknownSession : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class HistoryEvicted : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct SessionHandle {
  std::string session_id;
  double created_at = 0.0;  // wall clock, seconds since epoch
  std::string binding;
};

struct PostAck {
  bool accepted = true;
  std::uint64_t next_seq = 0;
};

struct ServiceOptions {
  orchestrator::EngineConfig config;
  LatencyModel latency;
  std::uint64_t seed = 7;
  std::size_t history_cap = 10000;
  // When set, sessions call this recognition endpoint over HTTP instead of
  // the in-process stub.
  std::optional<vision::EndpointConfig> live_vision;
};

/// Builds the session a binding describes. Shared with in-process drivers so
/// that both paths construct identical sessions.
inline std::unique_ptr<orchestrator::Session> make_session(const std::string& id, const sim::Scenario& scenario,
                                                           const sim::Room* room,
                                                           std::shared_ptr<const AgentAssets> assets,
                                                           const ServiceOptions& options, std::uint64_t session_seed) {
  auto sampler = std::make_shared<LatencySampler>(session_seed);
  auto fixtures = assets->fixtures;
  for (auto& [k, v] : sim::scenario_fixtures(scenario)) fixtures.insert_or_assign(k, v);
  auto services = orchestrator::simulated_services(assets, options.latency, sampler, std::move(fixtures));
  if (options.live_vision)
    services.vision = std::make_shared<vision::HttpVisionClient>(*options.live_vision, options.latency.vision.mean);
  auto store = std::make_shared<const anchors::AnchorStore>(sim::build_store(scenario, options.config.placement_threshold));
  orchestrator::SceneCapture capture = room ? sim::scene_capture(*room)
                                            : orchestrator::SceneCapture([](const std::optional<vision::Ray>&) {
                                                return std::string("unbound/overview");
                                              });
  return std::make_unique<orchestrator::Session>(id, options.config, options.latency, std::move(assets),
                                                 std::move(services), std::move(store), std::move(capture));
}

class SessionService {
 public:
  SessionService(std::shared_ptr<const AgentAssets> assets, std::vector<sim::Scenario> scenarios, ServiceOptions options)
      : assets_(std::move(assets)), scenarios_(std::move(scenarios)), options_(std::move(options)) {
    throw_first(options_.config.violations());
  }

  /// `binding` is "<scenario>" or "<scenario>/<room>"; the latter starts
  /// with the room's anchors loaded.
  SessionHandle create_session(const std::string& binding) {
    const auto slash = binding.find('/');
    const std::string scenario_name = binding.substr(0, slash);
    const sim::Scenario* scenario = nullptr;
    for (const auto& s : scenarios_)
      if (s.name == scenario_name) scenario = &s;
    if (!scenario) throw UnknownScenario("unknown scenario '" + scenario_name + "'");
    const sim::Room* room = nullptr;
    if (slash != std::string::npos) {
      room = scenario->room(binding.substr(slash + 1));
      if (!room) throw UnknownScenario("unknown room in binding '" + binding + "'");
    }

    std::lock_guard lock(registry_mutex_);
    const std::uint64_t index = next_index_++;
    const std::string id = "s" + std::to_string(index + 1);
    auto entry = std::make_shared<Entry>();
    entry->session = make_session(id, *scenario, room, assets_, options_, session_seed(index));
    entry->handle = {id,
                     std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count(),
                     binding};
    append(*entry, entry->session->open());
    if (room) append(*entry, entry->session->bind_room(room->room_id));
    sessions_.emplace(id, entry);
    return entry->handle;
  }

  std::uint64_t session_seed(std::uint64_t index) const { return options_.seed + index; }

  PostAck post_event(const std::string& id, const fsm::UserEvent& event) {
    if (std::holds_alternative<fsm::FillerStarted>(event) || std::holds_alternative<fsm::ReplyStarted>(event))
      throw orchestrator::MalformedEvent("agent-side events cannot be posted");
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    append(*entry, entry->session->post(event));
    return {true, entry->next_seq};
  }

  /// Room initialization from a camera view or from known labels.
  PostAck load_room(const std::string& id, const std::optional<std::string>& scene_ref,
                    const std::set<std::string>& labels) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    if (scene_ref)
      append(*entry, entry->session->initialize_room_from_view(*scene_ref));
    else
      append(*entry, entry->session->initialize_room(labels));
    return {true, entry->next_seq};
  }

  /// Serialized events with seq >= `from`, oldest first.
  std::vector<std::pair<std::uint64_t, std::string>> events_from(const std::string& id, std::uint64_t from) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    return collect(*entry, from);
  }

  /// Blocks up to `timeout` for events at or after `from`.
  std::vector<std::pair<std::uint64_t, std::string>> wait_events(const std::string& id, std::uint64_t from,
                                                                 std::chrono::milliseconds timeout) {
    auto entry = find(id);
    std::unique_lock lock(entry->mutex);
    entry->cv.wait_for(lock, timeout, [&] { return entry->next_seq > from || stopping_.load(); });
    return collect(*entry, from);
  }

  /// True once the session has ended and `from` is past its last event.
  bool drained(const std::string& id, std::uint64_t from) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    return entry->session->ended() && from >= entry->next_seq;
  }

  std::string trace_ndjson(const std::string& id) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    return wire::trace_to_ndjson(entry->session->trace());
  }

  std::vector<orchestrator::QueryMetrics> metrics(const std::string& id) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    return entry->session->metrics();
  }

  /// Stateless chatbot call, with optional per-conversation follow-up context.
  dialogue::Reply chat(const dialogue::Query& query, const std::optional<std::string>& conversation_id) {
    std::lock_guard lock(chat_mutex_);
    dialogue::DialogueContext context;
    if (conversation_id) context = conversations_[*conversation_id];
    auto response = dialogue::respond(query, std::move(context), assets_->kb, assets_->lexicon);
    if (conversation_id) conversations_[*conversation_id] = std::move(response.context);
    return response.reply;
  }

  void shutdown() {
    stopping_ = true;
    std::lock_guard lock(registry_mutex_);
    for (auto& [id, e] : sessions_) e->cv.notify_all();
  }
  bool stopping() const { return stopping_.load(); }
  std::vector<std::string> bindings() const {
    std::vector<std::string> out;
    for (const auto& s : scenarios_) {
      out.push_back(s.name);
      for (const auto& r : s.rooms) out.push_back(s.name + "/" + r.room_id);
    }
    return out;
  }

 private:
  struct Entry {
    std::mutex mutex;
    std::condition_variable cv;
    std::unique_ptr<orchestrator::Session> session;
    SessionHandle handle;
    std::deque<std::pair<std::uint64_t, std::string>> history;
    std::uint64_t next_seq = 0;
  };

  std::shared_ptr<Entry> find(const std::string& id) {
    std::lock_guard lock(registry_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw UnknownSession("unknown session '" + id + "'");
    return it->second;
  }

  void append(Entry& entry, const std::vector<orchestrator::OutputEvent>& events) {
    for (const auto& e : events) {
      entry.history.emplace_back(e.seq, wire::to_json(e).dump());
      entry.next_seq = e.seq + 1;
      while (entry.history.size() > options_.history_cap) entry.history.pop_front();
    }
    if (!events.empty()) entry.cv.notify_all();
  }

  std::vector<std::pair<std::uint64_t, std::string>> collect(const Entry& entry, std::uint64_t from) const {
    if (!entry.history.empty() && from < entry.history.front().first)
      throw HistoryEvicted("events before seq " + std::to_string(entry.history.front().first) + " were evicted");
    std::vector<std::pair<std::uint64_t, std::string>> out;
    for (const auto& item : entry.history)
      if (item.first >= from) out.push_back(item);
    return out;
  }

  std::shared_ptr<const AgentAssets> assets_;
  std::vector<sim::Scenario> scenarios_;
  ServiceOptions options_;
  std::mutex registry_mutex_;
  std::unordered_map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t next_index_ = 0;
  std::mutex chat_mutex_;
  std::map<std::string, dialogue::DialogueContext> conversations_;
  std::atomic<bool> stopping_{false};
};

// ---- HTTP front --------------------------------------------------------------------

class HttpSessionServer {
 public:
  explicit HttpSessionServer(SessionService& service, std::string console_dir = {}) : service_(service) {
    routes();
    if (!console_dir.empty()) server_.set_mount_point("/", console_dir);
  }
  ~HttpSessionServer() { stop(); }
  HttpSessionServer(const HttpSessionServer&) = delete;
  HttpSessionServer& operator=(const HttpSessionServer&) = delete;

  int start(const std::string& host = "127.0.0.1", int port = 0) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
      if (port_ < 0) throw vision::PortUnavailable("no free port on " + host);
    } else {
      if (!server_.bind_to_port(host, port)) throw vision::PortUnavailable("cannot bind " + host + ":" + std::to_string(port));
      port_ = port;
    }
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stopped.
  void listen(const std::string& host, int port) {
    if (!server_.bind_to_port(host, port)) throw vision::PortUnavailable("cannot bind " + host + ":" + std::to_string(port));
    port_ = port;
    server_.listen_after_bind();
  }

  void stop() {
    service_.shutdown();
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  int port() const { return port_; }

 private:
  static void reply_json(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }
  static void reply_error(httplib::Response& res, int status, std::string_view code, std::string_view message) {
    reply_json(res, status, Json{{"error", std::string(code)}, {"message", std::string(message)}});
  }

  template <typename F>
  static void guarded(httplib::Response& res, F&& body) {
    try {
      body();
    } catch (const UnknownSession& e) {
      reply_error(res, 404, "UnknownSession", e.what());
    } catch (const UnknownScenario& e) {
      reply_error(res, 404, "UnknownScenario", e.what());
    } catch (const orchestrator::SessionEndedError& e) {
      reply_error(res, 409, "SessionEnded", e.what());
    } catch (const HistoryEvicted& e) {
      reply_error(res, 410, "HistoryEvicted", e.what());
    } catch (const orchestrator::MalformedEvent& e) {
      reply_error(res, 400, "MalformedEvent", e.what());
    } catch (const wire::WireError& e) {
      reply_error(res, 400, "MalformedEvent", e.what());
    } catch (const nlohmann::json::exception& e) {
      reply_error(res, 400, "MalformedRequest", e.what());
    } catch (const std::exception& e) {
      reply_error(res, 500, "InternalError", e.what());
    }
  }

  static std::uint64_t from_param(const httplib::Request& req) {
    if (!req.has_param("from")) return 0;
    return std::stoull(req.get_param_value("from"));
  }

  void routes() {
    server_.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
      Json bindings = Json::array();
      for (const auto& b : service_.bindings()) bindings.push_back(b);
      reply_json(res, 200, Json{{"status", "ok"}, {"bindings", bindings}});
    });

    server_.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = Json::parse(req.body);
        const auto handle = service_.create_session(body.at("binding").get<std::string>());
        reply_json(res, 201,
                   Json{{"session_id", handle.session_id}, {"created_at", handle.created_at}, {"binding", handle.binding}});
      });
    });

    server_.Post(R"(/v1/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto event = wire::event_from(Json::parse(req.body));
        const auto ack = service_.post_event(req.matches[1], event);
        reply_json(res, 202, Json{{"accepted", ack.accepted}, {"next_seq", ack.next_seq}});
      });
    });

    server_.Post(R"(/v1/sessions/([^/]+)/room)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = Json::parse(req.body);
        std::optional<std::string> scene_ref;
        std::set<std::string> labels;
        if (body.contains("scene_ref")) scene_ref = body.at("scene_ref").get<std::string>();
        if (body.contains("labels")) labels = body.at("labels").get<std::set<std::string>>();
        if (!scene_ref && labels.empty()) throw wire::WireError("room request needs scene_ref or labels");
        const auto ack = service_.load_room(req.matches[1], scene_ref, labels);
        reply_json(res, 202, Json{{"accepted", ack.accepted}, {"next_seq", ack.next_seq}});
      });
    });

    server_.Get(R"(/v1/sessions/([^/]+)/history)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::string body = "[";
        bool first = true;
        for (const auto& [seq, json] : service_.events_from(req.matches[1], from_param(req))) {
          if (!first) body += ",";
          body += json;
          first = false;
        }
        body += "]";
        res.status = 200;
        res.set_content(body, "application/json");
      });
    });

    server_.Get(R"(/v1/sessions/([^/]+)/trace)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        res.status = 200;
        res.set_content(service_.trace_ndjson(req.matches[1]), "application/x-ndjson");
      });
    });

    // Server-sent events: replay from `from`, then follow live until the
    // session ends or the client goes away.
    server_.Get(R"(/v1/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = req.matches[1];
        const std::uint64_t from = from_param(req);
        service_.events_from(id, from);  // validates id and history window up front
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider(
            "text/event-stream", [this, id, next = from](std::size_t, httplib::DataSink& sink) mutable {
              try {
                for (const auto& [seq, json] : service_.wait_events(id, next, std::chrono::milliseconds(200))) {
                  const std::string frame = "id: " + std::to_string(seq) + "\ndata: " + json + "\n\n";
                  if (!sink.write(frame.data(), frame.size())) return false;
                  next = seq + 1;
                }
                if (service_.stopping() || service_.drained(id, next)) {
                  sink.done();
                }
                return true;
              } catch (const std::exception&) {
                return false;
              }
            });
      });
    });

    server_.Post("/v1/chat", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = Json::parse(req.body);
        dialogue::Query query{body.at("text").get<std::string>(), std::nullopt};
        if (text::trim(query.text).empty()) throw wire::WireError("text must be non-empty");
        if (body.contains("object") && !body.at("object").is_null()) query.object_label = body.at("object").get<std::string>();
        std::optional<std::string> conversation;
        if (body.contains("conversation_id")) conversation = body.at("conversation_id").get<std::string>();
        reply_json(res, 200, dialogue::reply_to_json(service_.chat(query, conversation)));
      });
    });
  }

  SessionService& service_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace mragent::service
