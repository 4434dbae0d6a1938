#pragma once

// Web transport for the vision gateway: a blocking client with an overall
// deadline, and a stub recognition endpoint serving fixture answers.

#include <atomic>
#include <chrono>
#include <thread>

#include <httplib.h>

#include "mragent/vision_gateway.hpp"

namespace mragent::vision {

struct ParsedUrl {
  std::string scheme_host_port;  // e.g. "http://127.0.0.1:8081"
  std::string path;              // e.g. "/v1/recognize"
};

inline std::optional<ParsedUrl> parse_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos || url.substr(0, scheme_end) != "http") return std::nullopt;
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl p;
  p.scheme_host_port = std::string(url.substr(0, path_start));
  p.path = path_start == std::string_view::npos ? "/" : std::string(url.substr(path_start));
  if (p.scheme_host_port.size() <= scheme_end + 3) return std::nullopt;
  return p;
}

/// Blocking recognition over HTTP. `timeout` bounds the whole call including
/// retries; retries only follow connection failures and 5xx answers.
class HttpVisionClient : public VisionService {
 public:
  explicit HttpVisionClient(EndpointConfig config, Seconds expected_latency = 5.35)
      : config_(std::move(config)), expected_(expected_latency) {
    throw_first(config_.violations());
    auto parsed = parse_url(config_.endpoint_url);
    if (!parsed) throw ValidationError("endpoint.url_format", "unsupported endpoint url '" + config_.endpoint_url + "'");
    url_ = *parsed;
  }

  VisionOutcome recognize(const RecognitionRequest& request) override {
    using Clock = std::chrono::steady_clock;
    ++calls_;
    const auto started = Clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - started).count(); };
    const std::string body = request_to_json(request).dump();

    VisionError last{VisionErrorKind::EndpointError, 0.0, 0, "no attempt made"};
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
      const double remaining = config_.timeout - elapsed();
      if (remaining <= 0.0) return timeout(elapsed());

      httplib::Client client(url_.scheme_host_port);
      const auto budget = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(remaining));
      client.set_connection_timeout(budget);
      client.set_read_timeout(budget);
      client.set_write_timeout(budget);
      auto res = client.Post(url_.path, body, "application/json");

      if (!res) {
        if (res.error() == httplib::Error::Read || elapsed() >= config_.timeout) return timeout(elapsed());
        last = {VisionErrorKind::EndpointError, elapsed(), 0, httplib::to_string(res.error())};
        continue;
      }
      if (res->status != 200) {
        last = {VisionErrorKind::EndpointError, elapsed(), res->status, res->body.substr(0, 120)};
        if (res->status >= 500) continue;
        return {last, elapsed()};
      }
      auto parsed = parse_result(res->body);
      if (!parsed) return {VisionError{VisionErrorKind::MalformedResponse, elapsed(), 200, res->body.substr(0, 120)}, elapsed()};
      return {*parsed, elapsed()};
    }
    last.elapsed = elapsed();
    return {last, last.elapsed};
  }

  Seconds expected_latency() const override { return expected_; }
  std::size_t call_count() const override { return calls_.load(); }

 private:
  VisionOutcome timeout(Seconds elapsed) const {
    return {VisionError{VisionErrorKind::Timeout, elapsed, 0, {}}, elapsed};
  }

  EndpointConfig config_;
  ParsedUrl url_;
  Seconds expected_;
  std::atomic<std::size_t> calls_{0};
};

class PortUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Stub recognition endpoint: `POST /v1/recognize` answers `{label,
/// confidence}` from the fixture table after sleeping the sampled latency
/// multiplied by `time_scale` (0 answers immediately).
class StubVisionEndpoint {
 public:
  StubVisionEndpoint(std::shared_ptr<StubRecognizer> stub, double time_scale = 1.0)
      : stub_(std::move(stub)), time_scale_(time_scale) {
    server_.Post("/v1/recognize", [this](const httplib::Request& req, httplib::Response& res) {
      auto j = nlohmann::json::parse(req.body, nullptr, false);
      if (j.is_discarded() || !j.contains("scene_ref") || !j["scene_ref"].is_string() ||
          j["scene_ref"].get<std::string>().empty()) {
        res.status = 400;
        res.set_content(R"({"error":"scene_ref required"})", "application/json");
        return;
      }
      ++requests_;
      auto answer = stub_->next(j["scene_ref"].get<std::string>());
      if (time_scale_ > 0.0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(answer.latency * time_scale_));
      }
      if (empty_bodies_) {
        res.set_content("", "application/json");
        return;
      }
      res.set_content(result_to_json(answer.result).dump(), "application/json");
    });
    server_.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
  }

  ~StubVisionEndpoint() { stop(); }
  StubVisionEndpoint(const StubVisionEndpoint&) = delete;
  StubVisionEndpoint& operator=(const StubVisionEndpoint&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
      if (port_ < 0) throw PortUnavailable("no free port on " + host);
    } else {
      if (!server_.bind_to_port(host, port)) throw PortUnavailable("cannot bind " + host + ":" + std::to_string(port));
      port_ = port;
    }
    host_ = host;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  std::string url() const { return "http://" + host_ + ":" + std::to_string(port_) + "/v1/recognize"; }
  int port() const { return port_; }
  std::size_t request_count() const { return requests_.load(); }
  /// Test hook: answer every request with an empty body.
  void set_empty_bodies(bool on) { empty_bodies_ = on; }

 private:
  std::shared_ptr<StubRecognizer> stub_;
  double time_scale_;
  httplib::Server server_;
  std::thread thread_;
  std::string host_ = "127.0.0.1";
  int port_ = -1;
  std::atomic<std::size_t> requests_{0};
  std::atomic<bool> empty_bodies_{false};
};

}  // namespace mragent::vision
