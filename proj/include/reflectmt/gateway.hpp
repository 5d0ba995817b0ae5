// SPDX-License-Identifier: Apache-2.0
//
// Client for OpenAI-compatible chat-completion endpoints. Plain HTTP; the
// deployments this targets are local or on a trusted network.

#pragma once

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "reflectmt/structured_output.hpp"
#include "reflectmt/util.hpp"

namespace reflectmt {

struct EndpointConfig {
  std::string base_url = "http://127.0.0.1:8080/v1";
  std::string model_name = "deepseek-v3";
  std::string api_key;  // empty means absent; never echoed in errors
  double timeout_s = 60.0;
  int max_retries = 3;
  double temperature = 0.1;
  double top_p = 0.95;
};

struct TokenUsage {
  long prompt_tokens = 0;
  long completion_tokens = 0;
};

struct ChatExchange {
  std::string system_prompt;
  std::string user_prompt;
  std::string reply;
  std::optional<TokenUsage> usage;
  int retry_count = 0;
  bool stopped_early = false;
};

class GatewayError : public std::runtime_error {
 public:
  enum class Kind { Transport, AuthFailure, BadRequest, Timeout, StreamInterrupted };
  GatewayError(Kind kind, const std::string& what, std::string partial = {})
      : std::runtime_error(what), kind_(kind), partial_(std::move(partial)) {}
  Kind kind() const { return kind_; }
  // prefix already delivered when a stream broke
  const std::string& partial() const { return partial_; }

 private:
  Kind kind_;
  std::string partial_;
};

inline std::string_view to_string(GatewayError::Kind k) {
  switch (k) {
    case GatewayError::Kind::Transport: return "Transport";
    case GatewayError::Kind::AuthFailure: return "AuthFailure";
    case GatewayError::Kind::BadRequest: return "BadRequest";
    case GatewayError::Kind::Timeout: return "Timeout";
    case GatewayError::Kind::StreamInterrupted: return "StreamInterrupted";
  }
  return "?";
}

inline std::string build_request_body(const EndpointConfig& cfg,
                                      const std::string& system,
                                      const std::string& user, bool stream) {
  nlohmann::ordered_json body;
  body["model"] = cfg.model_name;
  body["messages"] = nlohmann::ordered_json::array();
  if (!system.empty()) {
    body["messages"].push_back({{"role", "system"}, {"content", system}});
  }
  body["messages"].push_back({{"role", "user"}, {"content", user}});
  body["temperature"] = cfg.temperature;
  body["top_p"] = cfg.top_p;
  body["stream"] = stream;
  return body.dump();
}

// exponential backoff with +-20% jitter: 0.5s, 1s, 2s, ... before jitter
inline double backoff_delay(int attempt, Rng& rng) {
  double base = 0.5 * std::pow(2.0, attempt);
  return base * (0.8 + 0.4 * rng.next_unit());
}

namespace detail {

struct SplitUrl {
  std::string host;  // scheme://authority
  std::string path;  // leading path prefix, no trailing slash
};

inline SplitUrl split_base_url(const std::string& base_url) {
  SplitUrl out;
  size_t scheme = base_url.find("://");
  size_t path_start = scheme == std::string::npos
                          ? base_url.find('/')
                          : base_url.find('/', scheme + 3);
  if (path_start == std::string::npos) {
    out.host = base_url;
  } else {
    out.host = base_url.substr(0, path_start);
    out.path = base_url.substr(path_start);
  }
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

// SSE event framing: events separated by a blank line; data lines carry the
// payload. Returns complete data payloads and leaves the remainder in buf.
inline std::vector<std::string> drain_sse_events(std::string& buf) {
  std::vector<std::string> out;
  for (;;) {
    size_t sep = buf.find("\n\n");
    size_t sep_len = 2;
    size_t crlf = buf.find("\r\n\r\n");
    if (crlf != std::string::npos && (sep == std::string::npos || crlf < sep)) {
      sep = crlf;
      sep_len = 4;
    }
    if (sep == std::string::npos) return out;
    std::string event = buf.substr(0, sep);
    buf.erase(0, sep + sep_len);
    std::string data;
    size_t pos = 0;
    while (pos < event.size()) {
      size_t eol = event.find('\n', pos);
      if (eol == std::string::npos) eol = event.size();
      std::string_view line(event.data() + pos, eol - pos);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.rfind("data:", 0) == 0) {
        std::string_view payload = line.substr(5);
        if (!payload.empty() && payload.front() == ' ') payload.remove_prefix(1);
        if (!data.empty()) data += '\n';
        data.append(payload);
      }
      pos = eol + 1;
    }
    if (!data.empty()) out.push_back(std::move(data));
  }
}

inline std::string body_snippet(const std::string& body) {
  std::string s = body.substr(0, 200);
  for (char& c : s) {
    if (static_cast<unsigned char>(c) < 0x20) c = ' ';
  }
  return s;
}

}  // namespace detail

class GatewayClient {
 public:
  explicit GatewayClient(EndpointConfig cfg, int in_flight_limit = 8,
                         uint64_t jitter_seed = 0)
      : cfg_(std::move(cfg)), limit_(in_flight_limit), rng_(jitter_seed) {
    sleep_fn_ = [](double seconds) {
      std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
    };
  }

  const EndpointConfig& config() const { return cfg_; }

  // test hook: replace the inter-retry sleep
  void set_sleep_fn(std::function<void(double)> fn) { sleep_fn_ = std::move(fn); }

  ChatExchange chat_complete(const std::string& system, const std::string& user) {
    Slot slot(*this);
    ChatExchange ex;
    ex.system_prompt = system;
    ex.user_prompt = user;
    const std::string body = build_request_body(cfg_, system, user, false);
    for (int attempt = 0;; ++attempt) {
      auto cli = make_client();
      auto res = cli->Post(endpoint_path(), headers(), body, "application/json");
      if (res && res->status == 200) {
        parse_completion(res->body, ex);
        ex.retry_count = attempt;
        return ex;
      }
      // both classifiers throw on terminal states and return on retryable ones
      if (res) {
        classify_http_failure(res->status, res->body, attempt);
      } else {
        retryable_transport(res.error(), attempt);
      }
      wait_before_retry(attempt);
    }
  }

  using ChunkConsumer = std::function<void(const std::string&)>;
  using StopPredicate = std::function<bool(const EarlyStopScan&)>;

  ChatExchange chat_stream(const std::string& system, const std::string& user,
                           const ChunkConsumer& on_chunk,
                           const StopPredicate& stop = {}) {
    Slot slot(*this);
    ChatExchange ex;
    ex.system_prompt = system;
    ex.user_prompt = user;
    const std::string body = build_request_body(cfg_, system, user, true);
    for (int attempt = 0;; ++attempt) {
      StreamState st;
      auto cli = make_client();
      httplib::Request req;
      req.method = "POST";
      req.path = endpoint_path();
      req.headers = headers();
      req.body = body;
      req.set_header("Content-Type", "application/json");
      req.content_receiver = [&](const char* data, size_t len, uint64_t,
                                 uint64_t) {
        return stream_receive(st, std::string_view(data, len), on_chunk, stop);
      };
      auto res = cli->send(req);
      const bool cancelled_by_stop =
          st.stop_fired && (!res || res.error() == httplib::Error::Canceled ||
                            res->status == 200);
      if (cancelled_by_stop) {
        finish_stream(st, ex, attempt);
        return ex;
      }
      if (res && res->status == 200) {
        if (!st.done_seen) {
          throw GatewayError(GatewayError::Kind::StreamInterrupted,
                             "stream ended without completion marker",
                             st.emitted);
        }
        finish_stream(st, ex, attempt);
        return ex;
      }
      if (st.deltas_seen > 0) {
        // consumer already observed output; do not replay the request
        throw GatewayError(GatewayError::Kind::StreamInterrupted,
                           "stream dropped mid-generation", st.emitted);
      }
      if (res) {
        classify_http_failure(res->status, res->body, attempt);
      } else {
        retryable_transport(res.error(), attempt);
      }
      wait_before_retry(attempt);
    }
  }

 private:
  struct StreamState {
    std::string sse_buf;
    std::string emitted;
    EarlyStopScan scan;
    long deltas_seen = 0;
    bool done_seen = false;
    bool stop_fired = false;
    std::optional<TokenUsage> usage;
  };

  // RAII slot in the in-flight limiter
  class Slot {
   public:
    explicit Slot(GatewayClient& c) : c_(c) {
      std::unique_lock lk(c_.mu_);
      c_.cv_.wait(lk, [&] { return c_.in_flight_ < c_.limit_; });
      ++c_.in_flight_;
    }
    ~Slot() {
      {
        std::lock_guard lk(c_.mu_);
        --c_.in_flight_;
      }
      c_.cv_.notify_one();
    }

   private:
    GatewayClient& c_;
  };

  std::unique_ptr<httplib::Client> make_client() {
    auto split = detail::split_base_url(cfg_.base_url);
    auto cli = std::make_unique<httplib::Client>(split.host);
    auto whole = std::max(1, static_cast<int>(cfg_.timeout_s));
    cli->set_connection_timeout(whole, 0);
    cli->set_read_timeout(whole, 0);
    cli->set_write_timeout(whole, 0);
    return cli;
  }

  std::string endpoint_path() const {
    return detail::split_base_url(cfg_.base_url).path + "/chat/completions";
  }

  httplib::Headers headers() const {
    httplib::Headers h;
    if (!cfg_.api_key.empty()) h.emplace("Authorization", "Bearer " + cfg_.api_key);
    return h;
  }

  static void parse_completion(const std::string& body, ChatExchange& ex) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || j["choices"].empty()) {
      throw GatewayError(GatewayError::Kind::BadRequest,
                         "malformed completion response: " +
                             detail::body_snippet(body));
    }
    ex.reply = j["choices"][0]["message"]["content"].get<std::string>();
    if (j.contains("usage")) {
      TokenUsage u;
      u.prompt_tokens = j["usage"].value("prompt_tokens", 0L);
      u.completion_tokens = j["usage"].value("completion_tokens", 0L);
      ex.usage = u;
    }
  }

  // throws on terminal statuses, returns on retryable ones
  void classify_http_failure(int status, const std::string& body, int attempt) {
    if (status == 401 || status == 403) {
      throw GatewayError(GatewayError::Kind::AuthFailure,
                         "authentication rejected (HTTP " +
                             std::to_string(status) + ")");
    }
    if (status == 429 || status >= 500) {
      if (attempt >= cfg_.max_retries) {
        throw GatewayError(GatewayError::Kind::Transport,
                           "retries exhausted on HTTP " + std::to_string(status) +
                               ": " + detail::body_snippet(body));
      }
      return;
    }
    throw GatewayError(GatewayError::Kind::BadRequest,
                       "HTTP " + std::to_string(status) + ": " +
                           detail::body_snippet(body));
  }

  // returns true when the call may be retried, throws otherwise
  bool retryable_transport(httplib::Error err, int attempt) {
    if (attempt >= cfg_.max_retries) {
      auto kind = err == httplib::Error::ConnectionTimeout
                      ? GatewayError::Kind::Timeout
                      : GatewayError::Kind::Transport;
      throw GatewayError(kind, std::string("transport failure: ") +
                                   httplib::to_string(err));
    }
    return true;
  }

  void wait_before_retry(int attempt) {
    double d;
    {
      std::lock_guard lk(rng_mu_);
      d = backoff_delay(attempt, rng_);
    }
    sleep_fn_(d);
  }

  bool stream_receive(StreamState& st, std::string_view bytes,
                      const ChunkConsumer& on_chunk, const StopPredicate& stop) {
    st.sse_buf.append(bytes.data(), bytes.size());
    for (auto& data : detail::drain_sse_events(st.sse_buf)) {
      if (data == "[DONE]") {
        st.done_seen = true;
        return true;
      }
      auto j = nlohmann::json::parse(data, nullptr, false);
      if (j.is_discarded()) continue;
      if (j.contains("usage") && !j["usage"].is_null()) {
        TokenUsage u;
        u.prompt_tokens = j["usage"].value("prompt_tokens", 0L);
        u.completion_tokens = j["usage"].value("completion_tokens", 0L);
        st.usage = u;
      }
      if (!j.contains("choices") || j["choices"].empty()) continue;
      const auto& delta = j["choices"][0]["delta"];
      if (!delta.contains("content") || delta["content"].is_null()) continue;
      std::string piece = delta["content"].get<std::string>();
      if (piece.empty()) continue;
      ++st.deltas_seen;
      st.emitted += piece;
      st.scan.feed(piece);
      if (on_chunk) on_chunk(piece);
      if (stop && stop(st.scan)) {
        st.stop_fired = true;
        return false;  // cancel the connection
      }
    }
    return true;
  }

  void finish_stream(StreamState& st, ChatExchange& ex, int attempt) {
    ex.retry_count = attempt;
    ex.stopped_early = st.stop_fired;
    if (st.stop_fired && st.scan.stop_found() &&
        st.scan.stop_offset() < st.emitted.size()) {
      ex.reply = st.emitted.substr(0, st.scan.stop_offset());
    } else {
      ex.reply = std::move(st.emitted);
    }
    if (st.usage) {
      ex.usage = st.usage;
    } else {
      ex.usage = TokenUsage{0, st.deltas_seen};
    }
  }

  EndpointConfig cfg_;
  int limit_;
  int in_flight_ = 0;
  std::mutex mu_;
  std::condition_variable cv_;
  std::mutex rng_mu_;
  Rng rng_;
  std::function<void(double)> sleep_fn_;
};

}  // namespace reflectmt
