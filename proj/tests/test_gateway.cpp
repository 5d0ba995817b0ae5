// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <chrono>
#include <mutex>
#include <string>
#include <thread>
#include <memory>
#include <vector>

#include "reflectmt/gateway.hpp"
#include "test_stub_server.hpp"
#include "test_util.hpp"

using namespace reflectmt;

namespace {

EndpointConfig stub_config(const rmtest::StubServer& srv) {
  EndpointConfig cfg;
  cfg.base_url = srv.base_url();
  cfg.model_name = "stub-model";
  cfg.timeout_s = 5.0;
  cfg.max_retries = 3;
  return cfg;
}

std::unique_ptr<GatewayClient> make_fast_client(
    EndpointConfig cfg, std::vector<double>* delays = nullptr) {
  auto gw = std::make_unique<GatewayClient>(std::move(cfg));
  gw->set_sleep_fn([delays](double d) {
    if (delays) delays->push_back(d);
  });
  return gw;
}

}  // namespace

TEST_CASE("request body matches the golden wire format") {
  EndpointConfig cfg;
  cfg.model_name = "test-model";
  cfg.temperature = 0.1;
  cfg.top_p = 0.95;
  std::string body = build_request_body(cfg, "You are a precise translator.",
                                        "Translate to Chinese: Hello", false);
  CHECK(body == rmtest::read_fixture("data/golden_request_body.json"));
}

TEST_CASE("request body without system prompt has a single message") {
  EndpointConfig cfg;
  auto j = nlohmann::json::parse(build_request_body(cfg, "", "hi", true));
  REQUIRE(j["messages"].size() == 1);
  CHECK(j["messages"][0]["role"] == "user");
  CHECK(j["stream"] == true);
}

TEST_CASE("backoff delays are jittered around the exponential schedule") {
  Rng rng(99);
  double prev_hi = 0.0;
  for (int attempt = 0; attempt < 6; ++attempt) {
    double base = 0.5 * std::pow(2.0, attempt);
    for (int rep = 0; rep < 50; ++rep) {
      double d = backoff_delay(attempt, rng);
      CHECK(d >= base * 0.8 - 1e-12);
      CHECK(d <= base * 1.2 + 1e-12);
      }
    // the jitter band for attempt k+1 sits wholly above the band for k
    CHECK(base * 0.8 > prev_hi * 0.999);
    prev_hi = base * 1.2;
  }
}

TEST_CASE("chat_complete succeeds after one injected 500") {
  rmtest::StubServer srv;
  std::atomic<int> requests{0};
  srv.handle_chat([&](const httplib::Request&, httplib::Response& res) {
    if (requests.fetch_add(1) == 0) {
      res.status = 500;
      res.set_content("boom", "text/plain");
      return;
    }
    res.set_content(rmtest::completion_json("你好", 12, 7), "application/json");
  });
  srv.start();

  std::vector<double> delays;
  auto gw_ptr = make_fast_client(stub_config(srv), &delays);
  ChatExchange ex = gw_ptr->chat_complete("sys", "user text");
  CHECK(ex.reply == "你好");
  CHECK(ex.retry_count == 1);
  REQUIRE(ex.usage.has_value());
  CHECK(ex.usage->prompt_tokens == 12);
  CHECK(ex.usage->completion_tokens == 7);
  CHECK(requests.load() == 2);
  REQUIRE(delays.size() == 1);
  CHECK(delays[0] >= 0.4);
  CHECK(delays[0] <= 0.6);
}

TEST_CASE("401 raises AuthFailure without retries or secret leakage") {
  rmtest::StubServer srv;
  std::atomic<int> requests{0};
  srv.handle_chat([&](const httplib::Request&, httplib::Response& res) {
    requests.fetch_add(1);
    res.status = 401;
    res.set_content("{\"error\":\"bad key\"}", "application/json");
  });
  srv.start();

  auto cfg = stub_config(srv);
  cfg.api_key = "sk-SUPER-SECRET-KEY";
  auto gw_ptr = make_fast_client(cfg);
  try {
    gw_ptr->chat_complete("s", "u");
    FAIL("expected AuthFailure");
  } catch (const GatewayError& e) {
    CHECK(e.kind() == GatewayError::Kind::AuthFailure);
    CHECK(std::string(e.what()).find("SUPER-SECRET") == std::string::npos);
  }
  CHECK(requests.load() == 1);
}

TEST_CASE("other 4xx raises BadRequest without retries") {
  rmtest::StubServer srv;
  std::atomic<int> requests{0};
  srv.handle_chat([&](const httplib::Request&, httplib::Response& res) {
    requests.fetch_add(1);
    res.status = 400;
    res.set_content("nope", "text/plain");
  });
  srv.start();

  auto gw_ptr = make_fast_client(stub_config(srv));
  try {
    gw_ptr->chat_complete("s", "u");
    FAIL("expected BadRequest");
  } catch (const GatewayError& e) {
    CHECK(e.kind() == GatewayError::Kind::BadRequest);
  }
  CHECK(requests.load() == 1);
}

TEST_CASE("persistent 5xx exhausts retries with non-decreasing backoff") {
  rmtest::StubServer srv;
  std::atomic<int> requests{0};
  srv.handle_chat([&](const httplib::Request&, httplib::Response& res) {
    requests.fetch_add(1);
    res.status = 503;
    res.set_content("overloaded", "text/plain");
  });
  srv.start();

  auto cfg = stub_config(srv);
  cfg.max_retries = 3;
  std::vector<double> delays;
  auto gw_ptr = make_fast_client(cfg, &delays);
  try {
    gw_ptr->chat_complete("s", "u");
    FAIL("expected Transport");
  } catch (const GatewayError& e) {
    CHECK(e.kind() == GatewayError::Kind::Transport);
  }
  CHECK(requests.load() == 4);  // initial + 3 retries
  REQUIRE(delays.size() == 3);
  for (size_t i = 1; i < delays.size(); ++i) CHECK(delays[i] >= delays[i - 1]);
}

TEST_CASE("429 is retried like a transient failure") {
  rmtest::StubServer srv;
  std::atomic<int> requests{0};
  srv.handle_chat([&](const httplib::Request&, httplib::Response& res) {
    if (requests.fetch_add(1) == 0) {
      res.status = 429;
      res.set_content("slow down", "text/plain");
      return;
    }
    res.set_content(rmtest::completion_json("ok"), "application/json");
  });
  srv.start();

  auto gw_ptr = make_fast_client(stub_config(srv));
  ChatExchange ex = gw_ptr->chat_complete("s", "u");
  CHECK(ex.reply == "ok");
  CHECK(ex.retry_count == 1);
}

TEST_CASE("api key is sent as a bearer header") {
  rmtest::StubServer srv;
  std::string seen_auth;
  srv.handle_chat([&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    res.set_content(rmtest::completion_json("ok"), "application/json");
  });
  srv.start();

  auto cfg = stub_config(srv);
  cfg.api_key = "sk-test-123";
  auto gw_ptr = make_fast_client(cfg);
  gw_ptr->chat_complete("", "u");
  CHECK(seen_auth == "Bearer sk-test-123");
}

TEST_CASE("chat_stream delivers chunks in order and equals batch reply") {
  const std::vector<std::string> chunks = {"<answer>", "你好",  "</answer>",
                                           " <reflect", "ion>ok", "</reflection>"};
  std::string full;
  for (const auto& c : chunks) full += c;

  rmtest::StubServer srv;
  srv.handle_chat([&](const httplib::Request& req, httplib::Response& res) {
    auto j = nlohmann::json::parse(req.body);
    if (j.value("stream", false)) {
      std::string payload;
      for (const auto& c : chunks) payload += rmtest::sse_delta(c);
      payload += "data: [DONE]\n\n";
      res.set_content(payload, "text/event-stream");
    } else {
      res.set_content(rmtest::completion_json(full), "application/json");
    }
  });
  srv.start();

  auto gw_ptr = make_fast_client(stub_config(srv));
  std::vector<std::string> seen;
  ChatExchange streamed = gw_ptr->chat_stream(
      "s", "u", [&](const std::string& c) { seen.push_back(c); });
  ChatExchange batch = gw_ptr->chat_complete("s", "u");

  CHECK(streamed.reply == batch.reply);
  CHECK(streamed.reply == full);
  CHECK(seen == chunks);
  CHECK_FALSE(streamed.stopped_early);
  REQUIRE(streamed.usage.has_value());
  CHECK(streamed.usage->completion_tokens ==
        static_cast<long>(chunks.size()));
}

TEST_CASE("chat_stream cancels on the early-stop predicate") {
  // golden template in 7 chunks, split on code-point boundaries (SSE deltas
  // carry valid UTF-8); the answer block closes inside an early chunk
  const std::string golden = rmtest::read_fixture("data/golden_sft_example.txt");
  const size_t n_chunks = 7;
  std::vector<std::string> chunks;
  size_t step = golden.size() / n_chunks + 1;
  size_t p = 0;
  while (p < golden.size()) {
    size_t q = std::min(golden.size(), p + step);
    while (q < golden.size() &&
           (static_cast<unsigned char>(golden[q]) & 0xC0) == 0x80) {
      ++q;
    }
    chunks.push_back(golden.substr(p, q - p));
    p = q;
  }

  rmtest::StubServer srv;
  std::atomic<int> chunks_served{0};
  srv.handle_chat([&](const httplib::Request&, httplib::Response& res) {
    res.set_chunked_content_provider(
        "text/event-stream",
        [&, i = size_t{0}](size_t, httplib::DataSink& sink) mutable {
          if (i >= chunks.size()) {
            sink.write("data: [DONE]\n\n", 14);
            sink.done();
            return true;
          }
          std::string ev = rmtest::sse_delta(chunks[i++]);
          chunks_served.fetch_add(1);
          return sink.write(ev.data(), ev.size());
        });
  });
  srv.start();

  auto gw_ptr = make_fast_client(stub_config(srv));
  long deltas_consumed = 0;
  ChatExchange ex = gw_ptr->chat_stream(
      "s", "u", [&](const std::string&) { ++deltas_consumed; },
      [](const EarlyStopScan& scan) { return scan.stop_found(); });

  EarlyStopScan oracle;
  oracle.feed(golden);
  REQUIRE(oracle.stop_found());
  CHECK(ex.stopped_early);
  CHECK(ex.reply == golden.substr(0, oracle.stop_offset()));
  REQUIRE(ex.usage.has_value());
  CHECK(ex.usage->completion_tokens == deltas_consumed);
  CHECK(deltas_consumed < static_cast<long>(chunks.size()));
}

TEST_CASE("stop predicate that never fires yields the full reply") {
  rmtest::StubServer srv;
  srv.handle_chat([&](const httplib::Request&, httplib::Response& res) {
    std::string payload = rmtest::sse_delta("abc") + rmtest::sse_delta("def") +
                          "data: [DONE]\n\n";
    res.set_content(payload, "text/event-stream");
  });
  srv.start();

  auto gw_ptr = make_fast_client(stub_config(srv));
  ChatExchange ex = gw_ptr->chat_stream("s", "u", nullptr,
                                   [](const EarlyStopScan&) { return false; });
  CHECK(ex.reply == "abcdef");
  CHECK_FALSE(ex.stopped_early);
}

TEST_CASE("mid-stream drop raises StreamInterrupted with the prefix") {
  rmtest::StubServer srv;
  srv.handle_chat([&](const httplib::Request&, httplib::Response& res) {
    res.set_chunked_content_provider(
        "text/event-stream",
        [i = 0](size_t, httplib::DataSink& sink) mutable {
          if (i >= 2) return false;  // abort without [DONE]
          std::string ev = rmtest::sse_delta(i == 0 ? "partial " : "text");
          ++i;
          return sink.write(ev.data(), ev.size());
        });
  });
  srv.start();

  auto gw_ptr = make_fast_client(stub_config(srv));
  try {
    gw_ptr->chat_stream("s", "u", nullptr);
    FAIL("expected StreamInterrupted");
  } catch (const GatewayError& e) {
    CHECK(e.kind() == GatewayError::Kind::StreamInterrupted);
    CHECK(e.partial() == "partial text");
  }
}

TEST_CASE("in-flight limit caps concurrent requests") {
  rmtest::StubServer srv;
  std::atomic<int> active{0};
  std::atomic<int> peak{0};
  srv.handle_chat([&](const httplib::Request&, httplib::Response& res) {
    int now = active.fetch_add(1) + 1;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(60));
    active.fetch_sub(1);
    res.set_content(rmtest::completion_json("ok"), "application/json");
  });
  srv.start();

  GatewayClient gw(stub_config(srv), /*in_flight_limit=*/2);
  gw.set_sleep_fn([](double) {});
  std::vector<std::thread> threads;
  for (int i = 0; i < 6; ++i) {
    threads.emplace_back([&] { gw.chat_complete("s", "u"); });
  }
  for (auto& t : threads) t.join();
  CHECK(peak.load() <= 2);
}
