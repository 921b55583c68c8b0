#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "hiprompt/error.hpp"
#include "hiprompt/llm_client.hpp"

using namespace hiprompt;
namespace fs = std::filesystem;

namespace {

// Chat-completion stub: replies "echo: <question>" after `failures` 503s.
class StubServer {
 public:
  explicit StubServer(int failures = 0, int status = 503) : failures_(failures), status_(status) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++hits_;
      last_auth_ = req.get_header_value("Authorization");
      if (failures_ > 0) {
        --failures_;
        res.status = status_;
        return;
      }
      auto body = nlohmann::json::parse(req.body);
      std::string q = body["messages"][0]["content"];
      nlohmann::json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "echo: " + q}}}}}}};
      res.set_content(reply.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  HttpClientConfig config() const {
    HttpClientConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1/";
    c.model = "stub";
    c.initial_backoff = std::chrono::milliseconds(1);
    c.timeout = std::chrono::milliseconds(5000);
    return c;
  }
  int hits() const { return hits_; }
  std::string last_auth() const { return last_auth_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> failures_;
  int status_;
  std::atomic<int> hits_ = 0;
  std::string last_auth_;
};

}  // namespace

TEST_CASE("http client round trip") {
  StubServer s;
  auto cfg = s.config();
  cfg.api_key = "secret";
  HttpLlmClient client(cfg);
  CHECK(client.ask("hello") == "echo: hello");
  CHECK(s.last_auth() == "Bearer secret");
  CHECK(client.requests_sent() == 1);
}

TEST_CASE("http client retries transient failures") {
  StubServer s(2);
  HttpLlmClient client(s.config());
  CHECK(client.ask("q") == "echo: q");
  CHECK(s.hits() == 3);
  CHECK(client.requests_sent() == 3);
}

TEST_CASE("http client gives up after max attempts") {
  StubServer s(10, 500);
  auto cfg = s.config();
  cfg.max_attempts = 3;
  HttpLlmClient client(cfg);
  try {
    client.ask("q");
    FAIL("expected ClientError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::client_error);
  }
  CHECK(s.hits() == 3);
}

TEST_CASE("client errors are not retried") {
  StubServer s(10, 400);
  HttpLlmClient client(s.config());
  CHECK_THROWS_AS(client.ask("q"), Error);
  CHECK(s.hits() == 1);
}

TEST_CASE("unreachable endpoint is a client error") {
  HttpClientConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1";
  cfg.max_attempts = 2;
  cfg.initial_backoff = std::chrono::milliseconds(1);
  cfg.timeout = std::chrono::milliseconds(500);
  HttpLlmClient client(cfg);
  try {
    client.ask("q");
    FAIL("expected ClientError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::client_error);
  }
}

TEST_CASE("answers are cached on disk") {
  auto dir = fs::temp_directory_path() / "hiprompt_llm_cache";
  fs::remove_all(dir);
  StubServer s;
  auto cfg = s.config();
  cfg.cache_dir = dir;
  {
    HttpLlmClient client(cfg);
    CHECK(client.ask("cached?") == "echo: cached?");
  }
  HttpLlmClient again(cfg);
  CHECK(again.ask("cached?") == "echo: cached?");
  CHECK(s.hits() == 1);
  CHECK(again.requests_sent() == 0);
}

TEST_CASE("ask_all keeps question order under concurrency") {
  StubServer s;
  HttpLlmClient client(s.config());
  client.set_max_concurrency(4);
  std::vector<std::string> qs;
  for (int i = 0; i < 12; ++i) qs.push_back("q" + std::to_string(i));
  auto answers = client.ask_all(qs);
  REQUIRE(answers.size() == qs.size());
  for (std::size_t i = 0; i < qs.size(); ++i) CHECK(answers[i] == "echo: " + qs[i]);
}

TEST_CASE("endpoint configuration") {
  HttpClientConfig empty;
  CHECK_THROWS_AS(HttpLlmClient{empty}, Error);
  HttpClientConfig no_scheme;
  no_scheme.endpoint = "localhost:8000";
  CHECK_THROWS_AS(HttpLlmClient{no_scheme}, Error);
}

TEST_CASE("mock answers depend only on question and seed") {
  MockLlmClient a(1), b(1), c(2);
  const std::string q = "please help me generate 5 different sentences about knife from the angle of the sharp";
  CHECK(a.ask(q) == b.ask(q));
  CHECK(a.ask(q) != c.ask(q));
  CHECK(a.ask_all({q, q}) == std::vector<std::string>{a.ask(q), a.ask(q)});
}

TEST_CASE("hashes") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}
