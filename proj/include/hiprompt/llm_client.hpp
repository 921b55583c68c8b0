#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hiprompt {

class LlmClient {
 public:
  virtual ~LlmClient() = default;

  // Throws Error(client_error) once the client gives up.
  virtual std::string ask(const std::string& question) = 0;

  // Answers come back in question order whatever the completion order.
  // The base implementation issues up to `max_concurrency` asks at once.
  virtual std::vector<std::string> ask_all(const std::vector<std::string>& questions);

  void set_max_concurrency(std::size_t n) { max_concurrency_ = n == 0 ? 1 : n; }
  std::size_t max_concurrency() const noexcept { return max_concurrency_; }

 private:
  std::size_t max_concurrency_ = 1;
};

// Wraps a callable; used for scripted answers in tests and bindings.
class FunctionLlmClient : public LlmClient {
 public:
  using Fn = std::function<std::string(const std::string&)>;
  explicit FunctionLlmClient(Fn fn) : fn_(std::move(fn)) {}
  std::string ask(const std::string& question) override { return fn_(question); }

 private:
  Fn fn_;
};

// ---------------------------------------------------------------------------
// Deterministic offline stand-in for a chat model.

struct MockCategoryProfile {
  std::string scene;     // coarse co-occurrence group label, empty = none
  std::string subscene;  // fine group label, empty = none
  std::vector<std::string> traits;
};

struct MockWorld {
  std::vector<std::string> common_attributes;
  std::map<std::string, MockCategoryProfile> profiles;          // keyed by normalized name
  std::map<std::string, std::vector<std::string>> scene_words;  // keyed by scene label

  // Built-in lexicon of ~30 everyday objects over four scenes.
  static MockWorld builtin();

  // Profile for `name`; unknown names get generated traits and no scene.
  MockCategoryProfile profile(std::string_view name) const;
};

class MockLlmClient : public LlmClient {
 public:
  explicit MockLlmClient(std::uint64_t seed, MockWorld world = MockWorld::builtin());

  // Pure function of (question, seed).
  std::string ask(const std::string& question) override;

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  MockWorld world_;
};

// ---------------------------------------------------------------------------
// Chat-completion client: POST {endpoint}/chat/completions.

struct HttpClientConfig {
  std::string endpoint;  // e.g. http://localhost:8000/v1
  std::string model;
  std::string api_key;
  std::chrono::milliseconds timeout{60'000};
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::optional<std::filesystem::path> cache_dir;

  // Reads LLM_ENDPOINT, LLM_MODEL, LLM_API_KEY.
  static HttpClientConfig from_env();
};

class HttpLlmClient : public LlmClient {
 public:
  explicit HttpLlmClient(HttpClientConfig cfg);

  std::string ask(const std::string& question) override;

  // Number of HTTP requests issued so far (retries included).
  std::size_t requests_sent() const noexcept { return requests_sent_; }

 private:
  std::optional<std::string> cache_lookup(const std::string& question) const;
  void cache_store(const std::string& question, const std::string& answer) const;

  HttpClientConfig cfg_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::atomic<std::size_t> requests_sent_ = 0;
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::string sha256_hex(std::string_view bytes);

}  // namespace hiprompt
