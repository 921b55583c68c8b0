#include "hiprompt/llm_client.hpp"

#include <cstdlib>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "hiprompt/error.hpp"

namespace hiprompt {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::client_error, "sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::vector<std::string> LlmClient::ask_all(const std::vector<std::string>& questions) {
  std::vector<std::string> answers(questions.size());
  if (max_concurrency_ <= 1) {
    for (std::size_t i = 0; i < questions.size(); ++i) answers[i] = ask(questions[i]);
    return answers;
  }
  for (std::size_t start = 0; start < questions.size(); start += max_concurrency_) {
    auto end = std::min(questions.size(), start + max_concurrency_);
    std::vector<std::future<std::string>> pending;
    for (auto i = start; i < end; ++i)
      pending.push_back(std::async(std::launch::async, [this, &questions, i] { return ask(questions[i]); }));
    for (auto i = start; i < end; ++i) answers[i] = pending[i - start].get();
  }
  return answers;
}

// ---------------------------------------------------------------------------

HttpClientConfig HttpClientConfig::from_env() {
  HttpClientConfig cfg;
  if (const char* v = std::getenv("LLM_ENDPOINT")) cfg.endpoint = v;
  if (const char* v = std::getenv("LLM_MODEL")) cfg.model = v;
  if (const char* v = std::getenv("LLM_API_KEY")) cfg.api_key = v;
  return cfg;
}

HttpLlmClient::HttpLlmClient(HttpClientConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.endpoint.empty()) throw Error(ErrorCode::config_error, "LLM endpoint is not set");
  if (cfg_.max_attempts < 1) throw Error(ErrorCode::config_error, "max_attempts must be >= 1");
  auto scheme_end = cfg_.endpoint.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::config_error, "endpoint needs a scheme: " + cfg_.endpoint);
  auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
  scheme_host_port_ = cfg_.endpoint.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : cfg_.endpoint.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  if (cfg_.cache_dir) std::filesystem::create_directories(*cfg_.cache_dir);
}

std::optional<std::string> HttpLlmClient::cache_lookup(const std::string& question) const {
  if (!cfg_.cache_dir) return std::nullopt;
  auto path = *cfg_.cache_dir / (sha256_hex(cfg_.model + "\n" + question) + ".json");
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    auto j = nlohmann::json::parse(in);
    if (j.at("model") == cfg_.model && j.at("question") == question) return j.at("answer").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    spdlog::warn("ignoring corrupt cache entry {}", path.string());
  }
  return std::nullopt;
}

void HttpLlmClient::cache_store(const std::string& question, const std::string& answer) const {
  if (!cfg_.cache_dir) return;
  auto key = sha256_hex(cfg_.model + "\n" + question);
  auto tmp = *cfg_.cache_dir / (key + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())));
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << nlohmann::ordered_json{{"model", cfg_.model}, {"question", question}, {"answer", answer}}.dump();
  }
  std::filesystem::rename(tmp, *cfg_.cache_dir / (key + ".json"));
}

std::string HttpLlmClient::ask(const std::string& question) {
  if (auto cached = cache_lookup(question)) return *cached;

  nlohmann::json body = {{"model", cfg_.model}, {"messages", {{{"role", "user"}, {"content", question}}}}};
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  httplib::Client cli(scheme_host_port_);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  cli.set_write_timeout(secs.count(), usecs.count());

  std::string last_error;
  auto backoff = cfg_.initial_backoff;
  for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
    ++requests_sent_;
    auto res = cli.Post(path_prefix_ + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status == 200) {
      try {
        auto j = nlohmann::json::parse(res->body);
        auto answer = j.at("choices").at(0).at("message").at("content").get<std::string>();
        cache_store(question, answer);
        return answer;
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::client_error, std::string("malformed completion response: ") + e.what());
      }
    } else if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
    } else {
      throw Error(ErrorCode::client_error, "HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    if (attempt < cfg_.max_attempts) {
      spdlog::warn("LLM request failed ({}), retry {}/{} in {} ms", last_error, attempt, cfg_.max_attempts - 1,
                   backoff.count());
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw Error(ErrorCode::client_error, "LLM request failed after " + std::to_string(cfg_.max_attempts) +
                                           " attempts: " + last_error);
}

}  // namespace hiprompt
