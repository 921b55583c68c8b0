#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiprompt/encoder.hpp"
#include "hiprompt/experiment.hpp"
#include "hiprompt/inference.hpp"
#include "hiprompt/knowledge.hpp"
#include "hiprompt/learning.hpp"
#include "hiprompt/promptgraph.hpp"

namespace hiprompt {

struct LlmSettings {
  bool live = false;
  std::string endpoint;  // empty: LLM_ENDPOINT
  std::string model;     // empty: LLM_MODEL
  std::string cache_dir;
  std::size_t max_concurrency = 4;
};

// Everything a run needs. Empty paths resolve against `out`.
struct RunConfig {
  std::string categories;
  std::uint64_t seed = 0;  // mock LLM, prompt init and shuffling
  std::string out = "run";
  LlmSettings llm;
  AcquireOptions acquire;
  std::string captions;
  std::vector<std::string> train_corpus;
  std::vector<std::string> eval_corpus;
  std::string partition;
  std::string vocab;
  EncoderConfig encoder;
  TokenComposition composition;
  PromptVariant prompts = PromptVariant::hierarchical;
  double sigma = 0.02;
  LossConfig loss;
  TrainConfig train;
  std::size_t threads = 1;
  InferenceConfig inference;
  HandcraftPromptMap handcraft;

  std::filesystem::path out_path(const std::string& name) const;
  std::filesystem::path partition_path() const;
  std::vector<std::filesystem::path> train_corpus_paths() const;

  void validate() const;
};

// Unknown keys anywhere throw Error(config_error).
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const RunConfig& cfg);

std::set<DescriptionKind> parse_kinds(const std::string& csv);

}  // namespace hiprompt
