#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hiprompt/encoder.hpp"
#include "hiprompt/inference.hpp"
#include "hiprompt/knowledge.hpp"
#include "hiprompt/learning.hpp"
#include "hiprompt/promptgraph.hpp"

namespace hiprompt {

// Mock-LLM recognition task: ten kitchen and living-room objects that the
// mock groups into 2 scenes and 4 subscenes.
std::vector<std::string> synthetic_category_names();

struct SyntheticConfig {
  std::uint64_t seed = 0;
  std::size_t max_attributes = 5;
  std::size_t per_attribute = 10;
  std::size_t per_pair = 50;
};

struct SyntheticTask {
  CategorySet cats;
  SubgroupPartition partition;
  Corpus train;
  Corpus heldout;  // different mock seed, texts seen in training removed
  Vocabulary vocab;
};

SyntheticTask make_synthetic_task(const SyntheticConfig& cfg);

// Words of every corpus text, category name and hand-craft prompt.
Vocabulary build_vocabulary(const std::vector<const Corpus*>& corpora, const CategorySet& cats,
                            const HandcraftPromptMap& map = {});

enum class PromptVariant { handcraft, shared, specific, hierarchical };

const char* to_string(PromptVariant v);
PromptVariant prompt_variant_from_string(std::string_view s);

// shared and specific put all M tokens into one band.
TokenComposition composition_for(PromptVariant v, const TokenComposition& base);

struct ExperimentSettings {
  EncoderConfig encoder;
  TokenComposition composition;
  LossConfig loss;
  TrainConfig train;
  InferenceConfig inference;
  double sigma = 0.02;
  std::uint64_t prompt_seed = 0;
};

struct ExperimentResult {
  double map_init = 0;
  double map_trained = 0;
  double f1_trained = 0;
  double order_kl_init = 0;     // order loss of the learned banks vs the anchor
  double order_kl_trained = 0;
  std::vector<EpochLog> log;
};

ExperimentResult run_experiment(const SyntheticTask& task, PromptVariant variant, const ExperimentSettings& s);

}  // namespace hiprompt
