#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "hiprompt/encoder.hpp"
#include "hiprompt/knowledge.hpp"
#include "hiprompt/learning.hpp"
#include "hiprompt/promptgraph.hpp"

namespace hiprompt {

struct InferenceConfig {
  double lambda2 = 0.65;
  double tau = 0.01;  // dense aggregation temperature
  std::size_t top_k = 3;

  void validate() const;
};

struct Prediction {
  Vec fused;
  Vec s_global;
  Vec s_local;
  std::vector<std::pair<CategoryId, double>> topk;  // score desc, id asc on ties
};

// Ids of the k largest entries, ties by ascending id.
std::vector<CategoryId> top_k_ids(const Vec& scores, std::size_t k);

ClassEmbeddingBank export_bank(const PromptModel& model, const TextEncoder& encoder, const CategorySet& cats,
                               const Vocabulary& vocab);

// Zero-shot bank: both branches use the hand-craft prompt embeddings.
ClassEmbeddingBank handcraft_bank(const TextEncoder& encoder, const CategorySet& cats, const Vocabulary& vocab,
                                  const HandcraftPromptMap& map = {});

// Fused S = lambda2·S^G + (1 − lambda2)·S^L. Degenerate bank rows score as
// the lowest possible value.
Prediction score(const Vec& global_feat, const Mat& dense_feat, const ClassEmbeddingBank& bank,
                 const InferenceConfig& cfg);

// nullopt when `labels` has no positive.
std::optional<double> average_precision(const std::vector<double>& scores, const std::vector<bool>& labels);

// Micro F1 where every item predicts its k top-scoring categories.
double f1_at_k(const std::vector<Vec>& scores, const std::vector<std::set<CategoryId>>& labels, std::size_t k = 3);

struct MetricsReport {
  double map = 0;
  double f1_top3 = 0;
  std::vector<std::optional<double>> per_class_ap;
  std::size_t n_items = 0;
  std::size_t n_classes_scored = 0;
  std::vector<std::size_t> positives_per_class;

  std::string to_json() const;
  std::string to_table(const CategorySet& cats) const;
};

struct EvalItem {
  std::string label;  // text or item id
  FeatureItem features;
  std::set<CategoryId> positives;
};

std::vector<EvalItem> items_from_corpus(const TextEncoder& encoder, const Vocabulary& vocab, const Corpus& corpus,
                                        std::size_t threads = 1);

// Labels sidecar: one {"id": n, "positives": [...]} per line.
std::vector<EvalItem> items_from_features(const FeatureSet& features, const std::filesystem::path& labels_path,
                                          std::size_t n_categories);
void write_labels(const std::filesystem::path& path, const std::vector<EvalItem>& items);
FeatureSet to_feature_set(const std::vector<EvalItem>& items, int d);

// Throws Error(empty_eval_set).
MetricsReport evaluate(const std::vector<EvalItem>& items, const ClassEmbeddingBank& bank, const InferenceConfig& cfg);

std::string topk_report(const std::vector<EvalItem>& items, const ClassEmbeddingBank& bank,
                        const InferenceConfig& cfg, const CategorySet& cats, std::size_t k);

}  // namespace hiprompt
