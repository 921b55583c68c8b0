#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hiprompt/encoder.hpp"
#include "hiprompt/knowledge.hpp"
#include "hiprompt/promptgraph.hpp"

namespace hiprompt {

// Rows G_i / L_i, unit-normalized unless flagged degenerate.
struct ClassEmbeddingBank {
  Mat global;  // N × d
  Mat local;   // N × d
  std::vector<bool> degenerate;

  std::size_t size() const noexcept { return static_cast<std::size_t>(global.rows()); }
};

struct Scores {
  Vec s_global;
  Vec s_local;
};

struct LossConfig {
  double margin = 1.0;
  double lambda1 = 0.2;
  double tau_order = 1.0;

  void validate() const;
};

enum class Optimizer { sgd, sgd_momentum };

struct TrainConfig {
  double lr = 0.002;
  std::vector<int> milestones = {2, 5};
  double gamma = 0.1;
  int epochs = 10;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::sgd_momentum;
  double momentum = 0.9;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Similarities and losses

// S_i = <normalize(text_global), G_i>. Throws Error(degenerate_feature).
Vec global_similarity(const Vec& text_global, const Mat& bank_global);

// Row-softmax-weighted mean of `s` (N × N_r): S_i = Σ_j softmax_j(s_i·/tau)_j s_ij.
Vec softmax_weighted(const Mat& s, double tau = 1.0);

// s_ij = <L_i, normalize(T_j)>, aggregated by softmax_weighted. Degenerate
// token rows are skipped with a warning; all-degenerate input throws.
Vec local_similarity(const Mat& text_tokens, const Mat& bank_local, double tau = 1.0);

// Σ_{i∈pos, j∈neg} max(0, m − S_i + S_j). Throws Error(empty_positives).
double ranking_loss(const Vec& scores, const std::vector<CategoryId>& positives,
                    const std::vector<CategoryId>& negatives, double margin);

// All ids in [0, n) not in `positives`.
std::vector<CategoryId> complement(const std::set<CategoryId>& positives, std::size_t n);

Mat similarity_matrix(const Mat& embeddings);

// Mean over rows of KL(softmax(learned_r/tau) ‖ softmax(anchor_r/tau)).
double order_loss(const Mat& learned, const Mat& anchor, double tau = 1.0);

double total_loss(double rank, double order, double lambda1);

double lr_at(int epoch, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Training data and objective

// A description's frozen features, normalized once up front.
struct PreparedText {
  Vec global;  // unit
  Mat tokens;  // unit rows, degenerate rows dropped
  std::vector<CategoryId> positives;
  std::vector<CategoryId> negatives;
};

PreparedText prepare_text(const EncodedText& enc, const std::set<CategoryId>& positives, std::size_t n_categories);

std::vector<PreparedText> prepare_corpus(const TextEncoder& encoder, const Vocabulary& vocab, const Corpus& corpus,
                                         std::size_t n_categories, std::size_t threads = 1);

// Hand-craft prompt embeddings (EOS features, unit rows), N × d.
Mat handcraft_embeddings(const TextEncoder& encoder, const CategorySet& cats, const Vocabulary& vocab,
                         const HandcraftPromptMap& map);

struct LossBreakdown {
  double rank_global = 0;
  double rank_local = 0;
  double order_global = 0;
  double order_local = 0;
  double lambda1 = 0;

  double rank() const { return rank_global + rank_local; }
  double order() const { return order_global + order_local; }
  double total() const { return total_loss(rank(), order(), lambda1); }
};

// Which parts of the loss contribute to the returned gradient.
struct GradientWeights {
  double rank = 1.0;
  double order = 1.0;  // multiplies lambda1 · order
};

// Batch loss = mean over records of the ranking loss + lambda1 · order
// loss. Gradients are taken with respect to prompt parameters only.
class Objective {
 public:
  Objective(const TextEncoder& encoder, const CategorySet& cats, const Vocabulary& vocab, Mat handcraft,
            LossConfig loss);

  const LossConfig& loss_config() const noexcept { return loss_; }
  const Mat& handcraft_similarity() const noexcept { return anchor_; }

  ClassEmbeddingBank class_embeddings(const PromptModel& model) const;

  // `grad`, when given, is resized to the store's shape and overwritten.
  LossBreakdown evaluate(const PromptModel& model, std::span<const PreparedText* const> batch, Mat* grad = nullptr,
                         GradientWeights weights = {}) const;

 private:
  const TextEncoder& encoder_;
  const CategorySet& cats_;
  const Vocabulary& vocab_;
  Mat anchor_;  // D^H
  LossConfig loss_;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double mean_rank_loss = 0;
  double mean_order_loss = 0;
  double mean_total = 0;
};

std::string to_jsonl(const std::vector<EpochLog>& log);

// Runs epochs × batches of loss → gradient → optimizer step. Throws
// Error(empty_corpus) or Error(non_finite_loss) naming the record index.
std::vector<EpochLog> fit(const Objective& objective, PromptModel& model, const std::vector<PreparedText>& data,
                          const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch = {});

// ---------------------------------------------------------------------------
// Finite-difference verification of Objective::evaluate.

struct GradcheckOptions {
  int trials = 20;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-6;
  // Test fixture: corrupts one analytic gradient entry per trial.
  bool inject_bug = false;
};

struct GradcheckReport {
  double max_rel_rank = 0;
  double max_rel_order = 0;
  double max_rel_total = 0;
  int trials = 0;
  bool passed = false;
};

// ‖a − b‖∞ / max(‖a‖∞, ‖b‖∞); zero when both are zero.
double max_relative_error(const Mat& analytic, const Mat& numeric);

// Central differences on randomized instances (N ≤ 5, M ≤ 6, d ≤ 16, batch ≤ 4).
GradcheckReport run_gradcheck(const GradcheckOptions& opt);

}  // namespace hiprompt
