#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace hiprompt {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

using TokenId = int;
inline constexpr TokenId pad_token = 0;
inline constexpr TokenId unk_token = 1;
inline constexpr TokenId eos_token = 2;

// Lowercased alphanumeric runs; everything else separates words.
std::vector<std::string> split_words(std::string_view text);

class Vocabulary {
 public:
  Vocabulary();

  // Ids 3.. assigned by (frequency desc, token asc) over all words in `texts`.
  static Vocabulary build(const std::vector<std::string>& texts);

  TokenId id(std::string_view token) const;  // unk_token when absent
  const std::string& token(TokenId id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  // JSON array of tokens in id order (reserved markers included).
  std::string to_json() const;
  static Vocabulary from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, TokenId, std::less<>> index_;
};

// Words mapped through `vocab`, truncated to context_limit-1, then EOS.
// Throws Error(empty_text) when the text has no words.
std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab, std::size_t context_limit = 77);

// Words mapped through `vocab` without EOS or truncation (class names).
std::vector<TokenId> tokenize_words(std::string_view text, const Vocabulary& vocab);

struct ContinuousToken {
  Vec value;
  int param_id = -1;
};

using PromptElement = std::variant<TokenId, ContinuousToken>;

struct PromptSequence {
  std::vector<PromptElement> elements;

  static PromptSequence from_tokens(const std::vector<TokenId>& ids);
  std::size_t size() const noexcept { return elements.size(); }
};

struct EncodedText {
  Vec global;   // feature at the EOS position
  Mat tokens;   // one row per input position
  std::size_t n_r() const noexcept { return static_cast<std::size_t>(tokens.rows()); }
};

struct EncoderConfig {
  int d = 64;
  int hidden_dim = 0;  // 0 means 2*d
  std::uint64_t seed = 0;
  std::size_t context_limit = 77;
  // Norm of the sinusoidal positional vectors relative to token embeddings.
  double positional_scale = 0.1;
  // b1 ~ N(0, bias_scale²/d), W2 ~ N(0, residual_scale²/hidden).
  double bias_scale = 0.1;
  double residual_scale = 0.3;

  int hidden() const noexcept { return hidden_dim > 0 ? hidden_dim : 2 * d; }
};

// Frozen single-layer encoder over u_t = x_t + p_t:
//
//   row_t = g(u_t) for every position before EOS
//   row_EOS = g(mean(u_0..u_EOS))
//   g(v) = v + W2 tanh(W1 v + b1)
//
// Token rows stay local while the EOS row (the global feature) sees the
// whole sequence. All weights come from the seed and are never updated.
class TextEncoder {
 public:
  TextEncoder(EncoderConfig cfg, std::size_t vocab_size);

  const EncoderConfig& config() const noexcept { return cfg_; }
  int dim() const noexcept { return cfg_.d; }
  std::size_t vocab_size() const noexcept { return static_cast<std::size_t>(embeddings_.rows()); }

  EncodedText encode(const PromptSequence& seq) const;
  EncodedText encode(const std::vector<TokenId>& ids) const;
  Vec encode_global(const PromptSequence& seq) const;

  // Same results as calling encode() on each sequence in order.
  std::vector<EncodedText> encode_batch(const std::vector<PromptSequence>& seqs, std::size_t threads = 1) const;

  // Gradient of <grad_global, global(seq)> with respect to every element's
  // input vector (token elements included; callers route continuous ones).
  std::vector<Vec> global_vjp(const PromptSequence& seq, const Vec& grad_global) const;

  // Directional derivative of every output row, one tangent per element.
  EncodedText jvp(const PromptSequence& seq, const std::vector<Vec>& tangents) const;

  Vec positional(std::size_t pos) const;
  Vec embedding(TokenId id) const;

  // Hash of all frozen weights.
  std::uint64_t fingerprint() const;

 private:
  void check(const PromptSequence& seq) const;
  Mat inputs(const PromptSequence& seq) const;  // n × d, positional included
  Vec block(const Vec& v) const;                 // v + W2 tanh(W1 v + b1)

  EncoderConfig cfg_;
  Mat embeddings_;  // vocab × d
  Mat w1_;          // hidden × d
  Vec b1_;
  Mat w2_;          // d × hidden
};

struct Normalized {
  Vec v;
  bool degenerate = false;
};

// Unit vector, or the input unchanged with degenerate=true when ‖v‖ ≤ eps.
Normalized l2_normalize(const Vec& v, double eps = 1e-12);

// ---------------------------------------------------------------------------
// Feature files: "HPFV1", u32 version, u32 d, u32 n_items, u32 n_dense, then
// per item [u32 rows, only when n_dense == 0] + global (d floats) + dense
// (rows × d floats, row-major). All little-endian.

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecF = Eigen::VectorXf;

struct FeatureItem {
  VecF global;
  MatF dense;

  bool operator==(const FeatureItem& o) const { return global == o.global && dense == o.dense; }
};

struct FeatureSet {
  int d = 0;
  std::vector<FeatureItem> items;
};

void write_features(const std::filesystem::path& path, const FeatureSet& set);
FeatureSet read_features(const std::filesystem::path& path);

// Single-precision copy of an encoding, the common input to scoring.
FeatureItem to_feature_item(const EncodedText& enc);

}  // namespace hiprompt
