#include "hiprompt/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <thread>

#include <nlohmann/json.hpp>

#include "hiprompt/error.hpp"
#include "hiprompt/llm_client.hpp"

namespace hiprompt {

static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() : tokens_{"<pad>", "<unk>", "<eos>"} {}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& w : split_words(t)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (auto& [w, n] : sorted) {
    v.index_.emplace(w, static_cast<TokenId>(v.tokens_.size()));
    v.tokens_.push_back(w);
  }
  return v;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_token : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw Error(ErrorCode::precondition, "token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::to_json() const { return nlohmann::json(tokens_).dump(); }

Vocabulary Vocabulary::from_json(std::string_view text) {
  std::vector<std::string> tokens;
  try {
    tokens = nlohmann::json::parse(text).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::format_error, std::string("vocabulary: ") + e.what());
  }
  if (tokens.size() < 3 || tokens[0] != "<pad>" || tokens[1] != "<unk>" || tokens[2] != "<eos>")
    throw Error(ErrorCode::format_error, "vocabulary must start with <pad>, <unk>, <eos>");
  Vocabulary v;
  for (std::size_t i = 3; i < tokens.size(); ++i) {
    if (!v.index_.emplace(tokens[i], static_cast<TokenId>(i)).second)
      throw Error(ErrorCode::format_error, "duplicate vocabulary token: " + tokens[i]);
    v.tokens_.push_back(tokens[i]);
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << to_json() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab, std::size_t context_limit) {
  auto words = split_words(text);
  if (words.empty()) throw Error(ErrorCode::empty_text, "no words in text");
  if (context_limit < 2) throw Error(ErrorCode::precondition, "context limit too small");
  if (words.size() > context_limit - 1) words.resize(context_limit - 1);
  std::vector<TokenId> ids;
  ids.reserve(words.size() + 1);
  for (const auto& w : words) ids.push_back(vocab.id(w));
  ids.push_back(eos_token);
  return ids;
}

std::vector<TokenId> tokenize_words(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

PromptSequence PromptSequence::from_tokens(const std::vector<TokenId>& ids) {
  PromptSequence seq;
  seq.elements.assign(ids.begin(), ids.end());
  return seq;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Shared by encode() and encode_global() so the EOS row matches bit for bit.
Vec context_mean(const Mat& x) {
  Vec sum = Vec::Zero(x.cols());
  for (Eigen::Index t = 0; t < x.rows(); ++t) sum += x.row(t).transpose();
  return sum / static_cast<double>(x.rows());
}

void fill_gaussian(Mat& m, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
}

}  // namespace

TextEncoder::TextEncoder(EncoderConfig cfg, std::size_t vocab_size) : cfg_(cfg) {
  if (cfg_.d <= 0) throw Error(ErrorCode::precondition, "encoder dimension must be positive");
  if (cfg_.context_limit < 2) throw Error(ErrorCode::precondition, "context limit too small");
  const int d = cfg_.d, h = cfg_.hidden();

  // Each embedding row depends only on (seed, token id), so growing the
  // vocabulary never changes existing rows.
  embeddings_.resize(static_cast<Eigen::Index>(vocab_size), d);
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t id = 0; id < vocab_size; ++id) {
    std::mt19937_64 rng(mix(cfg_.seed ^ mix(id + 1)));
    std::normal_distribution<double> dist(0.0, emb_std);
    for (int k = 0; k < d; ++k) embeddings_(static_cast<Eigen::Index>(id), k) = dist(rng);
  }

  std::mt19937_64 rng(mix(cfg_.seed ^ 0x5EEDF00DULL));
  w1_.resize(h, d);
  fill_gaussian(w1_, rng, 1.0 / std::sqrt(static_cast<double>(d)));
  w2_.resize(d, h);
  fill_gaussian(w2_, rng, cfg_.residual_scale / std::sqrt(static_cast<double>(h)));
  Mat b(h, 1);
  fill_gaussian(b, rng, cfg_.bias_scale / std::sqrt(static_cast<double>(d)));
  b1_ = b.col(0);
}

Vec TextEncoder::positional(std::size_t pos) const {
  const int d = cfg_.d;
  Vec p(d);
  const double scale = cfg_.positional_scale / std::sqrt(std::max(1.0, d / 2.0));
  for (int k = 0; k < d; ++k) {
    double freq = std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / d);
    double angle = static_cast<double>(pos) * freq;
    p(k) = scale * (k % 2 == 0 ? std::sin(angle) : std::cos(angle));
  }
  return p;
}

Vec TextEncoder::embedding(TokenId id) const {
  if (id < 0 || id >= embeddings_.rows())
    throw Error(ErrorCode::precondition, "token id outside the encoder vocabulary: " + std::to_string(id));
  return embeddings_.row(id).transpose();
}

void TextEncoder::check(const PromptSequence& seq) const {
  if (seq.elements.empty()) throw Error(ErrorCode::precondition, "empty sequence");
  if (seq.size() > cfg_.context_limit)
    throw Error(ErrorCode::sequence_too_long,
                "sequence of length " + std::to_string(seq.size()) + " exceeds " + std::to_string(cfg_.context_limit));
  auto* last = std::get_if<TokenId>(&seq.elements.back());
  if (!last || *last != eos_token) throw Error(ErrorCode::precondition, "sequence must end with EOS");
}

Mat TextEncoder::inputs(const PromptSequence& seq) const {
  const auto n = static_cast<Eigen::Index>(seq.size());
  Mat x(n, cfg_.d);
  for (Eigen::Index t = 0; t < n; ++t) {
    const auto& el = seq.elements[static_cast<std::size_t>(t)];
    if (auto* id = std::get_if<TokenId>(&el)) {
      x.row(t) = embedding(*id).transpose();
    } else {
      const auto& ct = std::get<ContinuousToken>(el);
      if (ct.value.size() != cfg_.d) throw Error(ErrorCode::precondition, "continuous token has wrong dimension");
      x.row(t) = ct.value.transpose();
    }
    x.row(t) += positional(static_cast<std::size_t>(t)).transpose();
  }
  return x;
}

EncodedText TextEncoder::encode(const PromptSequence& seq) const {
  check(seq);
  Mat x = inputs(seq);
  const auto n = x.rows();
  EncodedText out;
  out.tokens.resize(n, cfg_.d);
  for (Eigen::Index t = 0; t + 1 < n; ++t) out.tokens.row(t) = block(x.row(t).transpose()).transpose();
  out.global = block(context_mean(x));
  out.tokens.row(n - 1) = out.global.transpose();
  return out;
}

EncodedText TextEncoder::encode(const std::vector<TokenId>& ids) const {
  return encode(PromptSequence::from_tokens(ids));
}

Vec TextEncoder::encode_global(const PromptSequence& seq) const {
  check(seq);
  return block(context_mean(inputs(seq)));
}

Vec TextEncoder::block(const Vec& v) const {
  Vec hidden = (w1_ * v + b1_).array().tanh().matrix();
  return v + w2_ * hidden;
}

std::vector<EncodedText> TextEncoder::encode_batch(const std::vector<PromptSequence>& seqs, std::size_t threads) const {
  std::vector<EncodedText> out(seqs.size());
  threads = std::max<std::size_t>(1, std::min(threads, seqs.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < seqs.size(); ++i) out[i] = encode(seqs[i]);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < seqs.size(); i += threads) out[i] = encode(seqs[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<Vec> TextEncoder::global_vjp(const PromptSequence& seq, const Vec& grad_global) const {
  check(seq);
  Vec c = context_mean(inputs(seq));
  Vec hidden = (w1_ * c + b1_).array().tanh().matrix();
  Vec dpre = (w2_.transpose() * grad_global).cwiseProduct((1.0 - hidden.array().square()).matrix());
  Vec dc = grad_global + w1_.transpose() * dpre;
  Vec per_input = dc / static_cast<double>(seq.size());
  return std::vector<Vec>(seq.size(), per_input);
}

EncodedText TextEncoder::jvp(const PromptSequence& seq, const std::vector<Vec>& tangents) const {
  check(seq);
  if (tangents.size() != seq.size()) throw Error(ErrorCode::precondition, "one tangent per element required");
  Mat x = inputs(seq);
  const auto n = x.rows();
  EncodedText out;
  out.tokens.resize(n, cfg_.d);
  Vec dmean = Vec::Zero(cfg_.d);
  for (const auto& tg : tangents) dmean += tg;
  dmean /= static_cast<double>(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const bool last = t + 1 == n;
    Vec v = last ? context_mean(x) : Vec(x.row(t).transpose());
    const Vec& dv = last ? dmean : tangents[static_cast<std::size_t>(t)];
    Vec hidden = (w1_ * v + b1_).array().tanh().matrix();
    Vec dhidden = (1.0 - hidden.array().square()).matrix().cwiseProduct(w1_ * dv);
    out.tokens.row(t) = (dv + w2_ * dhidden).transpose();
  }
  out.global = out.tokens.row(n - 1).transpose();
  return out;
}

std::uint64_t TextEncoder::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const double* p, Eigen::Index n) {
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(p), static_cast<std::size_t>(n) * sizeof(double)), h);
  };
  feed(embeddings_.data(), embeddings_.size());
  feed(w1_.data(), w1_.size());
  feed(b1_.data(), b1_.size());
  feed(w2_.data(), w2_.size());
  return h;
}

Normalized l2_normalize(const Vec& v, double eps) {
  double norm = v.norm();
  if (!(norm > eps)) return {v, true};
  return {v / norm, false};
}

// ---------------------------------------------------------------------------

namespace {

constexpr char feature_magic[5] = {'H', 'P', 'F', 'V', '1'};
constexpr std::uint32_t feature_version = 1;

void put_u32(std::string& buf, std::uint32_t v) { buf.append(reinterpret_cast<const char*>(&v), 4); }

void put_floats(std::string& buf, const float* p, std::size_t n) {
  buf.append(reinterpret_cast<const char*>(p), n * sizeof(float));
}

struct Reader {
  const std::string& buf;
  std::uint64_t pos = 0;

  void need(std::uint64_t n, const char* what) const {
    if (buf.size() - pos < n)
      throw Error::format_at_offset(pos, std::string("truncated ") + what + ": need " + std::to_string(n) +
                                             " bytes, have " + std::to_string(buf.size() - pos));
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  void floats(float* dst, std::size_t n, const char* what) {
    need(n * sizeof(float), what);
    std::memcpy(dst, buf.data() + pos, n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isfinite(dst[i]))
        throw Error(ErrorCode::non_finite_value,
                    std::string("non-finite value in ") + what + " at byte offset " + std::to_string(pos + i * sizeof(float)));
    pos += n * sizeof(float);
  }
};

}  // namespace

void write_features(const std::filesystem::path& path, const FeatureSet& set) {
  if (set.d <= 0) throw Error(ErrorCode::precondition, "feature dimension must be positive");
  std::uint32_t n_dense = set.items.empty() ? 0 : static_cast<std::uint32_t>(set.items.front().dense.rows());
  for (const auto& item : set.items) {
    if (item.global.size() != set.d || item.dense.cols() != set.d)
      throw Error(ErrorCode::precondition, "feature item has wrong dimension");
    if (item.dense.rows() != static_cast<Eigen::Index>(n_dense)) n_dense = 0;
  }
  std::string buf(feature_magic, sizeof(feature_magic));
  put_u32(buf, feature_version);
  put_u32(buf, static_cast<std::uint32_t>(set.d));
  put_u32(buf, static_cast<std::uint32_t>(set.items.size()));
  put_u32(buf, n_dense);
  for (const auto& item : set.items) {
    if (n_dense == 0) put_u32(buf, static_cast<std::uint32_t>(item.dense.rows()));
    put_floats(buf, item.global.data(), static_cast<std::size_t>(item.global.size()));
    put_floats(buf, item.dense.data(), static_cast<std::size_t>(item.dense.size()));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(buf.data(), static_cast<std::streamsize>(buf.size())))
    throw Error(ErrorCode::io_error, "cannot write " + path.string());
}

FeatureSet read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r{buf};
  r.need(sizeof(feature_magic), "magic");
  if (buf.compare(0, sizeof(feature_magic), feature_magic, sizeof(feature_magic)) != 0)
    throw Error::format_at_offset(0, "bad magic, expected HPFV1");
  r.pos = sizeof(feature_magic);
  auto version = r.u32("header");
  if (version != feature_version) throw Error::format_at_offset(r.pos - 4, "unsupported version " + std::to_string(version));
  auto d = r.u32("header");
  auto n_items = r.u32("header");
  auto n_dense = r.u32("header");
  if (d == 0) throw Error::format_at_offset(r.pos - 12, "dimension is zero");
  if (n_dense != 0) {
    std::uint64_t expected = r.pos + std::uint64_t(n_items) * (std::uint64_t(d) + std::uint64_t(n_dense) * d) * 4;
    if (expected != buf.size())
      throw Error::format_at_offset(r.pos, "payload is " + std::to_string(buf.size() - r.pos) +
                                               " bytes, header declares " + std::to_string(expected - r.pos));
  }
  FeatureSet set;
  set.d = static_cast<int>(d);
  set.items.reserve(n_items);
  for (std::uint32_t i = 0; i < n_items; ++i) {
    auto rows = n_dense != 0 ? n_dense : r.u32("item row count");
    if (rows == 0) throw Error::format_at_offset(r.pos - 4, "item with zero dense rows");
    FeatureItem item;
    item.global.resize(d);
    item.dense.resize(rows, d);
    r.floats(item.global.data(), d, "global feature");
    r.floats(item.dense.data(), std::size_t(rows) * d, "dense features");
    set.items.push_back(std::move(item));
  }
  if (r.pos != buf.size()) throw Error::format_at_offset(r.pos, "trailing bytes after last item");
  return set;
}

FeatureItem to_feature_item(const EncodedText& enc) {
  return {enc.global.cast<float>(), enc.tokens.cast<float>()};
}

}  // namespace hiprompt
