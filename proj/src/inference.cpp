#include "hiprompt/inference.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "hiprompt/error.hpp"

namespace hiprompt {

void InferenceConfig::validate() const {
  if (!(lambda2 >= 0 && lambda2 <= 1)) throw Error(ErrorCode::config_error, "lambda2 must lie in [0, 1]");
  if (!(tau > 0)) throw Error(ErrorCode::config_error, "tau must be positive");
  if (top_k == 0) throw Error(ErrorCode::config_error, "top_k must be at least 1");
}

std::vector<CategoryId> top_k_ids(const Vec& scores, std::size_t k) {
  std::vector<CategoryId> ids(static_cast<std::size_t>(scores.size()));
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](CategoryId a, CategoryId b) { return scores(a) > scores(b); });
  ids.resize(std::min(k, ids.size()));
  return ids;
}

ClassEmbeddingBank export_bank(const PromptModel& model, const TextEncoder& encoder, const CategorySet& cats,
                               const Vocabulary& vocab) {
  Objective probe(encoder, cats, vocab, Mat::Identity(static_cast<Eigen::Index>(cats.size()), encoder.dim()),
                  LossConfig{});
  auto bank = probe.class_embeddings(model);
  for (std::size_t i = 0; i < bank.degenerate.size(); ++i)
    if (bank.degenerate[i]) spdlog::warn("class embedding of {} is degenerate", cats.name(static_cast<CategoryId>(i)));
  return bank;
}

ClassEmbeddingBank handcraft_bank(const TextEncoder& encoder, const CategorySet& cats, const Vocabulary& vocab,
                                  const HandcraftPromptMap& map) {
  ClassEmbeddingBank bank;
  bank.global = handcraft_embeddings(encoder, cats, vocab, map);
  bank.local = bank.global;
  bank.degenerate.assign(cats.size(), false);
  return bank;
}

Prediction score(const Vec& global_feat, const Mat& dense_feat, const ClassEmbeddingBank& bank,
                 const InferenceConfig& cfg) {
  if (dense_feat.rows() == 0) throw Error(ErrorCode::precondition, "dense features need at least one row");
  Prediction p;
  p.s_global = global_similarity(global_feat, bank.global);
  p.s_local = local_similarity(dense_feat, bank.local, cfg.tau);
  for (std::size_t i = 0; i < bank.degenerate.size(); ++i) {
    if (!bank.degenerate[i]) continue;
    p.s_global(static_cast<Eigen::Index>(i)) = -1;
    p.s_local(static_cast<Eigen::Index>(i)) = -1;
  }
  p.fused = cfg.lambda2 * p.s_global + (1 - cfg.lambda2) * p.s_local;
  for (auto id : top_k_ids(p.fused, cfg.top_k)) p.topk.emplace_back(id, p.fused(id));
  return p;
}

std::optional<double> average_precision(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::precondition, "scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!labels[order[rank]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

double f1_at_k(const std::vector<Vec>& scores, const std::vector<std::set<CategoryId>>& labels, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::precondition, "k must be at least 1");
  if (scores.size() != labels.size()) throw Error(ErrorCode::precondition, "scores and labels differ in length");
  std::size_t tp = 0, predicted = 0, positives = 0;
  for (std::size_t n = 0; n < scores.size(); ++n) {
    auto top = top_k_ids(scores[n], k);
    predicted += top.size();
    positives += labels[n].size();
    for (auto id : top) tp += labels[n].count(id);
  }
  if (tp == 0) return 0;
  // 2PR/(P+R) with P = tp/predicted and R = tp/positives.
  return static_cast<double>(2 * tp) / static_cast<double>(predicted + positives);
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["mAP"] = map;
  j["F1_top3"] = f1_top3;
  auto ap = nlohmann::json::array();
  for (const auto& v : per_class_ap) ap.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  j["per_class_ap"] = ap;
  j["n_items"] = n_items;
  j["n_classes_scored"] = n_classes_scored;
  j["positives_per_class"] = positives_per_class;
  return j.dump(2);
}

std::string MetricsReport::to_table(const CategorySet& cats) const {
  std::size_t width = 8;
  for (const auto& n : cats.names()) width = std::max(width, n.size());
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << std::left << std::setw(static_cast<int>(width)) << "category" << "  " << std::right << std::setw(9)
      << "positives" << "  " << std::setw(7) << "AP" << '\n';
  for (std::size_t i = 0; i < per_class_ap.size(); ++i) {
    out << std::left << std::setw(static_cast<int>(width)) << cats.name(static_cast<CategoryId>(i)) << "  "
        << std::right << std::setw(9) << positives_per_class[i] << "  " << std::setw(7);
    if (per_class_ap[i])
      out << *per_class_ap[i];
    else
      out << "-";
    out << '\n';
  }
  out << std::left << std::setw(static_cast<int>(width)) << "mAP" << "  " << std::right << std::setw(9) << n_items
      << "  " << std::setw(7) << map << '\n';
  out << std::left << std::setw(static_cast<int>(width)) << "F1@3" << "  " << std::right << std::setw(9) << ""
      << "  " << std::setw(7) << f1_top3 << '\n';
  return out.str();
}

std::vector<EvalItem> items_from_corpus(const TextEncoder& encoder, const Vocabulary& vocab, const Corpus& corpus,
                                        std::size_t threads) {
  std::vector<PromptSequence> seqs;
  seqs.reserve(corpus.size());
  for (const auto& r : corpus)
    seqs.push_back(PromptSequence::from_tokens(tokenize(r.text, vocab, encoder.config().context_limit)));
  auto encoded = encoder.encode_batch(seqs, threads);
  std::vector<EvalItem> items;
  items.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    items.push_back(EvalItem{corpus[i].text, to_feature_item(encoded[i]), corpus[i].positives});
  return items;
}

std::vector<EvalItem> items_from_features(const FeatureSet& features, const std::filesystem::path& labels_path,
                                          std::size_t n_categories) {
  std::ifstream in(labels_path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open labels file " + labels_path.string());
  std::vector<std::optional<std::set<CategoryId>>> labels(features.items.size());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      auto id = j.at("id").get<std::size_t>();
      if (id >= labels.size()) throw Error::format_at_line(line_no, "label id out of range");
      std::set<CategoryId> pos;
      for (const auto& v : j.at("positives")) {
        auto c = v.get<CategoryId>();
        if (c < 0 || static_cast<std::size_t>(c) >= n_categories)
          throw Error(ErrorCode::unknown_category, "label category out of range on line " + std::to_string(line_no));
        pos.insert(c);
      }
      labels[id] = std::move(pos);
    } catch (const nlohmann::json::exception& e) {
      throw Error::format_at_line(line_no, e.what());
    }
  }
  std::vector<EvalItem> items;
  for (std::size_t i = 0; i < features.items.size(); ++i) {
    if (!labels[i]) throw Error(ErrorCode::format_error, "no labels for feature item " + std::to_string(i));
    items.push_back(EvalItem{"item " + std::to_string(i), features.items[i], *labels[i]});
  }
  return items;
}

void write_labels(const std::filesystem::path& path, const std::vector<EvalItem>& items) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  for (std::size_t i = 0; i < items.size(); ++i) {
    nlohmann::ordered_json j;
    j["id"] = i;
    j["positives"] = items[i].positives;
    out << j.dump() << '\n';
  }
}

FeatureSet to_feature_set(const std::vector<EvalItem>& items, int d) {
  FeatureSet set;
  set.d = d;
  for (const auto& it : items) set.items.push_back(it.features);
  return set;
}

namespace {

Prediction score_item(const EvalItem& item, const ClassEmbeddingBank& bank, const InferenceConfig& cfg) {
  return score(item.features.global.cast<double>(), item.features.dense.cast<double>(), bank, cfg);
}

}  // namespace

MetricsReport evaluate(const std::vector<EvalItem>& items, const ClassEmbeddingBank& bank,
                       const InferenceConfig& cfg) {
  cfg.validate();
  if (items.empty()) throw Error(ErrorCode::empty_eval_set, "evaluation set is empty");
  const std::size_t n = bank.size();
  std::vector<Vec> fused;
  std::vector<std::set<CategoryId>> labels;
  fused.reserve(items.size());
  for (const auto& it : items) {
    fused.push_back(score_item(it, bank, cfg).fused);
    labels.push_back(it.positives);
  }

  MetricsReport r;
  r.n_items = items.size();
  r.per_class_ap.resize(n);
  r.positives_per_class.assign(n, 0);
  double sum = 0;
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<double> s(items.size());
    std::vector<bool> y(items.size());
    for (std::size_t k = 0; k < items.size(); ++k) {
      s[k] = fused[k](static_cast<Eigen::Index>(c));
      y[k] = labels[k].count(static_cast<CategoryId>(c)) > 0;
      r.positives_per_class[c] += y[k];
    }
    r.per_class_ap[c] = average_precision(s, y);
    if (r.per_class_ap[c]) {
      sum += *r.per_class_ap[c];
      ++r.n_classes_scored;
    } else {
      spdlog::warn("class {} has no positives in the evaluation set, excluded from mAP", c);
    }
  }
  if (r.n_classes_scored == 0) throw Error(ErrorCode::empty_eval_set, "no class has a positive item");
  r.map = sum / static_cast<double>(r.n_classes_scored);
  r.f1_top3 = f1_at_k(fused, labels, 3);
  return r;
}

std::string topk_report(const std::vector<EvalItem>& items, const ClassEmbeddingBank& bank,
                        const InferenceConfig& cfg, const CategorySet& cats, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::precondition, "k must be at least 1");
  InferenceConfig c = cfg;
  c.top_k = k;
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  for (const auto& it : items) {
    out << it.label << '\n';
    for (const auto& [id, s] : score_item(it, bank, c).topk)
      out << "  " << (it.positives.count(id) ? '*' : ' ') << ' ' << cats.name(id) << "  " << s << '\n';
  }
  return out.str();
}

}  // namespace hiprompt
