#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "hiprompt/error.hpp"
#include "hiprompt/experiment.hpp"
#include "hiprompt/inference.hpp"
#include "oracles.hpp"

using namespace hiprompt;
namespace fs = std::filesystem;

namespace {

Mat unit_rows(Mat m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

ClassEmbeddingBank bank_of(const Mat& g, const Mat& l) {
  ClassEmbeddingBank b;
  b.global = g;
  b.local = l;
  b.degenerate.assign(static_cast<std::size_t>(g.rows()), false);
  return b;
}

struct Small {
  CategorySet cats{std::vector<std::string>{"knife", "fork", "sofa", "book"}};
  SubgroupPartition partition;
  Corpus corpus = {
      {"a sharp knife with a steel blade", {0}, DescriptionKind::fine, ""},
      {"a fork with four tines", {1}, DescriptionKind::fine, ""},
      {"a plush sofa with cushions", {2}, DescriptionKind::fine, ""},
      {"a book with many pages", {3}, DescriptionKind::fine, ""},
      {"a knife and a fork on the table", {0, 1}, DescriptionKind::relationship, ""},
      {"a book lying on the sofa", {2, 3}, DescriptionKind::relationship, ""},
  };
  Vocabulary vocab = build_vocabulary({&corpus}, cats);
  EncoderConfig ecfg;
  TextEncoder encoder{ecfg, vocab.size()};

  Small() {
    partition.coarse_groups = {{0, 1}, {2, 3}};
    partition.fine_groups = {{0, 1}, {2, 3}};
  }
};

}  // namespace

TEST_CASE("top-k breaks ties by ascending id") {
  Vec s(5);
  s << 0.2, 0.9, 0.5, 0.9, 0.5;
  CHECK(top_k_ids(s, 3) == std::vector<CategoryId>{1, 3, 2});
  CHECK(top_k_ids(s, 10).size() == 5);
}

TEST_CASE("fused score") {
  Mat g = Mat::Identity(2, 3);
  Mat l(2, 3);
  l << 0, 0, 1, 0, 1, 0;
  auto bank = bank_of(g, l);
  Vec gf(3);
  gf << 1, 0, 0;
  Mat dense(1, 3);
  dense << 1, 0, 0;
  InferenceConfig cfg;
  auto p = score(gf, dense, bank, cfg);
  CHECK(p.s_global(0) == 1.0);
  CHECK(p.s_local(0) == 0.0);
  CHECK(p.fused(0) == doctest::Approx(0.65).epsilon(1e-15));

  cfg.lambda2 = 1.0;
  p = score(gf, dense, bank, cfg);
  CHECK(p.fused == p.s_global);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  Mat rows(4, 6), toks(5, 6);
  for (auto& x : rows.reshaped()) x = n(rng);
  for (auto& x : toks.reshaped()) x = n(rng);
  rows = unit_rows(rows);
  cfg.tau = 1e-6;
  cfg.lambda2 = 0.0;
  p = score(Vec::Ones(6), toks, bank_of(rows, rows), cfg);
  Mat s = rows * unit_rows(toks).transpose();
  for (int i = 0; i < 4; ++i) CHECK(p.fused(i) == doctest::Approx(s.row(i).maxCoeff()).epsilon(1e-12));
}

TEST_CASE("degenerate bank rows never win") {
  Mat g = Mat::Identity(3, 3);
  auto bank = bank_of(g, g);
  bank.degenerate[0] = true;
  Vec gf(3);
  gf << 1, 0, 0;
  auto p = score(gf, gf.transpose(), bank, InferenceConfig{});
  CHECK(p.fused(0) == -1.0);
  CHECK(p.topk.front().first != 0);
}

TEST_CASE("average precision") {
  CHECK(average_precision({0.9, 0.8, 0.7}, {false, true, false}) == 0.5);
  CHECK(average_precision({0.9, 0.8, 0.1, 0.05}, {true, true, false, false}) == 1.0);
  CHECK_FALSE(average_precision({0.3, 0.2}, {false, false}).has_value());

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> len(1, 50), coarse(0, 6);
    std::bernoulli_distribution pos(0.3);
    const int n = len(rng);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<bool> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = coarse(rng) / 6.0;  // coarse grid forces ties
      y[static_cast<std::size_t>(i)] = pos(rng);
    }
    auto got = average_precision(s, y);
    double want = oracle::average_precision(s, y);
    if (want < 0)
      CHECK_FALSE(got.has_value());
    else
      CHECK(got.value() == want);
  }
}

TEST_CASE("f1 at k") {
  std::vector<Vec> scores(2, Vec(4));
  scores[0] << 0.9, 0.8, 0.7, 0.1;
  scores[1] << 0.1, 0.7, 0.8, 0.9;
  CHECK(f1_at_k(scores, {{0, 1, 2}, {1, 2, 3}}, 3) == 1.0);
  CHECK(f1_at_k(scores, {{3}, {0}}, 3) == 0.0);

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> items(1, 50), classes(1, 10), grid(0, 4);
    const int n = items(rng), c = classes(rng);
    std::vector<Vec> s(static_cast<std::size_t>(n), Vec(c));
    oracle::Table t(static_cast<std::size_t>(n), oracle::Row(static_cast<std::size_t>(c)));
    std::vector<std::set<CategoryId>> labels(static_cast<std::size_t>(n));
    std::vector<std::set<int>> olabels(static_cast<std::size_t>(n));
    std::bernoulli_distribution pos(0.3);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < c; ++k) {
        double v = grid(rng) / 4.0;
        s[static_cast<std::size_t>(i)](k) = v;
        t[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = v;
        if (pos(rng)) {
          labels[static_cast<std::size_t>(i)].insert(k);
          olabels[static_cast<std::size_t>(i)].insert(k);
        }
      }
    CHECK(f1_at_k(s, labels, 3) == oracle::f1_at_k(t, olabels, 3));
  }
}

TEST_CASE("bank export") {
  Small w;
  auto model = make_prompt_model(w.partition, {2, 1, 1, 2}, 4, w.ecfg.d, 1);
  auto a = export_bank(model, w.encoder, w.cats, w.vocab);
  auto b = export_bank(model, w.encoder, w.cats, w.vocab);
  CHECK(a.global.rows() == 4);
  CHECK(a.local.rows() == 4);
  CHECK(a.global == b.global);
  CHECK(a.local == b.local);
  for (int i = 0; i < 4; ++i) {
    CHECK(a.global.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a.local.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("evaluation") {
  Small w;
  auto bank = handcraft_bank(w.encoder, w.cats, w.vocab);
  auto items = items_from_corpus(w.encoder, w.vocab, w.corpus);
  auto r = evaluate(items, bank, InferenceConfig{});
  CHECK(r.n_items == 6);
  CHECK(r.n_classes_scored == 4);
  CHECK(r.map >= 0.0);
  CHECK(r.map <= 1.0);
  CHECK(r.positives_per_class == std::vector<std::size_t>{2, 2, 2, 2});
  CHECK_THROWS_AS(evaluate({}, bank, InferenceConfig{}), Error);

  // One item, its single class ranked first.
  Mat g = Mat::Identity(2, 2);
  EvalItem one{"x", {}, {0}};
  one.features.global = VecF::Zero(2);
  one.features.global(0) = 1;
  one.features.dense = MatF::Zero(1, 2);
  one.features.dense(0, 0) = 1;
  auto single = evaluate({one}, bank_of(g, g), InferenceConfig{});
  CHECK(single.map == 1.0);
  CHECK(single.n_classes_scored == 1);
  CHECK(single.f1_top3 == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("corpus and feature-file inputs give the same report") {
  Small w;
  auto bank = handcraft_bank(w.encoder, w.cats, w.vocab);
  auto items = items_from_corpus(w.encoder, w.vocab, w.corpus);
  auto dir = fs::temp_directory_path() / "hiprompt_inference";
  fs::create_directories(dir);
  write_features(dir / "f.bin", to_feature_set(items, w.ecfg.d));
  write_labels(dir / "f.bin.labels.jsonl", items);
  auto back = items_from_features(read_features(dir / "f.bin"), dir / "f.bin.labels.jsonl", 4);
  auto a = evaluate(items, bank, InferenceConfig{});
  auto b = evaluate(back, bank, InferenceConfig{});
  CHECK(a.to_json() == b.to_json());
}

TEST_CASE("top-k report") {
  Small w;
  auto bank = handcraft_bank(w.encoder, w.cats, w.vocab);
  auto items = items_from_corpus(w.encoder, w.vocab, w.corpus);
  InferenceConfig cfg;
  auto text = topk_report(items, bank, cfg, w.cats, 3);
  CHECK(text == topk_report(items, bank, cfg, w.cats, 3));
  std::istringstream in(text);
  std::string line;
  std::size_t item_lines = 0, rank_lines = 0;
  while (std::getline(in, line)) (line.rfind("  ", 0) == 0 ? rank_lines : item_lines)++;
  CHECK(item_lines == items.size());
  CHECK(rank_lines == 3 * items.size());

  auto p = score(items[0].features.global.cast<double>(), items[0].features.dense.cast<double>(), bank, cfg);
  std::istringstream first(text);
  std::getline(first, line);
  std::getline(first, line);
  CHECK(line.find(w.cats.name(p.topk[0].first)) != std::string::npos);
}
