// Acceptance report: one PASS/FAIL line per criterion.
//
//   acceptance [--known-red 6,7] [--quick]
//
// Exit status is 0 when every failing criterion is listed in --known-red.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "../tests/oracles.hpp"
#include "hiprompt/commands.hpp"
#include "hiprompt/experiment.hpp"
#include "hiprompt/inference.hpp"
#include "hiprompt/learning.hpp"

using namespace hiprompt;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

struct Outcome {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Outcome> outcomes;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  outcomes.push_back({id, name, pass, detail});
  std::cout << fmt::format("[{}] {}. {}: {}", pass ? "PASS" : "FAIL", id, name, detail) << std::endl;
}

Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n;
  Mat m(r, c);
  for (auto& x : m.reshaped()) x = n(rng);
  return m;
}

Mat unit_rows(Mat m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

oracle::Table table(const Mat& m) {
  oracle::Table t(static_cast<std::size_t>(m.rows()), oracle::Row(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return t;
}

// ---------------------------------------------------------------------------

void gradient_correctness() {
  auto t0 = clock_type::now();
  GradcheckOptions opt;
  opt.trials = 20;
  auto r = run_gradcheck(opt);
  double secs = seconds_since(t0);
  report(1, "gradient correctness", r.passed && secs < 30,
         fmt::format("20 trials, max rel err rank {:.2e} order {:.2e} total {:.2e} (< 1e-6), {:.1f} s (< 30 s)",
                     r.max_rel_rank, r.max_rel_order, r.max_rel_total, secs));
}

void oracle_equivalence() {
  std::mt19937_64 rng(2024);
  const int instances = 200;
  double worst_local = 0, worst_sim = 0, worst_kl = 0;
  int ap_mismatch = 0, f1_mismatch = 0;
  for (int t = 0; t < instances; ++t) {
    std::uniform_int_distribution<int> small(1, 6), dim(2, 8);
    const int n = small(rng), nr = small(rng), d = dim(rng);
    const double tau = 0.25 + 0.25 * (t % 8);

    Mat bank = unit_rows(random_mat(rng, n, d));
    Mat tokens = random_mat(rng, nr, d);
    Vec got = local_similarity(tokens, bank, tau);
    auto want = oracle::local_similarity(table(tokens), table(bank), tau);
    for (int i = 0; i < n; ++i) worst_local = std::max(worst_local, std::abs(got(i) - want[static_cast<std::size_t>(i)]));

    Mat sim = similarity_matrix(bank);
    auto sim_want = oracle::similarity_matrix(table(bank));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        worst_sim = std::max(worst_sim, std::abs(sim(i, j) - sim_want[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));

    Mat other = similarity_matrix(unit_rows(random_mat(rng, n, d)));
    worst_kl = std::max(worst_kl, std::abs(order_loss(sim, other, tau) - oracle::order_loss(table(sim), table(other), tau)));

    std::uniform_int_distribution<int> items(1, 50), classes(1, 10), grid(0, 5);
    std::bernoulli_distribution pos(0.3);
    const int m = items(rng), c = classes(rng);
    std::vector<double> s(static_cast<std::size_t>(m));
    std::vector<bool> y(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      s[static_cast<std::size_t>(i)] = grid(rng) / 5.0;
      y[static_cast<std::size_t>(i)] = pos(rng);
    }
    auto ap = average_precision(s, y);
    double ap_want = oracle::average_precision(s, y);
    if (ap_want < 0 ? ap.has_value() : (!ap || *ap != ap_want)) ++ap_mismatch;

    std::vector<Vec> scores(static_cast<std::size_t>(m), Vec(c));
    oracle::Table otab(static_cast<std::size_t>(m), oracle::Row(static_cast<std::size_t>(c)));
    std::vector<std::set<CategoryId>> labels(static_cast<std::size_t>(m));
    std::vector<std::set<int>> olabels(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < c; ++k) {
        double v = grid(rng) / 5.0;
        scores[static_cast<std::size_t>(i)](k) = v;
        otab[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = v;
        if (pos(rng)) {
          labels[static_cast<std::size_t>(i)].insert(k);
          olabels[static_cast<std::size_t>(i)].insert(k);
        }
      }
    if (f1_at_k(scores, labels, 3) != oracle::f1_at_k(otab, olabels, 3)) ++f1_mismatch;
  }
  bool pass = worst_local <= 1e-12 && worst_sim <= 1e-12 && worst_kl <= 1e-12 && ap_mismatch == 0 && f1_mismatch == 0;
  report(2, "oracle equivalence", pass,
         fmt::format("{} instances each; max |diff| local {:.1e} sim {:.1e} KL {:.1e} (<= 1e-12); "
                     "AP mismatches {}, F1 mismatches {} (exact)",
                     instances, worst_local, worst_sim, worst_kl, ap_mismatch, f1_mismatch));
}

void tying_invariant() {
  SyntheticConfig sc;
  sc.per_attribute = 1;
  sc.per_pair = 1;
  auto task = make_synthetic_task(sc);
  const auto n = task.cats.size();
  EncoderConfig ecfg;
  TextEncoder enc(ecfg, task.vocab.size());
  Objective obj(enc, task.cats, task.vocab, handcraft_embeddings(enc, task.cats, task.vocab, {}), LossConfig{});

  std::mt19937_64 rng(77);
  std::vector<PreparedText> data;
  for (int i = 0; i < 100; ++i) {
    std::uniform_int_distribution<int> len(2, 9), cat(0, static_cast<int>(n) - 1);
    EncodedText e;
    e.tokens = random_mat(rng, len(rng), ecfg.d);
    e.global = e.tokens.row(e.tokens.rows() - 1).transpose();
    data.push_back(prepare_text(e, {cat(rng)}, n));
  }
  auto model = make_prompt_model(task.partition, TokenComposition{}, n, ecfg.d, 5);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 1;
  tc.lr = 0.05;
  fit(obj, model, data, tc);

  const auto& comp = model.global.composition;
  const int tied_cols = comp.shared + comp.ps1 + comp.ps2;
  int pairs = 0, tied_ok = 0, specific_differ = 0, specific_total = 0;
  for (Branch b : {Branch::global, Branch::local}) {
    for (const auto& g : task.partition.fine_groups) {
      for (std::size_t x = 0; x < g.size(); ++x)
        for (std::size_t y = x + 1; y < g.size(); ++y) {
          auto px = materialize_prompt(model.layout(b), model.store, g[x], task.cats, task.vocab);
          auto py = materialize_prompt(model.layout(b), model.store, g[y], task.cats, task.vocab);
          ++pairs;
          bool same = true;
          for (int c = 0; c < tied_cols; ++c)
            same = same && std::get<ContinuousToken>(px.elements[static_cast<std::size_t>(c)]).value ==
                               std::get<ContinuousToken>(py.elements[static_cast<std::size_t>(c)]).value;
          tied_ok += same;
          for (int c = tied_cols; c < comp.total(); ++c) {
            ++specific_total;
            specific_differ += std::get<ContinuousToken>(px.elements[static_cast<std::size_t>(c)]).value !=
                               std::get<ContinuousToken>(py.elements[static_cast<std::size_t>(c)]).value;
          }
        }
    }
  }
  report(3, "tying invariant", pairs > 0 && tied_ok == pairs && specific_differ == specific_total,
         fmt::format("after 100 steps, {}/{} same-fine-group pairs bit-identical in shared and partial-shared "
                     "slots, {}/{} category-specific slots differ",
                     tied_ok, pairs, specific_differ, specific_total));
}

void paper_defaults() {
  TokenComposition comp;
  LossConfig loss;
  InferenceConfig inf;
  TrainConfig tr;
  bool pass = comp.total() == 32 && comp.shared == 16 && comp.ps1 == 8 && comp.ps2 == 4 && comp.specific == 4 &&
              loss.margin == 1.0 && loss.lambda1 == 0.2 && inf.lambda2 == 0.65 && tr.lr == 0.002 &&
              tr.milestones == std::vector<int>{2, 5} && tr.gamma == 0.1 && tr.epochs == 10 &&
              std::abs(lr_at(0, tr) - 0.002) < 1e-15 && std::abs(lr_at(2, tr) - 0.0002) < 1e-15 &&
              std::abs(lr_at(7, tr) - 0.00002) < 1e-15;
  report(4, "hyperparameter defaults", pass,
         fmt::format("M={} ({}/{}/{}/{}), m={}, lambda1={}, lambda2={}, lr={} x{} at {{2,5}}, {} epochs; "
                     "lr plateaus {} {} {}",
                     comp.total(), comp.shared, comp.ps1, comp.ps2, comp.specific, loss.margin, loss.lambda1,
                     inf.lambda2, tr.lr, tr.gamma, tr.epochs, lr_at(0, tr), lr_at(2, tr), lr_at(7, tr)));
}

// ---------------------------------------------------------------------------
// Synthetic task experiments (criteria 5 to 7)

struct SeedRuns {
  std::map<PromptVariant, ExperimentResult> by_variant;
};

ExperimentSettings settings_for(std::uint64_t seed) {
  ExperimentSettings s;
  s.encoder.seed = seed;
  s.prompt_seed = seed;
  s.train.seed = seed;
  return s;
}

std::map<std::uint64_t, SyntheticTask> tasks;

const SyntheticTask& task_for(std::uint64_t seed) {
  auto it = tasks.find(seed);
  if (it != tasks.end()) return it->second;
  SyntheticConfig sc;
  sc.seed = seed;
  return tasks.emplace(seed, make_synthetic_task(sc)).first->second;
}

std::map<std::uint64_t, SeedRuns> runs;

const ExperimentResult& result(std::uint64_t seed, PromptVariant v) {
  auto& r = runs[seed].by_variant;
  auto it = r.find(v);
  if (it != r.end()) return it->second;
  return r.emplace(v, run_experiment(task_for(seed), v, settings_for(seed))).first->second;
}

std::string task_shape(const SyntheticTask& t) {
  std::vector<int> fine(t.cats.size()), rel(t.cats.size());
  for (const auto& r : t.train)
    for (auto c : r.positives) (r.kind == DescriptionKind::relationship ? rel : fine)[static_cast<std::size_t>(c)]++;
  return fmt::format("{} categories, {} coarse / {} fine groups, min {} fine + {} relationship descriptions per "
                     "category, {} held-out",
                     t.cats.size(), t.partition.coarse_groups.size(), t.partition.fine_groups.size(),
                     *std::min_element(fine.begin(), fine.end()), *std::min_element(rel.begin(), rel.end()),
                     t.heldout.size());
}

void synthetic_recognition(int seeds) {
  auto t0 = clock_type::now();
  double init = 0, trained = 0;
  std::string per_seed;
  for (int s = 0; s < seeds; ++s) {
    const auto& r = result(static_cast<std::uint64_t>(s), PromptVariant::hierarchical);
    init += r.map_init;
    trained += r.map_trained;
    per_seed += fmt::format("{}{:.3f}", s ? ", " : "", r.map_trained);
  }
  const double secs = seconds_since(t0);
  init /= seeds;
  trained /= seeds;
  std::cout << "    task: " << task_shape(task_for(0)) << ", d=64" << std::endl;
  report(5, "synthetic end-to-end recognition", trained >= 0.90 && trained - init >= 0.25 && secs < 120,
         fmt::format("held-out mAP {:.4f} (>= 0.90) vs init {:.4f}, gain {:.4f} (>= 0.25), seeds [{}], {:.0f} s for "
                     "{} seeds including task generation (< 120 s)",
                     trained, init, trained - init, per_seed, secs, seeds));
}

void directional_ablation(int seeds) {
  const std::vector<std::pair<PromptVariant, const char*>> rows = {
      {PromptVariant::handcraft, "Hand-craft"},
      {PromptVariant::specific, "Category-specific"},
      {PromptVariant::shared, "Shared"},
      {PromptVariant::hierarchical, "Hierarchical (Ours)"},
  };
  std::map<PromptVariant, double> map, f1;
  for (int s = 0; s < seeds; ++s)
    for (auto [v, name] : rows) {
      const auto& r = result(static_cast<std::uint64_t>(s), v);
      map[v] += r.map_trained / seeds;
      f1[v] += r.f1_trained / seeds;
    }
  std::cout << fmt::format("    {:<22}{:>8}{:>8}", "Prompts", "F1", "mAP") << '\n';
  for (auto [v, name] : rows)
    std::cout << fmt::format("    {:<22}{:>8.1f}{:>8.1f}", name, 100 * f1[v], 100 * map[v]) << '\n';
  const double h = map[PromptVariant::hierarchical];
  const double vs_shared = h - map[PromptVariant::shared];
  const double vs_specific = h - map[PromptVariant::specific];
  report(6, "directional ablation", vs_shared >= -0.01 && vs_specific >= -0.01,
         fmt::format("mean held-out mAP over {} seeds: hierarchical {:.4f}, shared {:.4f} (diff {:+.4f}), "
                     "specific {:.4f} (diff {:+.4f}); gate diff >= -0.01",
                     seeds, h, map[PromptVariant::shared], vs_shared, map[PromptVariant::specific], vs_specific));
}

void order_anchoring(int seeds) {
  int held = 0;
  std::string per_seed;
  for (int s = 0; s < seeds; ++s) {
    const auto& r = result(static_cast<std::uint64_t>(s), PromptVariant::hierarchical);
    held += r.order_kl_trained <= r.order_kl_init;
    per_seed += fmt::format("{}{:.2e} -> {:.2e}", s ? ", " : "", r.order_kl_init, r.order_kl_trained);
  }
  std::string context;
  for (int s = 0; s < seeds; ++s) {
    auto settings = settings_for(static_cast<std::uint64_t>(s));
    settings.loss.lambda1 = 0;
    auto r = run_experiment(task_for(static_cast<std::uint64_t>(s)), PromptVariant::hierarchical, settings);
    context += fmt::format("{}{:.2e}", s ? ", " : "", r.order_kl_trained);
  }
  report(7, "order-loss anchoring", held == seeds,
         fmt::format("lambda1=0.2, KL init -> trained per seed [{}]; {}/{} seeds at or below init "
                     "(trained KL with lambda1=0: [{}])",
                     per_seed, held, seeds, context));
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void determinism() {
  auto root = fs::temp_directory_path() / "hiprompt_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "categories.txt") << "knife\nfork\noven\nmicrowave\ntoaster\nsofa\nchair\nbook\nclock\nvase\n";

  auto run = [&](const std::string& name) {
    RunConfig c;
    c.categories = (root / "categories.txt").string();
    c.out = (root / name).string();
    c.seed = 7;
    c.acquire.per_attribute = 5;
    c.acquire.per_pair = 20;
    c.acquire.max_attributes = 5;
    c.train.epochs = 2;
    std::ostringstream sink;
    int a = cmd_acquire(c, sink, sink);
    int t = cmd_train(c, sink, sink);
    return a == 0 && t == 0;
  };
  bool ran = run("a") && run("b");
  int identical = 0, total = 0;
  for (auto f : {"corpus_fine.jsonl", "corpus_relationship.jsonl", "partition.json", "attributes.json",
                 "vocab.json", "checkpoint.bin", "train_log.jsonl"}) {
    ++total;
    auto x = slurp(root / "a" / f), y = slurp(root / "b" / f);
    identical += !x.empty() && x == y;
  }
  report(8, "determinism", ran && identical == total,
         fmt::format("acquire --mock + train with seed 7 twice: {}/{} output files byte-identical", identical, total));
}

void not_reproducible() {
  std::cout << "[INFO] 9. absolute benchmark numbers: not reproducible here. MS-COCO 66.8 mAP, VOC 88.7 and "
               "NUS-WIDE 47.0 need a pre-trained CLIP RN50 and the full datasets; features from such a model "
               "can be scored through `hiprompt eval --input <feature file>`."
            << std::endl;
}

std::set<int> parse_ids(const std::string& csv) {
  std::set<int> ids;
  std::stringstream ss(csv);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) ids.insert(std::stoi(part));
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> known_red;
  bool quick = false;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--known-red" && i + 1 < argc)
      known_red = parse_ids(argv[++i]);
    else if (a == "--quick")
      quick = true;
    else {
      std::cerr << "usage: acceptance [--known-red 6,7] [--quick]\n";
      return 2;
    }
  }

  spdlog::set_level(spdlog::level::err);
  auto t0 = clock_type::now();
  gradient_correctness();
  oracle_equivalence();
  tying_invariant();
  paper_defaults();
  synthetic_recognition(3);
  directional_ablation(quick ? 3 : 5);
  order_anchoring(3);
  determinism();
  not_reproducible();

  int failed = 0, unexpected = 0;
  for (const auto& o : outcomes) {
    if (o.pass) continue;
    ++failed;
    if (!known_red.count(o.id)) ++unexpected;
  }
  std::cout << fmt::format("{}/{} criteria pass, {} fail ({} not in the known-red list), {:.0f} s total",
                           outcomes.size() - static_cast<std::size_t>(failed), outcomes.size(), failed, unexpected,
                           seconds_since(t0))
            << std::endl;
  return unexpected == 0 ? 0 : 1;
}
