#include "hiprompt/learning.hpp"

#include <algorithm>
#include <array>
#include <memory>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "hiprompt/error.hpp"

namespace hiprompt {

namespace {

constexpr double norm_eps = 1e-12;

// Log-softmax of z / tau.
Vec log_softmax(const Vec& z, double tau) {
  Vec scaled = z / tau;
  double mx = scaled.maxCoeff();
  double lse = mx + std::log((scaled.array() - mx).exp().sum());
  return (scaled.array() - lse).matrix();
}

// d(order_loss)/d(learned), anchor held fixed.
Mat order_loss_grad(const Mat& learned, const Mat& anchor, double tau) {
  const auto n = learned.rows();
  Mat g(n, learned.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    Vec logp = log_softmax(learned.row(r).transpose(), tau);
    Vec logq = log_softmax(anchor.row(r).transpose(), tau);
    Vec p = logp.array().exp().matrix();
    Vec diff = logp - logq;
    double kl = p.dot(diff);
    g.row(r) = (p.array() * (diff.array() - kl)).matrix().transpose() / tau;
  }
  return g / static_cast<double>(n);
}

}  // namespace

void LossConfig::validate() const {
  if (!(margin > 0)) throw Error(ErrorCode::config_error, "margin must be positive");
  if (!(lambda1 >= 0)) throw Error(ErrorCode::config_error, "lambda1 must be non-negative");
  if (!(tau_order > 0)) throw Error(ErrorCode::config_error, "tau_order must be positive");
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw Error(ErrorCode::config_error, "lr must be positive");
  if (epochs <= 0) throw Error(ErrorCode::config_error, "epochs must be positive");
  if (batch_size == 0) throw Error(ErrorCode::config_error, "batch_size must be positive");
  if (!(gamma > 0)) throw Error(ErrorCode::config_error, "gamma must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw Error(ErrorCode::config_error, "momentum must be in [0, 1)");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] < 0) throw Error(ErrorCode::config_error, "milestones must be non-negative");
    if (i > 0 && milestones[i] <= milestones[i - 1])
      throw Error(ErrorCode::config_error, "milestones must be strictly increasing");
  }
}

Vec global_similarity(const Vec& text_global, const Mat& bank_global) {
  auto n = l2_normalize(text_global, norm_eps);
  if (n.degenerate) throw Error(ErrorCode::degenerate_feature, "global text feature has near-zero norm");
  return bank_global * n.v;
}

Vec softmax_weighted(const Mat& s, double tau) {
  Vec out(s.rows());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Vec w = log_softmax(s.row(i).transpose(), tau).array().exp().matrix();
    out(i) = w.dot(s.row(i).transpose());
  }
  return out;
}

Vec local_similarity(const Mat& text_tokens, const Mat& bank_local, double tau) {
  if (text_tokens.rows() == 0) throw Error(ErrorCode::precondition, "no token features");
  Mat unit(text_tokens.rows(), text_tokens.cols());
  Eigen::Index kept = 0;
  for (Eigen::Index j = 0; j < text_tokens.rows(); ++j) {
    auto n = l2_normalize(text_tokens.row(j).transpose(), norm_eps);
    if (n.degenerate) {
      spdlog::warn("token feature row {} has near-zero norm, skipped", j);
      continue;
    }
    unit.row(kept++) = n.v.transpose();
  }
  if (kept == 0) throw Error(ErrorCode::degenerate_feature, "every token feature row is degenerate");
  return softmax_weighted(bank_local * unit.topRows(kept).transpose(), tau);
}

double ranking_loss(const Vec& scores, const std::vector<CategoryId>& positives,
                    const std::vector<CategoryId>& negatives, double margin) {
  if (positives.empty()) throw Error(ErrorCode::empty_positives, "ranking loss needs at least one positive");
  for (auto p : positives)
    if (std::find(negatives.begin(), negatives.end(), p) != negatives.end())
      throw Error(ErrorCode::precondition, "category is both positive and negative");
  double loss = 0;
  for (auto p : positives)
    for (auto q : negatives) loss += std::max(0.0, margin - scores(p) + scores(q));
  return loss;
}

std::vector<CategoryId> complement(const std::set<CategoryId>& positives, std::size_t n) {
  std::vector<CategoryId> out;
  for (std::size_t i = 0; i < n; ++i)
    if (!positives.count(static_cast<CategoryId>(i))) out.push_back(static_cast<CategoryId>(i));
  return out;
}

Mat similarity_matrix(const Mat& embeddings) { return embeddings * embeddings.transpose(); }

double order_loss(const Mat& learned, const Mat& anchor, double tau) {
  if (learned.rows() != anchor.rows() || learned.cols() != anchor.cols())
    throw Error(ErrorCode::precondition, "order loss needs matrices of equal shape");
  if (!learned.allFinite() || !anchor.allFinite()) throw Error(ErrorCode::non_finite_value, "order loss input not finite");
  double total = 0;
  for (Eigen::Index r = 0; r < learned.rows(); ++r) {
    Vec logp = log_softmax(learned.row(r).transpose(), tau);
    Vec logq = log_softmax(anchor.row(r).transpose(), tau);
    total += logp.array().exp().matrix().dot(logp - logq);
  }
  return total / static_cast<double>(learned.rows());
}

double total_loss(double rank, double order, double lambda1) { return rank + lambda1 * order; }

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) throw Error(ErrorCode::precondition, "epoch out of range");
  auto decays = std::count_if(cfg.milestones.begin(), cfg.milestones.end(), [epoch](int m) { return m <= epoch; });
  return cfg.lr * std::pow(cfg.gamma, static_cast<double>(decays));
}

// ---------------------------------------------------------------------------

PreparedText prepare_text(const EncodedText& enc, const std::set<CategoryId>& positives, std::size_t n) {
  PreparedText t;
  auto g = l2_normalize(enc.global, norm_eps);
  if (g.degenerate) throw Error(ErrorCode::degenerate_feature, "description has a degenerate global feature");
  t.global = g.v;
  t.tokens.resize(enc.tokens.rows(), enc.tokens.cols());
  Eigen::Index kept = 0;
  for (Eigen::Index j = 0; j < enc.tokens.rows(); ++j) {
    auto r = l2_normalize(enc.tokens.row(j).transpose(), norm_eps);
    if (r.degenerate) {
      spdlog::warn("token feature row {} has near-zero norm, skipped", j);
      continue;
    }
    t.tokens.row(kept++) = r.v.transpose();
  }
  if (kept == 0) throw Error(ErrorCode::degenerate_feature, "every token feature row is degenerate");
  t.tokens.conservativeResize(kept, Eigen::NoChange);
  t.positives.assign(positives.begin(), positives.end());
  t.negatives = complement(positives, n);
  return t;
}

std::vector<PreparedText> prepare_corpus(const TextEncoder& encoder, const Vocabulary& vocab, const Corpus& corpus,
                                         std::size_t n, std::size_t threads) {
  std::vector<PreparedText> out;
  std::vector<PromptSequence> seqs;
  seqs.reserve(corpus.size());
  for (const auto& r : corpus) seqs.push_back(PromptSequence::from_tokens(tokenize(r.text, vocab, encoder.config().context_limit)));
  auto encoded = encoder.encode_batch(seqs, threads);
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    validate_record(corpus[i], n);
    out.push_back(prepare_text(encoded[i], corpus[i].positives, n));
  }
  return out;
}

Mat handcraft_embeddings(const TextEncoder& encoder, const CategorySet& cats, const Vocabulary& vocab,
                         const HandcraftPromptMap& map) {
  Mat h(static_cast<Eigen::Index>(cats.size()), encoder.dim());
  for (std::size_t i = 0; i < cats.size(); ++i) {
    auto text = map.render(cats, static_cast<CategoryId>(i));
    auto seq = PromptSequence::from_tokens(tokenize(text, vocab, encoder.config().context_limit));
    auto n = l2_normalize(encoder.encode_global(seq), norm_eps);
    if (n.degenerate) throw Error(ErrorCode::degenerate_feature, "hand-craft prompt embedding is degenerate: " + text);
    h.row(static_cast<Eigen::Index>(i)) = n.v.transpose();
  }
  return h;
}

Objective::Objective(const TextEncoder& encoder, const CategorySet& cats, const Vocabulary& vocab, Mat handcraft,
                     LossConfig loss)
    : encoder_(encoder), cats_(cats), vocab_(vocab), anchor_(similarity_matrix(handcraft)), loss_(loss) {
  loss_.validate();
  if (handcraft.rows() != static_cast<Eigen::Index>(cats.size()))
    throw Error(ErrorCode::precondition, "hand-craft embeddings must have one row per category");
}

ClassEmbeddingBank Objective::class_embeddings(const PromptModel& model) const {
  const auto n = static_cast<Eigen::Index>(cats_.size());
  ClassEmbeddingBank bank;
  bank.global.resize(n, encoder_.dim());
  bank.local.resize(n, encoder_.dim());
  bank.degenerate.assign(static_cast<std::size_t>(n), false);
  for (Branch b : {Branch::global, Branch::local}) {
    Mat& dst = b == Branch::global ? bank.global : bank.local;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto seq = materialize_prompt(model.layout(b), model.store, static_cast<CategoryId>(i), cats_, vocab_);
      auto u = l2_normalize(encoder_.encode_global(seq), norm_eps);
      if (u.degenerate) bank.degenerate[static_cast<std::size_t>(i)] = true;
      dst.row(i) = u.v.transpose();
    }
  }
  return bank;
}

LossBreakdown Objective::evaluate(const PromptModel& model, std::span<const PreparedText* const> batch, Mat* grad,
                                  GradientWeights weights) const {
  if (batch.empty()) throw Error(ErrorCode::precondition, "empty batch");
  const auto n = static_cast<Eigen::Index>(cats_.size());
  const int d = encoder_.dim();
  const double m = loss_.margin;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  // Class embeddings, keeping what the backward pass needs.
  struct Branchwise {
    Branch branch = Branch::global;
    std::vector<PromptSequence> seqs;
    std::vector<double> norms;
    Mat unit;
    Mat d_unit;
  };
  std::array<Branchwise, 2> br;
  br[0].branch = Branch::global;
  br[1].branch = Branch::local;
  for (auto& b : br) {
    b.unit.resize(n, d);
    b.d_unit = Mat::Zero(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      b.seqs.push_back(materialize_prompt(model.layout(b.branch), model.store, static_cast<CategoryId>(i), cats_, vocab_));
      Vec e = encoder_.encode_global(b.seqs.back());
      double norm = e.norm();
      if (!(norm > norm_eps))
        throw Error(ErrorCode::degenerate_feature, "class embedding of " + cats_.name(static_cast<CategoryId>(i)) +
                                                       " has near-zero norm");
      b.norms.push_back(norm);
      b.unit.row(i) = e.transpose() / norm;
    }
  }
  const Mat& G = br[0].unit;
  const Mat& L = br[1].unit;

  LossBreakdown out;
  out.lambda1 = loss_.lambda1;
  Vec d_sg(n), d_sl(n);
  for (const PreparedText* rec : batch) {
    Vec sg = G * rec->global;
    Mat s = L * rec->tokens.transpose();  // N × N_r
    Mat w(s.rows(), s.cols());
    Vec sl(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      w.row(i) = log_softmax(s.row(i).transpose(), 1.0).array().exp().matrix().transpose();
      sl(i) = w.row(i).dot(s.row(i));
    }
    d_sg.setZero();
    d_sl.setZero();
    for (auto p : rec->positives) {
      for (auto q : rec->negatives) {
        double vg = m - sg(p) + sg(q);
        if (vg > 0) {
          out.rank_global += vg * inv_b;
          d_sg(p) -= 1;
          d_sg(q) += 1;
        }
        double vl = m - sl(p) + sl(q);
        if (vl > 0) {
          out.rank_local += vl * inv_b;
          d_sl(p) -= 1;
          d_sl(q) += 1;
        }
      }
    }
    if (grad && weights.rank != 0) {
      const double scale = weights.rank * inv_b;
      br[0].d_unit.noalias() += scale * d_sg * rec->global.transpose();
      // dS_i/ds_ij = w_ij (1 + s_ij − S_i) at temperature 1.
      Mat ds = (w.array() * (1.0 + (s.colwise() - sl).array())).matrix();
      ds = d_sl.asDiagonal() * ds;
      br[1].d_unit.noalias() += scale * ds * rec->tokens;
    }
  }

  const Mat dg = similarity_matrix(G);
  const Mat dl = similarity_matrix(L);
  out.order_global = order_loss(dg, anchor_, loss_.tau_order);
  out.order_local = order_loss(dl, anchor_, loss_.tau_order);

  if (!std::isfinite(out.total())) throw Error(ErrorCode::non_finite_loss, "loss is not finite");
  if (!grad) return out;

  const double order_scale = weights.order * loss_.lambda1;
  if (order_scale != 0) {
    Mat gg = order_loss_grad(dg, anchor_, loss_.tau_order);
    Mat gl = order_loss_grad(dl, anchor_, loss_.tau_order);
    br[0].d_unit.noalias() += order_scale * (gg + gg.transpose()) * G;
    br[1].d_unit.noalias() += order_scale * (gl + gl.transpose()) * L;
  }

  *grad = Mat::Zero(model.store.size(), d);
  for (auto& b : br) {
    for (Eigen::Index i = 0; i < n; ++i) {
      Vec u = b.unit.row(i).transpose();
      Vec du = b.d_unit.row(i).transpose();
      Vec de = (du - u * u.dot(du)) / b.norms[static_cast<std::size_t>(i)];
      auto d_in = encoder_.global_vjp(b.seqs[static_cast<std::size_t>(i)], de);
      const auto& elems = b.seqs[static_cast<std::size_t>(i)].elements;
      for (std::size_t k = 0; k < elems.size(); ++k)
        if (auto* ct = std::get_if<ContinuousToken>(&elems[k])) grad->row(ct->param_id) += d_in[k].transpose();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_jsonl(const std::vector<EpochLog>& log) {
  std::string out;
  for (const auto& e : log) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["lr"] = e.lr;
    j["mean_rank_loss"] = e.mean_rank_loss;
    j["mean_order_loss"] = e.mean_order_loss;
    j["mean_total"] = e.mean_total;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<EpochLog> fit(const Objective& objective, PromptModel& model, const std::vector<PreparedText>& data,
                          const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorCode::empty_corpus, "training corpus is empty");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Mat velocity = Mat::Zero(model.store.size(), model.store.dim());
  Mat grad;
  std::vector<const PreparedText*> batch;
  std::vector<EpochLog> log;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog entry{epoch, lr, 0, 0, 0};
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      auto end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (auto k = start; k < end; ++k) batch.push_back(&data[order[k]]);
      LossBreakdown loss;
      try {
        loss = objective.evaluate(model, batch, &grad);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::non_finite_loss && e.code() != ErrorCode::non_finite_value) throw;
        throw Error(ErrorCode::non_finite_loss, "non-finite loss in epoch " + std::to_string(epoch) +
                                                    ", batch starting at record index " +
                                                    std::to_string(order[start]) + ": " + e.what());
      }
      if (!grad.allFinite())
        throw Error(ErrorCode::non_finite_loss, "non-finite gradient in epoch " + std::to_string(epoch) +
                                                    ", batch starting at record index " + std::to_string(order[start]));
      if (cfg.optimizer == Optimizer::sgd_momentum) {
        velocity = cfg.momentum * velocity + grad;
        model.store.table() -= lr * velocity;
      } else {
        model.store.table() -= lr * grad;
      }
      entry.mean_rank_loss += loss.rank();
      entry.mean_order_loss += loss.order();
      entry.mean_total += loss.total();
      ++n_batches;
    }
    entry.mean_rank_loss /= static_cast<double>(n_batches);
    entry.mean_order_loss /= static_cast<double>(n_batches);
    entry.mean_total /= static_cast<double>(n_batches);
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

// ---------------------------------------------------------------------------

double max_relative_error(const Mat& analytic, const Mat& numeric) {
  double scale = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
  if (scale == 0) return 0;
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

namespace {

struct GradInstance {
  CategorySet cats;
  SubgroupPartition partition;
  Vocabulary vocab;
  std::unique_ptr<TextEncoder> encoder;
  PromptModel model;
  std::vector<PreparedText> texts;
  LossConfig loss;
};

GradInstance random_instance(std::mt19937_64& rng) {
  static const std::vector<std::string> names = {"anchor", "basket", "candle", "drum", "easel"};
  static const std::vector<std::string> words = {"red",  "round", "tall",  "soft",  "metal", "wood",
                                                 "near", "under", "light", "heavy", "old",   "new"};
  auto uni = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  GradInstance inst;
  const int n = uni(2, 5);
  inst.cats = CategorySet(std::vector<std::string>(names.begin(), names.begin() + n));

  std::vector<CategoryId> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::size_t pos = 0;
  while (pos < ids.size()) {
    auto len = static_cast<std::size_t>(uni(1, 3));
    Group g(ids.begin() + static_cast<long>(pos), ids.begin() + static_cast<long>(std::min(ids.size(), pos + len)));
    pos += g.size();
    if (g.size() < 2) {
      inst.partition.ungrouped.insert(inst.partition.ungrouped.end(), g.begin(), g.end());
      continue;
    }
    std::sort(g.begin(), g.end());
    if (g.size() >= 2 && uni(0, 1)) inst.partition.fine_groups.push_back({g[0], g[1]});
    inst.partition.coarse_groups.push_back(std::move(g));
  }

  TokenComposition comp{0, 0, 0, 0};
  const int m = uni(1, 6);
  for (int k = 0; k < m; ++k) {
    switch (uni(0, 3)) {
      case 0: ++comp.shared; break;
      case 1: ++comp.ps1; break;
      case 2: ++comp.ps2; break;
      default: ++comp.specific; break;
    }
  }

  std::vector<std::string> corpus_texts(words.begin(), words.end());
  for (const auto& nm : inst.cats.names()) corpus_texts.push_back("a photo of a " + nm);
  inst.vocab = Vocabulary::build(corpus_texts);

  EncoderConfig ecfg;
  ecfg.d = uni(4, 16);
  ecfg.seed = rng();
  inst.encoder = std::make_unique<TextEncoder>(ecfg, inst.vocab.size());
  inst.model = make_prompt_model(inst.partition, comp, static_cast<std::size_t>(n), ecfg.d, rng(), 0.5);

  const int batch = uni(1, 4);
  for (int b = 0; b < batch; ++b) {
    std::string text;
    const int len = uni(2, 7);
    for (int k = 0; k < len; ++k) text += (k ? " " : "") + words[static_cast<std::size_t>(uni(0, 11))];
    std::set<CategoryId> positives;
    const int n_pos = uni(1, n - 1);
    while (static_cast<int>(positives.size()) < n_pos) positives.insert(uni(0, n - 1));
    inst.texts.push_back(prepare_text(inst.encoder->encode(tokenize(text, inst.vocab)), positives,
                                      static_cast<std::size_t>(n)));
  }
  inst.loss.tau_order = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  return inst;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
  if (opt.trials <= 0) throw Error(ErrorCode::config_error, "trials must be positive");
  GradcheckReport report;
  report.trials = opt.trials;
  for (int trial = 0; trial < opt.trials; ++trial) {
    std::mt19937_64 rng(opt.seed * 1000003ULL + static_cast<std::uint64_t>(trial));
    auto inst = random_instance(rng);
    Objective obj(*inst.encoder, inst.cats, inst.vocab,
                  handcraft_embeddings(*inst.encoder, inst.cats, inst.vocab, HandcraftPromptMap{}), inst.loss);
    std::vector<const PreparedText*> batch;
    for (const auto& t : inst.texts) batch.push_back(&t);

    const std::array<std::pair<GradientWeights, double*>, 3> checks = {{
        {{1.0, 0.0}, &report.max_rel_rank},
        {{0.0, 1.0}, &report.max_rel_order},
        {{1.0, 1.0}, &report.max_rel_total},
    }};
    for (const auto& [w, worst] : checks) {
      auto value = [&](const PromptModel& model) {
        auto l = obj.evaluate(model, batch);
        return w.rank * l.rank() + w.order * inst.loss.lambda1 * l.order();
      };
      Mat analytic;
      obj.evaluate(inst.model, batch, &analytic, w);
      if (opt.inject_bug) analytic(0, 0) += 1e-2 * (analytic.cwiseAbs().maxCoeff() + 1e-8);

      Mat numeric(analytic.rows(), analytic.cols());
      PromptModel probe = inst.model;
      for (Eigen::Index r = 0; r < numeric.rows(); ++r) {
        for (Eigen::Index c = 0; c < numeric.cols(); ++c) {
          const double x0 = probe.store.table()(r, c);
          probe.store.table()(r, c) = x0 + opt.step;
          const double up = value(probe);
          probe.store.table()(r, c) = x0 - opt.step;
          const double down = value(probe);
          probe.store.table()(r, c) = x0;
          numeric(r, c) = (up - down) / (2 * opt.step);
        }
      }
      *worst = std::max(*worst, max_relative_error(analytic, numeric));
    }
  }
  report.passed = report.max_rel_rank < opt.tolerance && report.max_rel_order < opt.tolerance &&
                  report.max_rel_total < opt.tolerance;
  return report;
}

}  // namespace hiprompt
