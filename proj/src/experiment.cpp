#include "hiprompt/experiment.hpp"

#include <algorithm>
#include <unordered_set>

#include "hiprompt/error.hpp"
#include "hiprompt/llm_client.hpp"

namespace hiprompt {

std::vector<std::string> synthetic_category_names() {
  return {"knife", "fork", "oven", "microwave", "toaster", "sofa", "chair", "book", "clock", "vase"};
}

namespace {

Corpus mock_corpus(const CategorySet& cats, const SubgroupPartition& partition, std::uint64_t seed,
                   const SyntheticConfig& cfg) {
  MockLlmClient client(seed);
  auto attrs = acquire_attributes(client, cats, 90, 30);
  Corpus out;
  for (CategoryId i = 0; i < static_cast<CategoryId>(cats.size()); ++i) {
    auto fine = filter_attributes(client, cats, i, attrs, 70);
    const auto& own = attrs.specific.at(i);
    std::stable_partition(fine.begin(), fine.end(), [&](const std::string& a) {
      return std::find(own.begin(), own.end(), a) != own.end();
    });
    if (fine.size() > cfg.max_attributes) fine.resize(cfg.max_attributes);
    auto recs = acquire_descriptions(client, cats, i, fine, cfg.per_attribute, DescriptionKind::fine);
    out.insert(out.end(), recs.begin(), recs.end());
  }
  auto rel = acquire_relationship_descriptions(client, cats, partition, cfg.per_pair);
  out.insert(out.end(), rel.begin(), rel.end());
  return out;
}

}  // namespace

SyntheticTask make_synthetic_task(const SyntheticConfig& cfg) {
  SyntheticTask t;
  t.cats = CategorySet(synthetic_category_names());
  {
    MockLlmClient client(cfg.seed);
    t.partition = partition_subgroups(client, t.cats);
  }
  t.train = mock_corpus(t.cats, t.partition, cfg.seed, cfg);
  std::unordered_set<std::string> seen;
  for (const auto& r : t.train) seen.insert(r.text);
  for (auto& r : mock_corpus(t.cats, t.partition, cfg.seed + 0x5bd1e995ULL, cfg))
    if (!seen.count(r.text)) t.heldout.push_back(std::move(r));
  t.vocab = build_vocabulary({&t.train}, t.cats);
  return t;
}

Vocabulary build_vocabulary(const std::vector<const Corpus*>& corpora, const CategorySet& cats,
                            const HandcraftPromptMap& map) {
  std::vector<std::string> texts;
  for (const auto* c : corpora)
    for (const auto& r : *c) texts.push_back(r.text);
  for (std::size_t i = 0; i < cats.size(); ++i) {
    texts.push_back(cats.name(static_cast<CategoryId>(i)));
    texts.push_back(map.render(cats, static_cast<CategoryId>(i)));
  }
  return Vocabulary::build(texts);
}

const char* to_string(PromptVariant v) {
  switch (v) {
    case PromptVariant::handcraft: return "handcraft";
    case PromptVariant::shared: return "shared";
    case PromptVariant::specific: return "specific";
    case PromptVariant::hierarchical: return "hierarchical";
  }
  return "?";
}

PromptVariant prompt_variant_from_string(std::string_view s) {
  for (auto v : {PromptVariant::handcraft, PromptVariant::shared, PromptVariant::specific, PromptVariant::hierarchical})
    if (s == to_string(v)) return v;
  throw Error(ErrorCode::config_error, "unknown prompt variant: " + std::string(s));
}

TokenComposition composition_for(PromptVariant v, const TokenComposition& base) {
  switch (v) {
    case PromptVariant::shared: return {base.total(), 0, 0, 0};
    case PromptVariant::specific: return {0, 0, 0, base.total()};
    default: return base;
  }
}

ExperimentResult run_experiment(const SyntheticTask& task, PromptVariant variant, const ExperimentSettings& s) {
  TextEncoder encoder(s.encoder, task.vocab.size());
  const auto n = task.cats.size();
  auto eval_items = items_from_corpus(encoder, task.vocab, task.heldout);
  Mat handcraft = handcraft_embeddings(encoder, task.cats, task.vocab, HandcraftPromptMap{});

  ExperimentResult r;
  if (variant == PromptVariant::handcraft) {
    auto rep = evaluate(eval_items, handcraft_bank(encoder, task.cats, task.vocab), s.inference);
    r.map_init = r.map_trained = rep.map;
    r.f1_trained = rep.f1_top3;
    return r;
  }

  Objective objective(encoder, task.cats, task.vocab, handcraft, s.loss);
  auto model = make_prompt_model(task.partition, composition_for(variant, s.composition), n, s.encoder.d,
                                 s.prompt_seed, s.sigma);
  auto order_kl = [&] {
    auto bank = objective.class_embeddings(model);
    const Mat& anchor = objective.handcraft_similarity();
    return order_loss(similarity_matrix(bank.global), anchor, s.loss.tau_order) +
           order_loss(similarity_matrix(bank.local), anchor, s.loss.tau_order);
  };

  r.map_init = evaluate(eval_items, export_bank(model, encoder, task.cats, task.vocab), s.inference).map;
  r.order_kl_init = order_kl();

  auto data = prepare_corpus(encoder, task.vocab, task.train, n);
  r.log = fit(objective, model, data, s.train);

  auto rep = evaluate(eval_items, export_bank(model, encoder, task.cats, task.vocab), s.inference);
  r.map_trained = rep.map;
  r.f1_trained = rep.f1_top3;
  r.order_kl_trained = order_kl();
  return r;
}

}  // namespace hiprompt
