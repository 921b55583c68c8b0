#include "hiprompt/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>

#include "hiprompt/llm_client.hpp"

namespace hiprompt {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::config_error:
    case ErrorCode::precondition:
    case ErrorCode::missing_slot:
    case ErrorCode::composition_mismatch:
    case ErrorCode::unknown_category:
    case ErrorCode::empty_corpus:
    case ErrorCode::empty_eval_set:
    case ErrorCode::empty_text:
    case ErrorCode::empty_positives:
    case ErrorCode::sequence_too_long:
      return exit_config;
    case ErrorCode::client_error:
    case ErrorCode::empty_answer:
    case ErrorCode::unparseable_answer:
      return exit_client;
    case ErrorCode::non_finite_loss:
    case ErrorCode::non_finite_value:
    case ErrorCode::degenerate_feature:
      return exit_numeric;
    case ErrorCode::io_error:
    case ErrorCode::format_error:
      return exit_io;
  }
  return exit_check_failed;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorCode::io_error, "write failed: " + path.string());
}

void echo_config(const RunConfig& cfg, const std::string& command, std::ostream& out) {
  auto text = to_json(cfg).dump(2) + "\n";
  write_text(cfg.out_path(command + ".config.json"), text);
  out << text;
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::config_error, what + " not found: " + path.string());
}

CategorySet load_categories(const RunConfig& cfg) {
  if (cfg.categories.empty()) throw Error(ErrorCode::config_error, "no categories file configured");
  require_file(cfg.categories, "categories file");
  return CategorySet::load(cfg.categories);
}

std::unique_ptr<LlmClient> make_client(const RunConfig& cfg) {
  std::unique_ptr<LlmClient> client;
  if (!cfg.llm.live) {
    client = std::make_unique<MockLlmClient>(cfg.seed);
  } else {
    auto hc = HttpClientConfig::from_env();
    if (!cfg.llm.endpoint.empty()) hc.endpoint = cfg.llm.endpoint;
    if (!cfg.llm.model.empty()) hc.model = cfg.llm.model;
    if (!cfg.llm.cache_dir.empty()) hc.cache_dir = cfg.llm.cache_dir;
    if (hc.endpoint.empty()) throw Error(ErrorCode::config_error, "live mode requires LLM_ENDPOINT");
    client = std::make_unique<HttpLlmClient>(hc);
  }
  client->set_max_concurrency(cfg.llm.max_concurrency);
  return client;
}

Vocabulary load_or_build_vocab(const RunConfig& cfg, const std::vector<const Corpus*>& corpora,
                               const CategorySet& cats) {
  if (!cfg.vocab.empty()) {
    require_file(cfg.vocab, "vocabulary");
    return Vocabulary::load(cfg.vocab);
  }
  return build_vocabulary(corpora, cats, cfg.handcraft);
}

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error [IoError]: " << e.what() << '\n';
    return exit_io;
  }
}

bool variant_matches(PromptVariant v, const TokenComposition& c) {
  switch (v) {
    case PromptVariant::shared: return c.ps1 == 0 && c.ps2 == 0 && c.specific == 0;
    case PromptVariant::specific: return c.shared == 0 && c.ps1 == 0 && c.ps2 == 0;
    default: return true;
  }
}

}  // namespace

int cmd_acquire(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    cfg.validate();
    auto cats = load_categories(cfg);
    auto client = make_client(cfg);
    echo_config(cfg, "acquire", out);

    auto opts = cfg.acquire;
    const bool captions = opts.kinds.erase(DescriptionKind::caption) > 0;
    KnowledgeBundle kb;
    if (!opts.kinds.empty()) {
      kb = acquire_knowledge(*client, cats, opts);
    } else {
      kb.partition = partition_subgroups(*client, cats);
    }
    if (captions) {
      if (cfg.captions.empty()) throw Error(ErrorCode::config_error, "kind caption requires a captions file");
      require_file(cfg.captions, "captions file");
      auto& corpus = kb.corpora[DescriptionKind::caption];
      corpus = ingest_captions(cfg.captions, cats);
      if (cfg.acquire.augment_name_match) augment_positives_by_name(corpus, cats);
    }

    if (!opts.kinds.empty()) save_attributes(kb.attributes, cfg.out_path("attributes.json"));
    save_partition(kb.partition, cfg.out_path("partition.json"));
    for (const auto& [kind, corpus] : kb.corpora) {
      auto path = cfg.out_path(std::string("corpus_") + to_string(kind) + ".jsonl");
      save_corpus(corpus, path);
      out << "wrote " << corpus.size() << " records to " << path.string() << '\n';
    }
    return int{exit_ok};
  });
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    cfg.validate();
    if (cfg.prompts == PromptVariant::handcraft)
      throw Error(ErrorCode::config_error, "hand-craft prompts have nothing to train");
    auto cats = load_categories(cfg);
    require_file(cfg.partition_path(), "partition file");
    auto partition = load_partition(cfg.partition_path());
    Corpus corpus;
    for (const auto& p : cfg.train_corpus_paths()) {
      require_file(p, "training corpus");
      auto part = load_corpus(p);
      corpus.insert(corpus.end(), part.begin(), part.end());
    }
    if (corpus.empty()) throw Error(ErrorCode::empty_corpus, "training corpus is empty");
    echo_config(cfg, "train", out);

    auto vocab = load_or_build_vocab(cfg, {&corpus}, cats);
    vocab.save(cfg.out_path("vocab.json"));
    TextEncoder encoder(cfg.encoder, vocab.size());
    Objective objective(encoder, cats, vocab, handcraft_embeddings(encoder, cats, vocab, cfg.handcraft), cfg.loss);
    auto model = make_prompt_model(partition, composition_for(cfg.prompts, cfg.composition), cats.size(),
                                   cfg.encoder.d, cfg.seed, cfg.sigma);
    auto data = prepare_corpus(encoder, vocab, corpus, cats.size(), cfg.threads);

    auto train = cfg.train;
    train.seed = cfg.seed;
    auto log = fit(objective, model, data, train, [&](const EpochLog& e) {
      out << "epoch " << e.epoch << "  lr " << e.lr << "  rank " << std::fixed << std::setprecision(5)
          << e.mean_rank_loss << "  order " << e.mean_order_loss << "  total " << e.mean_total
          << std::defaultfloat << '\n';
    });
    write_text(cfg.out_path("train_log.jsonl"), to_jsonl(log));
    save_checkpoint(cfg.out_path("checkpoint.bin"), model, partition);
    out << "wrote " << cfg.out_path("checkpoint.bin").string() << '\n';
    return int{exit_ok};
  });
}

int cmd_eval(const RunConfig& cfg, const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    cfg.validate();
    auto cats = load_categories(cfg);
    const bool learned = cfg.prompts != PromptVariant::handcraft;
    fs::path ckpt = opt.checkpoint ? fs::path(*opt.checkpoint) : cfg.out_path("checkpoint.bin");
    if (learned) require_file(ckpt, "checkpoint");

    std::vector<std::string> inputs;
    if (opt.input)
      inputs.push_back(*opt.input);
    else
      inputs = cfg.eval_corpus;
    if (inputs.empty()) throw Error(ErrorCode::config_error, "no evaluation input given");
    for (const auto& p : inputs) require_file(p, "evaluation input");
    const bool features = inputs.size() == 1 && fs::path(inputs[0]).extension() != ".jsonl";
    echo_config(cfg, "eval", out);

    Corpus corpus;
    if (!features) {
      for (const auto& p : inputs) {
        auto part = load_corpus(p);
        corpus.insert(corpus.end(), part.begin(), part.end());
      }
    }

    Vocabulary vocab;
    if (!cfg.vocab.empty()) {
      require_file(cfg.vocab, "vocabulary");
      vocab = Vocabulary::load(cfg.vocab);
    } else if (learned) {
      auto p = ckpt.parent_path() / "vocab.json";
      require_file(p, "vocabulary beside the checkpoint");
      vocab = Vocabulary::load(p);
    } else if (fs::is_regular_file(cfg.out_path("vocab.json"))) {
      vocab = Vocabulary::load(cfg.out_path("vocab.json"));
    } else {
      vocab = build_vocabulary({&corpus}, cats, cfg.handcraft);
    }
    TextEncoder encoder(cfg.encoder, vocab.size());

    ClassEmbeddingBank bank;
    if (learned) {
      require_file(cfg.partition_path(), "partition file");
      auto model = load_checkpoint(ckpt, load_partition(cfg.partition_path()));
      if (!variant_matches(cfg.prompts, model.global.composition))
        throw Error(ErrorCode::config_error,
                    std::string("checkpoint composition does not match --prompts ") + to_string(cfg.prompts));
      if (model.store.dim() != encoder.dim())
        throw Error(ErrorCode::config_error, "checkpoint dimension does not match encoder.d");
      bank = export_bank(model, encoder, cats, vocab);
    } else {
      bank = handcraft_bank(encoder, cats, vocab, cfg.handcraft);
    }

    std::vector<EvalItem> items;
    if (features) {
      auto set = read_features(inputs[0]);
      if (set.d != encoder.dim()) throw Error(ErrorCode::format_error, "feature dimension does not match encoder.d");
      fs::path labels = opt.labels ? fs::path(*opt.labels) : fs::path(inputs[0] + ".labels.jsonl");
      require_file(labels, "labels file");
      items = items_from_features(set, labels, cats.size());
    } else {
      items = items_from_corpus(encoder, vocab, corpus, cfg.threads);
      if (opt.export_features) {
        write_features(*opt.export_features, to_feature_set(items, encoder.dim()));
        write_labels(*opt.export_features + ".labels.jsonl", items);
      }
    }

    auto report = evaluate(items, bank, cfg.inference);
    write_text(cfg.out_path("metrics.json"), report.to_json() + "\n");
    write_text(cfg.out_path("metrics.txt"), report.to_table(cats));
    write_text(cfg.out_path("topk.txt"), topk_report(items, bank, cfg.inference, cats, cfg.inference.top_k));
    out << "prompts: " << to_string(cfg.prompts) << '\n' << report.to_table(cats);
    return int{exit_ok};
  });
}

int cmd_gradcheck(const RunConfig& cfg, const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opt.trials <= 0) throw Error(ErrorCode::config_error, "--trials must be positive");
    echo_config(cfg, "gradcheck", out);
    GradcheckOptions g;
    g.trials = opt.trials;
    g.seed = cfg.seed;
    g.inject_bug = opt.inject_bug;
    auto r = run_gradcheck(g);
    out << std::scientific << std::setprecision(3) << "trials " << r.trials << '\n'
        << "max relative error  rank  " << r.max_rel_rank << '\n'
        << "max relative error  order " << r.max_rel_order << '\n'
        << "max relative error  total " << r.max_rel_total << '\n'
        << (r.passed ? "PASS" : "FAIL") << " (tolerance " << g.tolerance << ")\n"
        << std::defaultfloat;
    return int{r.passed ? exit_ok : exit_check_failed};
  });
}

}  // namespace hiprompt
