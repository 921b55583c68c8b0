// hiprompt command line: acquire, train, eval, gradcheck.
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "hiprompt/commands.hpp"

using namespace hiprompt;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> categories;
  bool mock = false;
  bool live = false;
  std::optional<std::string> kinds;
  std::optional<int> epochs;
  std::optional<std::string> prompts;
  bool augment = false;
  CommandOptions cmd;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("-c,--config", f.config, "JSON run configuration");
  app->add_option("--seed", f.seed, "seed for mock LLM, prompt init and shuffling");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--categories", f.categories, "categories file, one name per line");
  app->add_option("--prompts", f.prompts, "handcraft | shared | specific | hierarchical");
}

RunConfig resolve(const Flags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.out) cfg.out = *f.out;
  if (f.categories) cfg.categories = *f.categories;
  if (f.mock) cfg.llm.live = false;
  if (f.live) cfg.llm.live = true;
  if (f.kinds) cfg.acquire.kinds = parse_kinds(*f.kinds);
  if (f.epochs) cfg.train.epochs = *f.epochs;
  if (f.prompts) cfg.prompts = prompt_variant_from_string(*f.prompts);
  if (f.augment) cfg.acquire.augment_name_match = true;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("hiprompt"));
  CLI::App app{"Hierarchical prompt learning for multi-label recognition"};
  app.require_subcommand(1);
  Flags f;

  auto* acquire = app.add_subcommand("acquire", "query the LLM and write description corpora");
  add_common(acquire, f);
  auto* mock = acquire->add_flag("--mock", f.mock, "deterministic offline client (default)");
  acquire->add_flag("--live", f.live, "HTTP chat-completion client")->excludes(mock);
  acquire->add_option("--kinds", f.kinds, "comma list of coarse,fine,relationship,caption");
  acquire->add_flag("--augment-name-match", f.augment, "add caption positives by category-name match");

  auto* train = app.add_subcommand("train", "learn hierarchical prompts from the corpus");
  add_common(train, f);
  train->add_option("--epochs", f.epochs, "number of epochs");

  auto* eval = app.add_subcommand("eval", "score a corpus or feature file and report mAP and F1");
  add_common(eval, f);
  eval->add_option("--input", f.cmd.input, "corpus .jsonl or binary feature file");
  eval->add_option("--labels", f.cmd.labels, "labels for a feature file (default <input>.labels.jsonl)");
  eval->add_option("--checkpoint", f.cmd.checkpoint, "prompt checkpoint (default <out>/checkpoint.bin)");
  eval->add_option("--export-features", f.cmd.export_features, "also write the encoded corpus as a feature file");

  auto* grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  add_common(grad, f);
  grad->add_option("--trials", f.cmd.trials, "number of random instances");
  grad->add_flag("--inject-bug", f.cmd.inject_bug)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : exit_config;
  }

  RunConfig cfg;
  try {
    cfg = resolve(f);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code_for(e.code());
  }

  if (*acquire) return cmd_acquire(cfg, std::cout, std::cerr);
  if (*train) return cmd_train(cfg, std::cout, std::cerr);
  if (*eval) return cmd_eval(cfg, f.cmd, std::cout, std::cerr);
  return cmd_gradcheck(cfg, f.cmd, std::cout, std::cerr);
}
