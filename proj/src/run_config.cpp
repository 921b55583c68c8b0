#include "hiprompt/run_config.hpp"

#include <fstream>
#include <sstream>

#include "hiprompt/error.hpp"

namespace hiprompt {

namespace {

// Reads known keys from one JSON object and rejects the rest.
class Section {
 public:
  Section(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(ErrorCode::config_error, where_ + " must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw Error(ErrorCode::config_error, "unknown config key: " + where_ + it.key());
  }

  template <class T>
  void get(const std::string& key, T& target) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      target = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::config_error, "config key " + where_ + key + " has the wrong type");
    }
  }

  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return where_ + key + "."; }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string optimizer_name(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "sgd_momentum"; }

Optimizer optimizer_from(const std::string& s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "sgd_momentum") return Optimizer::sgd_momentum;
  throw Error(ErrorCode::config_error, "unknown optimizer: " + s);
}

}  // namespace

std::set<DescriptionKind> parse_kinds(const std::string& csv) {
  std::set<DescriptionKind> kinds;
  std::stringstream ss(csv);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    try {
      kinds.insert(description_kind_from_string(part));
    } catch (const Error&) {
      throw Error(ErrorCode::config_error, "unknown description kind: " + part);
    }
  }
  if (kinds.empty()) throw Error(ErrorCode::config_error, "no description kinds given");
  return kinds;
}

std::filesystem::path RunConfig::out_path(const std::string& name) const { return std::filesystem::path(out) / name; }

std::filesystem::path RunConfig::partition_path() const {
  return partition.empty() ? out_path("partition.json") : std::filesystem::path(partition);
}

std::vector<std::filesystem::path> RunConfig::train_corpus_paths() const {
  std::vector<std::filesystem::path> paths;
  if (!train_corpus.empty()) {
    for (const auto& p : train_corpus) paths.emplace_back(p);
    return paths;
  }
  for (auto kind : acquire.kinds) paths.push_back(out_path(std::string("corpus_") + to_string(kind) + ".jsonl"));
  return paths;
}

void RunConfig::validate() const {
  if (out.empty()) throw Error(ErrorCode::config_error, "out must not be empty");
  if (encoder.d <= 0) throw Error(ErrorCode::config_error, "encoder.d must be positive");
  if (!(sigma >= 0)) throw Error(ErrorCode::config_error, "sigma must be non-negative");
  if (threads == 0) throw Error(ErrorCode::config_error, "threads must be positive");
  if (acquire.kinds.empty()) throw Error(ErrorCode::config_error, "acquire.kinds must not be empty");
  try {
    composition.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::config_error, e.what());
  }
  loss.validate();
  train.validate();
  inference.validate();
}

RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("categories", c.categories);
  root.get("seed", c.seed);
  root.get("out", c.out);
  root.get("captions", c.captions);
  root.get("partition", c.partition);
  root.get("vocab", c.vocab);
  root.get("sigma", c.sigma);
  root.get("threads", c.threads);
  std::string prompts = to_string(c.prompts);
  root.get("prompts", prompts);
  c.prompts = prompt_variant_from_string(prompts);

  if (auto* s = root.child("llm")) {
    Section l(*s, "llm.");
    std::string mode = c.llm.live ? "live" : "mock";
    l.get("mode", mode);
    if (mode != "mock" && mode != "live") throw Error(ErrorCode::config_error, "llm.mode must be mock or live");
    c.llm.live = mode == "live";
    l.get("endpoint", c.llm.endpoint);
    l.get("model", c.llm.model);
    l.get("cache_dir", c.llm.cache_dir);
    l.get("max_concurrency", c.llm.max_concurrency);
  }
  if (auto* s = root.child("acquire")) {
    Section a(*s, "acquire.");
    a.get("n_common", c.acquire.n_common);
    a.get("n_specific", c.acquire.n_specific);
    a.get("keep", c.acquire.keep);
    a.get("per_attribute", c.acquire.per_attribute);
    a.get("per_pair", c.acquire.per_pair);
    a.get("max_attributes", c.acquire.max_attributes);
    a.get("augment_name_match", c.acquire.augment_name_match);
    std::vector<std::string> kinds;
    a.get("kinds", kinds);
    if (!kinds.empty()) {
      std::string csv;
      for (const auto& k : kinds) csv += k + ",";
      c.acquire.kinds = parse_kinds(csv);
    }
  }
  if (auto* s = root.child("corpus")) {
    Section k(*s, "corpus.");
    k.get("train", c.train_corpus);
    k.get("eval", c.eval_corpus);
  }
  if (auto* s = root.child("encoder")) {
    Section e(*s, "encoder.");
    e.get("d", c.encoder.d);
    e.get("hidden_dim", c.encoder.hidden_dim);
    e.get("seed", c.encoder.seed);
    e.get("context_limit", c.encoder.context_limit);
    e.get("positional_scale", c.encoder.positional_scale);
    e.get("bias_scale", c.encoder.bias_scale);
    e.get("residual_scale", c.encoder.residual_scale);
  }
  if (auto* s = root.child("composition")) {
    Section m(*s, "composition.");
    m.get("shared", c.composition.shared);
    m.get("ps1", c.composition.ps1);
    m.get("ps2", c.composition.ps2);
    m.get("specific", c.composition.specific);
  }
  if (auto* s = root.child("loss")) {
    Section l(*s, "loss.");
    l.get("margin", c.loss.margin);
    l.get("lambda1", c.loss.lambda1);
    l.get("tau_order", c.loss.tau_order);
  }
  if (auto* s = root.child("train")) {
    Section t(*s, "train.");
    t.get("lr", c.train.lr);
    t.get("milestones", c.train.milestones);
    t.get("gamma", c.train.gamma);
    t.get("epochs", c.train.epochs);
    t.get("batch_size", c.train.batch_size);
    t.get("momentum", c.train.momentum);
    std::string opt = optimizer_name(c.train.optimizer);
    t.get("optimizer", opt);
    c.train.optimizer = optimizer_from(opt);
  }
  if (auto* s = root.child("inference")) {
    Section i(*s, "inference.");
    i.get("lambda2", c.inference.lambda2);
    i.get("tau", c.inference.tau);
    i.get("top_k", c.inference.top_k);
  }
  if (auto* s = root.child("handcraft")) {
    Section h(*s, "handcraft.");
    h.get("template", c.handcraft.default_template);
    h.get("overrides", c.handcraft.overrides);
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config_error, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::config_error, "config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["categories"] = c.categories;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["llm"] = {{"mode", c.llm.live ? "live" : "mock"},
              {"endpoint", c.llm.endpoint},
              {"model", c.llm.model},
              {"cache_dir", c.llm.cache_dir},
              {"max_concurrency", c.llm.max_concurrency}};
  std::vector<std::string> kinds;
  for (auto k : c.acquire.kinds) kinds.emplace_back(to_string(k));
  j["acquire"] = {{"n_common", c.acquire.n_common},
                  {"n_specific", c.acquire.n_specific},
                  {"keep", c.acquire.keep},
                  {"per_attribute", c.acquire.per_attribute},
                  {"per_pair", c.acquire.per_pair},
                  {"max_attributes", c.acquire.max_attributes},
                  {"kinds", kinds},
                  {"augment_name_match", c.acquire.augment_name_match}};
  j["captions"] = c.captions;
  j["corpus"] = {{"train", c.train_corpus}, {"eval", c.eval_corpus}};
  j["partition"] = c.partition;
  j["vocab"] = c.vocab;
  j["encoder"] = {{"d", c.encoder.d},
                  {"hidden_dim", c.encoder.hidden_dim},
                  {"seed", c.encoder.seed},
                  {"context_limit", c.encoder.context_limit},
                  {"positional_scale", c.encoder.positional_scale},
                  {"bias_scale", c.encoder.bias_scale},
                  {"residual_scale", c.encoder.residual_scale}};
  j["composition"] = {{"shared", c.composition.shared},
                      {"ps1", c.composition.ps1},
                      {"ps2", c.composition.ps2},
                      {"specific", c.composition.specific}};
  j["prompts"] = to_string(c.prompts);
  j["sigma"] = c.sigma;
  j["loss"] = {{"margin", c.loss.margin}, {"lambda1", c.loss.lambda1}, {"tau_order", c.loss.tau_order}};
  j["train"] = {{"lr", c.train.lr},
                {"milestones", c.train.milestones},
                {"gamma", c.train.gamma},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"optimizer", optimizer_name(c.train.optimizer)},
                {"momentum", c.train.momentum}};
  j["threads"] = c.threads;
  j["inference"] = {{"lambda2", c.inference.lambda2}, {"tau", c.inference.tau}, {"top_k", c.inference.top_k}};
  j["handcraft"] = {{"template", c.handcraft.default_template}, {"overrides", c.handcraft.overrides}};
  return j;
}

}  // namespace hiprompt
