#include "hiprompt/promptgraph.hpp"

#include <cstring>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "hiprompt/error.hpp"

namespace hiprompt {

void TokenComposition::validate() const {
  if (shared < 0 || ps1 < 0 || ps2 < 0 || specific < 0)
    throw Error(ErrorCode::composition_mismatch, "token counts must be non-negative");
  if (total() <= 0) throw Error(ErrorCode::composition_mismatch, "composition has no learnable tokens");
}

const char* to_string(Branch b) { return b == Branch::global ? "global" : "local"; }

PromptLayout::Band PromptLayout::band(int col) const {
  if (col < composition.shared) return Band::shared;
  if (col < composition.shared + composition.ps1) return Band::ps1;
  if (col < composition.shared + composition.ps1 + composition.ps2) return Band::ps2;
  return Band::specific;
}

namespace {

PromptLayout layout_from(const SubgroupPartition& partition, const TokenComposition& comp, std::size_t n,
                         Branch branch, int first_id) {
  comp.validate();
  partition.validate(n);
  PromptLayout L;
  L.n_categories = static_cast<int>(n);
  L.composition = comp;
  L.branch = branch;
  L.first_id = first_id;
  const int m = comp.total();
  L.slots.assign(n * static_cast<std::size_t>(m), -1);
  int next = first_id;
  auto set = [&](CategoryId row, int col, int id) { L.slots[static_cast<std::size_t>(row * m + col)] = id; };

  for (int col = 0; col < m; ++col) {
    switch (L.band(col)) {
      case PromptLayout::Band::shared: {
        int id = next++;
        for (std::size_t r = 0; r < n; ++r) set(static_cast<CategoryId>(r), col, id);
        break;
      }
      case PromptLayout::Band::ps1:
      case PromptLayout::Band::ps2: {
        const auto& groups = L.band(col) == PromptLayout::Band::ps1 ? partition.coarse_groups : partition.fine_groups;
        std::vector<bool> done(n, false);
        for (const auto& g : groups) {
          int id = next++;
          for (auto r : g) {
            set(r, col, id);
            done[static_cast<std::size_t>(r)] = true;
          }
        }
        for (std::size_t r = 0; r < n; ++r)
          if (!done[r]) set(static_cast<CategoryId>(r), col, next++);
        break;
      }
      case PromptLayout::Band::specific:
        for (std::size_t r = 0; r < n; ++r) set(static_cast<CategoryId>(r), col, next++);
        break;
    }
  }
  L.n_ids = next - first_id;
  return L;
}

}  // namespace

PromptLayout build_layout(const SubgroupPartition& partition, const TokenComposition& comp, std::size_t n,
                          Branch branch) {
  int base = 0;
  if (branch == Branch::local) base = layout_from(partition, comp, n, Branch::global, 0).n_ids;
  return layout_from(partition, comp, n, branch, base);
}

void init_parameters(ParameterStore& store, std::uint64_t seed, double sigma, int first, int count) {
  if (count < 0) count = store.size() - first;
  if (first < 0 || first + count > store.size()) throw Error(ErrorCode::precondition, "parameter range out of bounds");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  auto& t = store.table();
  for (int r = first; r < first + count; ++r)
    for (int k = 0; k < store.dim(); ++k) t(r, k) = sigma * dist(rng);
}

PromptSequence materialize_prompt(const PromptLayout& layout, const ParameterStore& store, CategoryId id,
                                  const CategorySet& cats, const Vocabulary& vocab) {
  if (id < 0 || id >= layout.n_categories || static_cast<std::size_t>(id) >= cats.size())
    throw Error(ErrorCode::unknown_category, "category id out of range: " + std::to_string(id));
  PromptSequence seq;
  const int m = layout.m();
  seq.elements.reserve(static_cast<std::size_t>(m) + 4);
  for (int col = 0; col < m; ++col) {
    int pid = layout.id(id, col);
    seq.elements.emplace_back(ContinuousToken{store.row(pid).transpose(), pid});
  }
  for (auto t : tokenize_words(cats.name(id), vocab)) seq.elements.emplace_back(t);
  seq.elements.emplace_back(eos_token);
  return seq;
}

std::string HandcraftPromptMap::render(const CategorySet& cats, CategoryId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= cats.size())
    throw Error(ErrorCode::unknown_category, "category id out of range: " + std::to_string(id));
  const auto& name = cats.name(id);
  auto it = overrides.find(normalize_name(name));
  std::string tmpl = it == overrides.end() ? default_template : it->second;
  auto pos = tmpl.find("[category]");
  if (pos == std::string::npos) return tmpl;
  return tmpl.replace(pos, std::strlen("[category]"), name);
}

PromptModel make_prompt_model(const SubgroupPartition& partition, const TokenComposition& comp, std::size_t n,
                              int d, std::uint64_t seed, double sigma) {
  PromptModel model;
  model.global = build_layout(partition, comp, n, Branch::global);
  model.local = build_layout(partition, comp, n, Branch::local);
  model.seed = seed;
  model.sigma = sigma;
  model.store = ParameterStore(model.global.n_ids + model.local.n_ids, d);
  init_parameters(model.store, seed, sigma, 0, model.global.n_ids);
  init_parameters(model.store, seed + 1, sigma, model.global.n_ids, model.local.n_ids);
  return model;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const PromptModel& model,
                     const SubgroupPartition& partition) {
  const auto& comp = model.global.composition;
  nlohmann::ordered_json header;
  header["format"] = "hiprompt-checkpoint";
  header["version"] = 1;
  header["N"] = model.global.n_categories;
  header["M"] = comp.total();
  header["d"] = model.store.dim();
  header["composition"] = {{"shared", comp.shared}, {"ps1", comp.ps1}, {"ps2", comp.ps2}, {"specific", comp.specific}};
  header["branch_seeds"] = {{"global", model.seed}, {"local", model.seed + 1}};
  header["sigma"] = model.sigma;
  header["partition_hash"] = partition.hash();
  header["n_params"] = model.store.size();

  std::vector<float> payload(static_cast<std::size_t>(model.store.table().size()));
  std::size_t k = 0;
  for (int r = 0; r < model.store.size(); ++r)
    for (int c = 0; c < model.store.dim(); ++c) payload[k++] = static_cast<float>(model.store.table()(r, c));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw Error(ErrorCode::io_error, "write failed: " + path.string());
}

PromptModel load_checkpoint(const std::filesystem::path& path, const SubgroupPartition& partition) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  TokenComposition comp;
  int n = 0, d = 0, n_params = 0;
  std::uint64_t seed = 0;
  double sigma = 0;
  try {
    header = nlohmann::json::parse(line);
    if (header.at("format") != "hiprompt-checkpoint") throw Error(ErrorCode::format_error, "not a checkpoint");
    n = header.at("N");
    d = header.at("d");
    n_params = header.at("n_params");
    const auto& c = header.at("composition");
    comp = {c.at("shared"), c.at("ps1"), c.at("ps2"), c.at("specific")};
    seed = header.at("branch_seeds").at("global");
    sigma = header.at("sigma");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::format_error, "checkpoint header: " + std::string(e.what()));
  }
  if (header.at("partition_hash") != partition.hash())
    throw Error(ErrorCode::format_error, "checkpoint was trained with a different partition");

  PromptModel model = make_prompt_model(partition, comp, static_cast<std::size_t>(n), d, seed, sigma);
  if (model.store.size() != n_params)
    throw Error(ErrorCode::format_error, "checkpoint parameter count does not match its layout");
  std::vector<float> payload(static_cast<std::size_t>(n_params) * static_cast<std::size_t>(d));
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != payload.size() * sizeof(float) || in.peek() != EOF)
    throw Error(ErrorCode::format_error, "checkpoint payload size mismatch");
  std::size_t k = 0;
  for (int r = 0; r < n_params; ++r)
    for (int c = 0; c < d; ++c) {
      if (!std::isfinite(payload[k])) throw Error(ErrorCode::non_finite_value, "non-finite checkpoint value");
      model.store.table()(r, c) = payload[k++];
    }
  return model;
}

}  // namespace hiprompt
