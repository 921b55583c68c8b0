#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hiprompt/encoder.hpp"
#include "hiprompt/knowledge.hpp"

namespace hiprompt {

// Learnable-token counts per band: [shared | P-S #1 | P-S #2 | specific].
struct TokenComposition {
  int shared = 16;
  int ps1 = 8;
  int ps2 = 4;
  int specific = 4;

  int total() const noexcept { return shared + ps1 + ps2 + specific; }
  void validate() const;  // Error(composition_mismatch) on negative counts or M == 0

  bool operator==(const TokenComposition&) const = default;
};

enum class Branch { global, local };

const char* to_string(Branch b);

// N×M grid of parameter ids. Rows are categories, columns token slots.
struct PromptLayout {
  int n_categories = 0;
  TokenComposition composition;
  Branch branch = Branch::global;
  std::vector<int> slots;  // row-major
  int first_id = 0;
  int n_ids = 0;

  int m() const noexcept { return composition.total(); }
  int id(CategoryId row, int col) const { return slots[static_cast<std::size_t>(row * m() + col)]; }

  enum class Band { shared, ps1, ps2, specific };
  Band band(int col) const;
};

// Ids are assigned column by column; within a partial-shared column the
// groups of that level come first (in group order), then every row outside
// those groups gets its own id. The local branch is laid out after the
// global one so the two id ranges never overlap.
PromptLayout build_layout(const SubgroupPartition& partition, const TokenComposition& comp,
                          std::size_t n_categories, Branch branch);

class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(int n_params, int d) : table_(Mat::Zero(n_params, d)) {}

  int size() const noexcept { return static_cast<int>(table_.rows()); }
  int dim() const noexcept { return static_cast<int>(table_.cols()); }

  Mat& table() noexcept { return table_; }
  const Mat& table() const noexcept { return table_; }
  auto row(int id) { return table_.row(id); }
  auto row(int id) const { return table_.row(id); }

  bool operator==(const ParameterStore& o) const { return table_ == o.table_; }

 private:
  Mat table_;
};

// Rows [first, first + count) ~ N(0, sigma²), deterministic per seed.
// count < 0 means "to the end".
void init_parameters(ParameterStore& store, std::uint64_t seed, double sigma, int first = 0, int count = -1);

// M continuous tokens (tagged with their parameter ids), the category name's
// tokens, then EOS.
PromptSequence materialize_prompt(const PromptLayout& layout, const ParameterStore& store, CategoryId id,
                                  const CategorySet& cats, const Vocabulary& vocab);

struct HandcraftPromptMap {
  std::string default_template = "a photo of a [category]";
  std::map<std::string, std::string> overrides;  // normalized name -> template

  // Throws Error(unknown_category) when `id` is not in `cats`.
  std::string render(const CategorySet& cats, CategoryId id) const;
};

// Both branches over one store: global ids first, then local ids.
struct PromptModel {
  PromptLayout global;
  PromptLayout local;
  ParameterStore store;
  std::uint64_t seed = 0;
  double sigma = 0.02;

  const PromptLayout& layout(Branch b) const { return b == Branch::global ? global : local; }
};

PromptModel make_prompt_model(const SubgroupPartition& partition, const TokenComposition& comp,
                              std::size_t n_categories, int d, std::uint64_t seed, double sigma = 0.02);

// One JSON header line, then n_params × d little-endian float32 values.
void save_checkpoint(const std::filesystem::path& path, const PromptModel& model,
                     const SubgroupPartition& partition);

// Layouts are rebuilt from `partition` and the stored composition; a
// partition whose hash differs from the stored one is rejected.
PromptModel load_checkpoint(const std::filesystem::path& path, const SubgroupPartition& partition);

}  // namespace hiprompt
