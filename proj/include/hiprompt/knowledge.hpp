#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace hiprompt {

class LlmClient;

using CategoryId = int;

// Lowercases ASCII, trims, and collapses internal whitespace runs to one space.
std::string normalize_name(std::string_view name);

// Ordered, de-duplicated category labels. Index = category id everywhere.
class CategorySet {
 public:
  CategorySet() = default;
  explicit CategorySet(std::vector<std::string> names);

  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(CategoryId id) const;
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::optional<CategoryId> find(std::string_view name) const;

  // One name per line; blank lines and lines starting with '#' are skipped.
  static CategorySet load(const std::filesystem::path& path);

 private:
  std::vector<std::string> names_;
  std::map<std::string, CategoryId> index_;
};

struct AttributeSet {
  std::vector<std::string> common;
  std::map<CategoryId, std::vector<std::string>> specific;
  std::map<CategoryId, std::vector<std::string>> fine;

  // common ∪ specific[id], common first, de-duplicated case-insensitively.
  std::vector<std::string> candidates(CategoryId id) const;

  bool operator==(const AttributeSet&) const = default;
};

using Group = std::vector<CategoryId>;

struct SubgroupPartition {
  std::vector<Group> coarse_groups;
  std::vector<Group> fine_groups;
  std::vector<CategoryId> ungrouped;

  // Throws Error(precondition) naming the first violated law: disjointness
  // within a level, fine groups refining coarse groups, and coverage.
  void validate(std::size_t n_categories) const;

  // Index of the group containing `id` at each level, or -1.
  int coarse_group_of(CategoryId id) const;
  int fine_group_of(CategoryId id) const;

  // FNV-1a over the canonical JSON form; stored in checkpoints.
  std::string hash() const;

  bool operator==(const SubgroupPartition&) const = default;
};

enum class DescriptionKind { coarse, fine, relationship, caption };

const char* to_string(DescriptionKind kind);
DescriptionKind description_kind_from_string(std::string_view s);

struct DescriptionRecord {
  std::string text;
  std::set<CategoryId> positives;
  DescriptionKind kind = DescriptionKind::fine;
  std::string provenance;

  bool operator==(const DescriptionRecord&) const = default;
};

using Corpus = std::vector<DescriptionRecord>;

// Checks record-level invariants against a category count.
void validate_record(const DescriptionRecord& r, std::size_t n_categories);

// ---------------------------------------------------------------------------
// Question templates

enum class QuestionId { common_attributes, specific_attributes, describe, filter, partition, scene };

struct QuestionTemplate {
  QuestionId id;
  std::string pattern;  // slots written as [name]

  std::vector<std::string> slots() const;
};

const char* to_string(QuestionId id);
const QuestionTemplate& default_template(QuestionId id);

using SlotMap = std::map<std::string, std::string>;

// Throws Error(missing_slot) naming the first absent slot.
std::string render_question(const QuestionTemplate& tmpl, const SlotMap& slots);

// Inverse of render_question: recovers slot values when `question` was
// rendered from `tmpl`.
std::optional<SlotMap> match_question(const QuestionTemplate& tmpl, std::string_view question);

// Splits an LLM answer into items: one per line, enumeration markers
// ("1.", "2)", "-", "*", "•"), surrounding whitespace and quotes removed.
// Throws Error(empty_answer) if nothing remains.
std::vector<std::string> parse_list_answer(std::string_view answer);

// parse_list_answer, but a single comma-separated line is split into items.
std::vector<std::string> parse_word_list_answer(std::string_view answer);

// ---------------------------------------------------------------------------
// Acquisition

AttributeSet acquire_attributes(LlmClient& client, const CategorySet& cats, std::size_t n_common,
                                std::size_t n_specific);

std::vector<std::string> filter_attributes(LlmClient& client, const CategorySet& cats, CategoryId id,
                                           AttributeSet& attrs, std::size_t keep);

std::vector<DescriptionRecord> acquire_descriptions(LlmClient& client, const CategorySet& cats,
                                                    CategoryId id,
                                                    const std::vector<std::string>& attributes,
                                                    std::size_t per_attribute, DescriptionKind kind);

SubgroupPartition partition_subgroups(LlmClient& client, const CategorySet& cats);

std::vector<DescriptionRecord> acquire_relationship_descriptions(LlmClient& client,
                                                                 const CategorySet& cats,
                                                                 const SubgroupPartition& partition,
                                                                 std::size_t per_pair);

struct AcquireOptions {
  std::size_t n_common = 90;
  std::size_t n_specific = 30;
  std::size_t keep = 70;
  std::size_t per_attribute = 100;
  std::size_t per_pair = 100;
  // Caps the number of attributes described per category (0 = all).
  std::size_t max_attributes = 0;
  std::set<DescriptionKind> kinds = {DescriptionKind::fine, DescriptionKind::relationship};
  bool augment_name_match = false;
};

struct KnowledgeBundle {
  AttributeSet attributes;
  SubgroupPartition partition;
  std::map<DescriptionKind, Corpus> corpora;
};

// attributes -> filtering -> partition -> descriptions, for the requested kinds.
KnowledgeBundle acquire_knowledge(LlmClient& client, const CategorySet& cats,
                                  const AcquireOptions& options);

// ---------------------------------------------------------------------------
// Captions and name matching

struct NameMatcher {
  explicit NameMatcher(const CategorySet& cats,
                       std::map<std::string, std::vector<std::string>> synonyms = {});

  // Categories whose name or synonym occurs as a whole-word sequence in
  // `text`; caption words are also tried with plural suffixes stripped.
  std::set<CategoryId> match(std::string_view text) const;

 private:
  std::vector<std::pair<CategoryId, std::vector<std::string>>> phrases_;
};

// Plain text (one caption per line) or corpus JSONL (lines starting with '{').
std::vector<DescriptionRecord> ingest_captions(
    const std::filesystem::path& path, const CategorySet& cats,
    const std::map<std::string, std::vector<std::string>>& synonyms = {});

// Adds categories named in each record's text to its positives.
void augment_positives_by_name(Corpus& corpus, const CategorySet& cats);

// ---------------------------------------------------------------------------
// Persistence

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

void save_attributes(const AttributeSet& attrs, const std::filesystem::path& path);
AttributeSet load_attributes(const std::filesystem::path& path);

void save_partition(const SubgroupPartition& partition, const std::filesystem::path& path);
SubgroupPartition load_partition(const std::filesystem::path& path);

}  // namespace hiprompt
