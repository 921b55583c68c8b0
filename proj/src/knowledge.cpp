#include "hiprompt/knowledge.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "hiprompt/error.hpp"
#include "hiprompt/llm_client.hpp"

namespace hiprompt {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

// Appends `item` unless an equal string (ignoring case) is already present.
void push_unique(std::vector<std::string>& out, std::set<std::string>& seen, const std::string& item) {
  if (item.empty()) return;
  if (seen.insert(lower(item)).second) out.push_back(item);
}

}  // namespace

std::string normalize_name(std::string_view name) {
  std::string out;
  bool pending_space = false;
  for (char ch : name) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

// ---------------------------------------------------------------------------

CategorySet::CategorySet(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) throw Error(ErrorCode::precondition, "category set is empty");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    auto key = normalize_name(names_[i]);
    if (key.empty()) throw Error(ErrorCode::precondition, "empty category name at index " + std::to_string(i));
    if (!index_.emplace(key, static_cast<CategoryId>(i)).second)
      throw Error(ErrorCode::precondition, "duplicate category name: " + names_[i]);
  }
}

const std::string& CategorySet::name(CategoryId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names_.size())
    throw Error(ErrorCode::unknown_category, "category id out of range: " + std::to_string(id));
  return names_[static_cast<std::size_t>(id)];
}

std::optional<CategoryId> CategorySet::find(std::string_view name) const {
  auto it = index_.find(normalize_name(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

CategorySet CategorySet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open categories file: " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    names.push_back(t);
  }
  return CategorySet(std::move(names));
}

std::vector<std::string> AttributeSet::candidates(CategoryId id) const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& a : common) push_unique(out, seen, a);
  if (auto it = specific.find(id); it != specific.end())
    for (const auto& a : it->second) push_unique(out, seen, a);
  return out;
}

// ---------------------------------------------------------------------------

void SubgroupPartition::validate(std::size_t n) const {
  auto check_ids = [n](const Group& g, const char* level) {
    for (auto id : g)
      if (id < 0 || static_cast<std::size_t>(id) >= n)
        throw Error(ErrorCode::precondition, std::string(level) + " group has out-of-range id " + std::to_string(id));
  };
  std::vector<int> coarse_owner(n, -1);
  for (std::size_t g = 0; g < coarse_groups.size(); ++g) {
    check_ids(coarse_groups[g], "coarse");
    for (auto id : coarse_groups[g]) {
      if (coarse_owner[id] != -1)
        throw Error(ErrorCode::precondition, "coarse groups overlap at id " + std::to_string(id));
      coarse_owner[id] = static_cast<int>(g);
    }
  }
  std::vector<bool> fine_seen(n, false);
  for (const auto& group : fine_groups) {
    check_ids(group, "fine");
    if (group.empty()) throw Error(ErrorCode::precondition, "empty fine group");
    int owner = coarse_owner[group.front()];
    for (auto id : group) {
      if (fine_seen[id]) throw Error(ErrorCode::precondition, "fine groups overlap at id " + std::to_string(id));
      fine_seen[id] = true;
      if (owner == -1 || coarse_owner[id] != owner)
        throw Error(ErrorCode::precondition, "fine group does not refine a single coarse group");
    }
  }
  std::vector<bool> covered(n, false);
  for (std::size_t id = 0; id < n; ++id) covered[id] = coarse_owner[id] != -1;
  for (auto id : ungrouped) {
    if (id < 0 || static_cast<std::size_t>(id) >= n)
      throw Error(ErrorCode::precondition, "ungrouped id out of range");
    if (covered[id]) throw Error(ErrorCode::precondition, "id both grouped and ungrouped: " + std::to_string(id));
    covered[id] = true;
  }
  for (std::size_t id = 0; id < n; ++id)
    if (!covered[id]) throw Error(ErrorCode::precondition, "partition does not cover id " + std::to_string(id));
}

int SubgroupPartition::coarse_group_of(CategoryId id) const {
  for (std::size_t g = 0; g < coarse_groups.size(); ++g)
    if (std::find(coarse_groups[g].begin(), coarse_groups[g].end(), id) != coarse_groups[g].end())
      return static_cast<int>(g);
  return -1;
}

int SubgroupPartition::fine_group_of(CategoryId id) const {
  for (std::size_t g = 0; g < fine_groups.size(); ++g)
    if (std::find(fine_groups[g].begin(), fine_groups[g].end(), id) != fine_groups[g].end())
      return static_cast<int>(g);
  return -1;
}

std::string SubgroupPartition::hash() const {
  nlohmann::ordered_json j;
  j["coarse_groups"] = coarse_groups;
  j["fine_groups"] = fine_groups;
  j["ungrouped"] = ungrouped;
  std::ostringstream os;
  os << std::hex << fnv1a64(j.dump());
  return os.str();
}

const char* to_string(DescriptionKind kind) {
  switch (kind) {
    case DescriptionKind::coarse: return "coarse";
    case DescriptionKind::fine: return "fine";
    case DescriptionKind::relationship: return "relationship";
    case DescriptionKind::caption: return "caption";
  }
  return "?";
}

DescriptionKind description_kind_from_string(std::string_view s) {
  if (s == "coarse") return DescriptionKind::coarse;
  if (s == "fine") return DescriptionKind::fine;
  if (s == "relationship") return DescriptionKind::relationship;
  if (s == "caption") return DescriptionKind::caption;
  throw Error(ErrorCode::format_error, "unknown description kind: " + std::string(s));
}

void validate_record(const DescriptionRecord& r, std::size_t n) {
  if (r.text.empty()) throw Error(ErrorCode::precondition, "record text is empty");
  if (r.positives.empty()) throw Error(ErrorCode::empty_positives, "record has no positives: " + r.text);
  for (auto id : r.positives)
    if (id < 0 || static_cast<std::size_t>(id) >= n)
      throw Error(ErrorCode::unknown_category, "record positive out of range: " + std::to_string(id));
  if (r.kind == DescriptionKind::relationship && r.positives.size() < 2)
    throw Error(ErrorCode::precondition, "relationship record needs at least two positives");
}

// ---------------------------------------------------------------------------
// Templates

std::vector<std::string> QuestionTemplate::slots() const {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = pattern.find('[', pos)) != std::string::npos) {
    auto end = pattern.find(']', pos);
    if (end == std::string::npos) break;
    auto name = pattern.substr(pos + 1, end - pos - 1);
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    pos = end + 1;
  }
  return out;
}

const char* to_string(QuestionId id) {
  switch (id) {
    case QuestionId::common_attributes: return "pi1_common";
    case QuestionId::specific_attributes: return "pi1_specific";
    case QuestionId::describe: return "pi2_describe";
    case QuestionId::filter: return "pi3_filter";
    case QuestionId::partition: return "pi4_partition";
    case QuestionId::scene: return "pi5_scene";
  }
  return "?";
}

const QuestionTemplate& default_template(QuestionId id) {
  static const std::vector<QuestionTemplate> templates = {
      {QuestionId::common_attributes,
       "[object_lists], please summarize [count] attributes that may be common to the above [n_words] words"},
      {QuestionId::specific_attributes, "please summarize [count] attributes of [category]"},
      {QuestionId::describe,
       "please help me generate [count] different sentences about [category] from the angle of the [attribute]"},
      {QuestionId::filter,
       "[attribute_list], please delete the above attribute words given that are not very relevant to "
       "[category]. Finally, [count] attribute words remain"},
      {QuestionId::partition,
       "[category_list], categorize the above words according to possible common occurrences in a scene"},
      {QuestionId::scene,
       "generate [count] different descriptive sentences for a scene containing [category1] and [category2]"},
  };
  return templates[static_cast<std::size_t>(id)];
}

std::string render_question(const QuestionTemplate& tmpl, const SlotMap& slots) {
  for (const auto& name : tmpl.slots())
    if (!slots.count(name)) throw Error(ErrorCode::missing_slot, name);
  std::string out;
  const auto& p = tmpl.pattern;
  std::size_t pos = 0;
  while (pos < p.size()) {
    auto open = p.find('[', pos);
    auto close = open == std::string::npos ? std::string::npos : p.find(']', open);
    if (close == std::string::npos) {
      out.append(p, pos, std::string::npos);
      break;
    }
    out.append(p, pos, open - pos);
    out += slots.at(p.substr(open + 1, close - open - 1));
    pos = close + 1;
  }
  return out;
}

std::optional<SlotMap> match_question(const QuestionTemplate& tmpl, std::string_view question) {
  static const std::regex special(R"([.^$|()\[\]{}*+?\\])");
  std::string re;
  std::vector<std::string> names;
  const auto& p = tmpl.pattern;
  std::size_t pos = 0;
  while (pos < p.size()) {
    auto open = p.find('[', pos);
    auto close = open == std::string::npos ? std::string::npos : p.find(']', open);
    auto literal = p.substr(pos, (close == std::string::npos ? p.size() : open) - pos);
    re += std::regex_replace(literal, special, R"(\$&)");
    if (close == std::string::npos) break;
    re += R"(([\s\S]*?))";
    names.push_back(p.substr(open + 1, close - open - 1));
    pos = close + 1;
  }
  std::smatch m;
  std::string q(question);
  if (!std::regex_match(q, m, std::regex(re))) return std::nullopt;
  SlotMap out;
  for (std::size_t i = 0; i < names.size(); ++i) out[names[i]] = m[i + 1].str();
  return out;
}

// ---------------------------------------------------------------------------
// Answer parsing

namespace {

// Strips one leading enumeration marker; returns false when none was found.
bool strip_marker(std::string& s) {
  static const std::string bullet = "\xE2\x80\xA2";
  if (s.rfind(bullet, 0) == 0) {
    s = trim(s.substr(bullet.size()));
    return true;
  }
  if (!s.empty() && (s[0] == '-' || s[0] == '*')) {
    s = trim(s.substr(1));
    return true;
  }
  std::size_t i = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) {
    // "1.5 kg" is content, not a marker.
    if (s[i] == '.' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1]))) return false;
    s = trim(s.substr(i + 1));
    return true;
  }
  return false;
}

void strip_quotes(std::string& s) {
  static const std::vector<std::pair<std::string, std::string>> pairs = {
      {"\"", "\""}, {"'", "'"}, {"\xE2\x80\x9C", "\xE2\x80\x9D"}, {"`", "`"}};
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& [open, close] : pairs) {
      if (s.size() >= open.size() + close.size() && s.rfind(open, 0) == 0 &&
          s.compare(s.size() - close.size(), close.size(), close) == 0) {
        s = trim(s.substr(open.size(), s.size() - open.size() - close.size()));
        changed = true;
      }
    }
  }
}

}  // namespace

std::vector<std::string> parse_list_answer(std::string_view answer) {
  std::vector<std::string> items;
  std::size_t start = 0;
  while (start <= answer.size()) {
    auto end = answer.find('\n', start);
    if (end == std::string_view::npos) end = answer.size();
    auto item = trim(answer.substr(start, end - start));
    while (strip_marker(item)) {
    }
    strip_quotes(item);
    if (!item.empty()) items.push_back(std::move(item));
    start = end + 1;
  }
  if (items.empty()) throw Error(ErrorCode::empty_answer, "answer contains no items");
  return items;
}

std::vector<std::string> parse_word_list_answer(std::string_view answer) {
  auto items = parse_list_answer(answer);
  if (items.size() != 1 || items.front().find(',') == std::string::npos) return items;
  std::vector<std::string> split;
  std::stringstream ss(items.front());
  std::string part;
  while (std::getline(ss, part, ',')) {
    auto t = trim(part);
    strip_quotes(t);
    if (!t.empty()) split.push_back(t);
  }
  if (split.empty()) throw Error(ErrorCode::empty_answer, "answer contains no items");
  return split;
}

// ---------------------------------------------------------------------------
// Acquisition

AttributeSet acquire_attributes(LlmClient& client, const CategorySet& cats, std::size_t n_common,
                                std::size_t n_specific) {
  if (n_common == 0 || n_specific == 0) throw Error(ErrorCode::precondition, "attribute counts must be positive");
  std::vector<std::string> questions;
  questions.push_back(render_question(default_template(QuestionId::common_attributes),
                                      {{"object_lists", join(cats.names(), ", ")},
                                       {"count", std::to_string(n_common)},
                                       {"n_words", std::to_string(cats.size())}}));
  for (const auto& name : cats.names())
    questions.push_back(render_question(default_template(QuestionId::specific_attributes),
                                        {{"count", std::to_string(n_specific)}, {"category", name}}));
  auto answers = client.ask_all(questions);

  auto collect = [](const std::string& answer, std::size_t limit, const std::string& what) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& item : parse_word_list_answer(answer)) {
      if (out.size() == limit) break;
      push_unique(out, seen, item);
    }
    if (out.size() < limit)
      spdlog::warn("{}: requested {} attributes, got {}", what, limit, out.size());
    return out;
  };

  AttributeSet attrs;
  attrs.common = collect(answers[0], n_common, "common attributes");
  for (std::size_t i = 0; i < cats.size(); ++i)
    attrs.specific[static_cast<CategoryId>(i)] = collect(answers[i + 1], n_specific, "attributes of " + cats.names()[i]);
  return attrs;
}

std::vector<std::string> filter_attributes(LlmClient& client, const CategorySet& cats, CategoryId id,
                                           AttributeSet& attrs, std::size_t keep) {
  auto candidates = attrs.candidates(id);
  if (candidates.empty()) throw Error(ErrorCode::precondition, "no candidate attributes for " + cats.name(id));
  auto question = render_question(default_template(QuestionId::filter),
                                  {{"attribute_list", join(candidates, ", ")},
                                   {"category", cats.name(id)},
                                   {"count", std::to_string(keep)}});
  auto items = parse_word_list_answer(client.ask(question));

  std::map<std::string, std::string> by_key;
  for (const auto& c : candidates) by_key.emplace(lower(c), c);
  std::vector<std::string> kept;
  std::set<std::string> seen;
  std::size_t hits = 0;
  for (const auto& item : items) {
    auto it = by_key.find(lower(item));
    if (it == by_key.end()) continue;
    ++hits;
    if (kept.size() < keep) push_unique(kept, seen, it->second);
  }
  if (2 * hits < items.size())
    throw Error(ErrorCode::unparseable_answer,
                "filter answer for " + cats.name(id) + " mostly outside the candidate attributes");
  attrs.fine[id] = kept;
  return kept;
}

std::vector<DescriptionRecord> acquire_descriptions(LlmClient& client, const CategorySet& cats,
                                                    CategoryId id,
                                                    const std::vector<std::string>& attributes,
                                                    std::size_t per_attribute, DescriptionKind kind) {
  if (attributes.empty()) throw Error(ErrorCode::precondition, "no attributes to describe for " + cats.name(id));
  const auto& name = cats.name(id);
  std::vector<std::string> questions;
  for (const auto& a : attributes)
    questions.push_back(render_question(default_template(QuestionId::describe),
                                        {{"count", std::to_string(per_attribute)}, {"category", name}, {"attribute", a}}));
  auto answers = client.ask_all(questions);
  std::vector<DescriptionRecord> out;
  for (std::size_t k = 0; k < attributes.size(); ++k) {
    std::vector<std::string> sentences;
    try {
      sentences = parse_list_answer(answers[k]);
    } catch (const Error& e) {
      spdlog::warn("no sentences about {} / {}: {}", name, attributes[k], e.what());
      continue;
    }
    if (sentences.size() > per_attribute) sentences.resize(per_attribute);
    if (sentences.size() < per_attribute)
      spdlog::warn("{} / {}: requested {} sentences, got {}", name, attributes[k], per_attribute, sentences.size());
    for (auto& s : sentences)
      out.push_back({std::move(s), {id}, kind, std::string(to_string(QuestionId::describe)) + "|" + name + "|" + attributes[k]});
  }
  return out;
}

namespace {

// Parses "label: a, b, c" lines into groups of known ids. Names outside
// `allowed` or already assigned are dropped; groups smaller than two are
// discarded.
std::vector<Group> parse_groups(const std::string& answer, const CategorySet& cats,
                                const std::set<CategoryId>& allowed, std::set<CategoryId>& assigned) {
  std::vector<Group> groups;
  std::vector<std::string> lines;
  try {
    lines = parse_list_answer(answer);
  } catch (const Error&) {
    spdlog::warn("partition answer is empty");
    return groups;
  }
  for (const auto& line : lines) {
    auto colon = line.find(':');
    std::string members = colon == std::string::npos ? line : line.substr(colon + 1);
    std::stringstream ss(members);
    std::string part;
    Group g;
    while (std::getline(ss, part, ',')) {
      auto t = trim(part);
      strip_quotes(t);
      if (t.empty()) continue;
      auto id = cats.find(t);
      if (!id || !allowed.count(*id)) {
        spdlog::warn("partition answer names unknown category '{}', dropped", t);
        continue;
      }
      if (assigned.count(*id)) continue;
      g.push_back(*id);
      assigned.insert(*id);
    }
    if (g.size() >= 2) {
      std::sort(g.begin(), g.end());
      groups.push_back(std::move(g));
    } else {
      for (auto id : g) assigned.erase(id);
    }
  }
  return groups;
}

}  // namespace

SubgroupPartition partition_subgroups(LlmClient& client, const CategorySet& cats) {
  if (cats.size() < 2) throw Error(ErrorCode::precondition, "partition needs at least two categories");
  const auto& tmpl = default_template(QuestionId::partition);
  SubgroupPartition part;

  std::set<CategoryId> all;
  for (std::size_t i = 0; i < cats.size(); ++i) all.insert(static_cast<CategoryId>(i));
  std::set<CategoryId> assigned;
  part.coarse_groups = parse_groups(client.ask(render_question(tmpl, {{"category_list", join(cats.names(), ", ")}})),
                                    cats, all, assigned);
  for (auto id : all)
    if (!assigned.count(id)) part.ungrouped.push_back(id);

  std::vector<std::string> questions;
  for (const auto& g : part.coarse_groups) {
    std::vector<std::string> names;
    for (auto id : g) names.push_back(cats.name(id));
    questions.push_back(render_question(tmpl, {{"category_list", join(names, ", ")}}));
  }
  auto answers = client.ask_all(questions);
  for (std::size_t g = 0; g < part.coarse_groups.size(); ++g) {
    std::set<CategoryId> allowed(part.coarse_groups[g].begin(), part.coarse_groups[g].end());
    std::set<CategoryId> fine_assigned;
    for (auto& fg : parse_groups(answers[g], cats, allowed, fine_assigned)) part.fine_groups.push_back(std::move(fg));
  }
  part.validate(cats.size());
  return part;
}

std::vector<DescriptionRecord> acquire_relationship_descriptions(LlmClient& client, const CategorySet& cats,
                                                                 const SubgroupPartition& partition,
                                                                 std::size_t per_pair) {
  std::vector<std::pair<CategoryId, CategoryId>> pairs;
  for (const auto& g : partition.fine_groups)
    for (std::size_t a = 0; a < g.size(); ++a)
      for (std::size_t b = a + 1; b < g.size(); ++b) pairs.emplace_back(g[a], g[b]);
  std::vector<std::string> questions;
  for (auto [a, b] : pairs)
    questions.push_back(render_question(default_template(QuestionId::scene),
                                        {{"count", std::to_string(per_pair)},
                                         {"category1", cats.name(a)},
                                         {"category2", cats.name(b)}}));
  auto answers = client.ask_all(questions);
  std::vector<DescriptionRecord> out;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    auto [a, b] = pairs[k];
    std::vector<std::string> sentences;
    try {
      sentences = parse_list_answer(answers[k]);
    } catch (const Error& e) {
      spdlog::warn("no scene sentences for {} + {}: {}", cats.name(a), cats.name(b), e.what());
      continue;
    }
    if (sentences.size() > per_pair) sentences.resize(per_pair);
    for (auto& s : sentences)
      out.push_back({std::move(s), {a, b}, DescriptionKind::relationship,
                     std::string(to_string(QuestionId::scene)) + "|" + cats.name(a) + "|" + cats.name(b)});
  }
  return out;
}

KnowledgeBundle acquire_knowledge(LlmClient& client, const CategorySet& cats, const AcquireOptions& opt) {
  KnowledgeBundle kb;
  kb.attributes = acquire_attributes(client, cats, opt.n_common, opt.n_specific);
  kb.partition = partition_subgroups(client, cats);

  auto capped = [&](std::vector<std::string> attrs) {
    if (opt.max_attributes && attrs.size() > opt.max_attributes) attrs.resize(opt.max_attributes);
    return attrs;
  };
  const auto n = static_cast<CategoryId>(cats.size());
  if (opt.kinds.count(DescriptionKind::coarse)) {
    auto& corpus = kb.corpora[DescriptionKind::coarse];
    for (CategoryId i = 0; i < n; ++i) {
      auto recs = acquire_descriptions(client, cats, i, capped(kb.attributes.candidates(i)), opt.per_attribute,
                                       DescriptionKind::coarse);
      corpus.insert(corpus.end(), recs.begin(), recs.end());
    }
  }
  if (opt.kinds.count(DescriptionKind::fine)) {
    auto& corpus = kb.corpora[DescriptionKind::fine];
    for (CategoryId i = 0; i < n; ++i) {
      auto fine = filter_attributes(client, cats, i, kb.attributes, opt.keep);
      auto recs = acquire_descriptions(client, cats, i, capped(fine), opt.per_attribute, DescriptionKind::fine);
      corpus.insert(corpus.end(), recs.begin(), recs.end());
    }
  }
  if (opt.kinds.count(DescriptionKind::relationship))
    kb.corpora[DescriptionKind::relationship] =
        acquire_relationship_descriptions(client, cats, kb.partition, opt.per_pair);
  if (opt.augment_name_match)
    for (auto& [kind, corpus] : kb.corpora) augment_positives_by_name(corpus, cats);
  return kb;
}

}  // namespace hiprompt
