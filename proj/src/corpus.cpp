#include <cctype>
#include <fstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "hiprompt/error.hpp"
#include "hiprompt/knowledge.hpp"

namespace hiprompt {

using json = nlohmann::ordered_json;

namespace {

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// The word itself plus its singular candidates.
std::vector<std::string> variants(const std::string& w) {
  std::vector<std::string> out{w};
  if (ends_with(w, "ies") && w.size() > 4) out.push_back(w.substr(0, w.size() - 3) + "y");
  if (ends_with(w, "es") && w.size() > 3) out.push_back(w.substr(0, w.size() - 2));
  if (ends_with(w, "s") && !ends_with(w, "ss") && w.size() > 2) out.push_back(w.substr(0, w.size() - 1));
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  return out;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format_error, path.string() + ": " + e.what());
  }
}

}  // namespace

NameMatcher::NameMatcher(const CategorySet& cats, std::map<std::string, std::vector<std::string>> synonyms) {
  for (std::size_t i = 0; i < cats.size(); ++i) {
    auto id = static_cast<CategoryId>(i);
    phrases_.emplace_back(id, words_of(cats.names()[i]));
    if (auto it = synonyms.find(normalize_name(cats.names()[i])); it != synonyms.end())
      for (const auto& syn : it->second) phrases_.emplace_back(id, words_of(syn));
  }
}

std::set<CategoryId> NameMatcher::match(std::string_view text) const {
  auto words = words_of(text);
  std::vector<std::vector<std::string>> forms;
  forms.reserve(words.size());
  for (const auto& w : words) forms.push_back(variants(w));

  std::set<CategoryId> found;
  for (const auto& [id, phrase] : phrases_) {
    if (phrase.empty() || found.count(id) || phrase.size() > words.size()) continue;
    for (std::size_t p = 0; p + phrase.size() <= words.size(); ++p) {
      bool ok = true;
      for (std::size_t k = 0; k < phrase.size() && ok; ++k) {
        const auto& f = forms[p + k];
        ok = std::find(f.begin(), f.end(), phrase[k]) != f.end();
      }
      if (ok) {
        found.insert(id);
        break;
      }
    }
  }
  return found;
}

std::vector<DescriptionRecord> ingest_captions(const std::filesystem::path& path, const CategorySet& cats,
                                               const std::map<std::string, std::vector<std::string>>& synonyms) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open captions file: " + path.string());
  NameMatcher matcher(cats, synonyms);
  std::vector<DescriptionRecord> out;
  std::string line;
  std::size_t line_no = 0, skipped = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string text = line;
    auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    if (line[first] == '{') {
      try {
        text = json::parse(line).at("text").get<std::string>();
      } catch (const json::exception& e) {
        throw Error::format_at_line(line_no, e.what());
      }
    }
    auto positives = matcher.match(text);
    if (positives.empty()) {
      ++skipped;
      continue;
    }
    out.push_back({text, std::move(positives), DescriptionKind::caption,
                   path.filename().string() + ":" + std::to_string(line_no)});
  }
  if (skipped) spdlog::info("{}: skipped {} captions naming no category", path.string(), skipped);
  return out;
}

void augment_positives_by_name(Corpus& corpus, const CategorySet& cats) {
  NameMatcher matcher(cats);
  for (auto& r : corpus) {
    auto named = matcher.match(r.text);
    r.positives.insert(named.begin(), named.end());
  }
}

// ---------------------------------------------------------------------------

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& r : corpus) {
    json j;
    j["text"] = r.text;
    j["positives"] = r.positives;
    j["kind"] = to_string(r.kind);
    j["provenance"] = r.provenance;
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::io_error, "write failed: " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open corpus: " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    DescriptionRecord r;
    try {
      auto j = json::parse(line);
      r.text = j.at("text").get<std::string>();
      for (const auto& p : j.at("positives")) r.positives.insert(p.get<CategoryId>());
      r.kind = description_kind_from_string(j.at("kind").get<std::string>());
      r.provenance = j.value("provenance", std::string());
    } catch (const json::exception& e) {
      throw Error::format_at_line(line_no, e.what());
    } catch (const Error& e) {
      throw Error::format_at_line(line_no, e.what());
    }
    if (r.text.empty() || r.positives.empty())
      throw Error::format_at_line(line_no, "record needs non-empty text and positives");
    corpus.push_back(std::move(r));
  }
  return corpus;
}

void save_attributes(const AttributeSet& attrs, const std::filesystem::path& path) {
  json j;
  j["common"] = attrs.common;
  j["specific"] = json::object();
  for (const auto& [id, list] : attrs.specific) j["specific"][std::to_string(id)] = list;
  j["fine"] = json::object();
  for (const auto& [id, list] : attrs.fine) j["fine"][std::to_string(id)] = list;
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

AttributeSet load_attributes(const std::filesystem::path& path) {
  auto j = read_json_file(path);
  AttributeSet attrs;
  try {
    attrs.common = j.at("common").get<std::vector<std::string>>();
    for (const auto& [k, v] : j.at("specific").items()) attrs.specific[std::stoi(k)] = v.get<std::vector<std::string>>();
    if (j.contains("fine"))
      for (const auto& [k, v] : j.at("fine").items()) attrs.fine[std::stoi(k)] = v.get<std::vector<std::string>>();
  } catch (const std::exception& e) {
    throw Error(ErrorCode::format_error, path.string() + ": " + e.what());
  }
  return attrs;
}

void save_partition(const SubgroupPartition& p, const std::filesystem::path& path) {
  json j;
  j["coarse_groups"] = p.coarse_groups;
  j["fine_groups"] = p.fine_groups;
  j["ungrouped"] = p.ungrouped;
  auto out = open_out(path);
  out << j.dump() << '\n';
}

SubgroupPartition load_partition(const std::filesystem::path& path) {
  auto j = read_json_file(path);
  SubgroupPartition p;
  try {
    p.coarse_groups = j.at("coarse_groups").get<std::vector<Group>>();
    p.fine_groups = j.at("fine_groups").get<std::vector<Group>>();
    p.ungrouped = j.at("ungrouped").get<std::vector<CategoryId>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format_error, path.string() + ": " + e.what());
  }
  return p;
}

}  // namespace hiprompt
