#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "hiprompt/error.hpp"
#include "hiprompt/promptgraph.hpp"

using namespace hiprompt;
namespace fs = std::filesystem;

namespace {

SubgroupPartition two_pairs() {
  SubgroupPartition p;
  p.coarse_groups = {{0, 1}, {2, 3}};
  p.fine_groups = {{0, 1}, {2, 3}};
  return p;
}

// Rows grouped by equal id in column `col`, found by brute force.
std::set<std::set<int>> tying_classes(const PromptLayout& l, int col) {
  std::set<std::set<int>> classes;
  for (int r = 0; r < l.n_categories; ++r) {
    std::set<int> same;
    for (int s = 0; s < l.n_categories; ++s)
      if (l.id(r, col) == l.id(s, col)) same.insert(s);
    classes.insert(same);
  }
  return classes;
}

const ContinuousToken& token_at(const PromptSequence& s, std::size_t i) {
  return std::get<ContinuousToken>(s.elements[i]);
}

}  // namespace

TEST_CASE("layout tying classes") {
  auto l = build_layout(two_pairs(), {1, 1, 1, 1}, 4, Branch::global);
  CHECK(l.m() == 4);
  CHECK(tying_classes(l, 0) == std::set<std::set<int>>{{0, 1, 2, 3}});
  CHECK(tying_classes(l, 1) == std::set<std::set<int>>{{0, 1}, {2, 3}});
  CHECK(tying_classes(l, 2) == std::set<std::set<int>>{{0, 1}, {2, 3}});
  CHECK(tying_classes(l, 3) == std::set<std::set<int>>{{0}, {1}, {2}, {3}});
  CHECK(l.n_ids == 1 + 2 + 2 + 4);
  CHECK(l.band(0) == PromptLayout::Band::shared);
  CHECK(l.band(3) == PromptLayout::Band::specific);
}

TEST_CASE("ungrouped categories get their own ids in partial-shared columns") {
  SubgroupPartition p;
  p.coarse_groups = {{0, 1, 2}, {3, 4}};
  p.fine_groups = {{0, 1}, {3, 4}};
  p.ungrouped = {5};
  auto l = build_layout(p, {2, 2, 2, 2}, 6, Branch::global);
  for (int col = 2; col < 6; ++col) {
    for (int r = 0; r < 5; ++r) CHECK(l.id(5, col) != l.id(r, col));
  }
  // Row 2 is coarse-grouped but has no fine partner.
  CHECK(l.id(2, 2) == l.id(0, 2));
  CHECK(l.id(2, 4) != l.id(0, 4));
  CHECK(l.id(2, 4) != l.id(1, 4));
}

TEST_CASE("default composition is 16/8/4/4") {
  TokenComposition c;
  CHECK(c.shared == 16);
  CHECK(c.ps1 == 8);
  CHECK(c.ps2 == 4);
  CHECK(c.specific == 4);
  CHECK(c.total() == 32);
  CHECK_NOTHROW(c.validate());
  CHECK_NOTHROW(build_layout(two_pairs(), c, 4, Branch::local));

  TokenComposition bad{-1, 0, 0, 1};
  CHECK_THROWS_AS(bad.validate(), Error);
  TokenComposition empty{0, 0, 0, 0};
  try {
    empty.validate();
    FAIL("expected CompositionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::composition_mismatch);
  }
}

TEST_CASE("global and local id ranges do not overlap") {
  auto m = make_prompt_model(two_pairs(), {1, 1, 1, 1}, 4, 8, 0);
  std::set<int> g(m.global.slots.begin(), m.global.slots.end());
  std::set<int> l(m.local.slots.begin(), m.local.slots.end());
  for (int id : l) CHECK(g.count(id) == 0);
  CHECK(m.store.size() == m.global.n_ids + m.local.n_ids);
  CHECK(m.store.dim() == 8);
}

TEST_CASE("parameter init") {
  ParameterStore a(100, 100), b(100, 100), z(10, 4);
  init_parameters(a, 3, 0.02);
  init_parameters(b, 3, 0.02);
  CHECK(a == b);
  init_parameters(z, 3, 0.0);
  CHECK(z.table().isZero(0));

  const double n = static_cast<double>(a.table().size());
  const double mean = a.table().sum() / n;
  const double sd = std::sqrt((a.table().array() - mean).square().sum() / (n - 1));
  CHECK(std::abs(sd - 0.02) < 0.002);

  ParameterStore c(100, 100);
  init_parameters(c, 4, 0.02);
  CHECK_FALSE(a == c);
}

TEST_CASE("materialized prompts share storage") {
  CategorySet cats({"knife", "fork", "sofa", "book"});
  auto vocab = Vocabulary::build({"knife fork sofa book"});
  SubgroupPartition p;
  p.coarse_groups = {{0, 2}, {1, 3}};
  p.fine_groups = {{0, 2}, {1, 3}};
  auto m = make_prompt_model(p, {2, 1, 1, 2}, 4, 8, 7, 0.5);

  auto p0 = materialize_prompt(m.global, m.store, 0, cats, vocab);
  auto p2 = materialize_prompt(m.global, m.store, 2, cats, vocab);
  CHECK(p0.size() == static_cast<std::size_t>(m.global.m()) + 1 + 1);
  CHECK(token_at(p0, 3).value == token_at(p2, 3).value);
  CHECK(token_at(p0, 4).value != token_at(p2, 4).value);
  CHECK(std::get<TokenId>(p0.elements.back()) == eos_token);

  CategorySet two_word({"traffic light"});
  auto v2 = Vocabulary::build({"traffic light"});
  SubgroupPartition solo;
  solo.ungrouped = {0};
  auto m2 = make_prompt_model(solo, {2, 1, 1, 2}, 1, 8, 7);
  CHECK(materialize_prompt(m2.global, m2.store, 0, two_word, v2).size() == 6u + 2u + 1u);

  std::vector<PromptSequence> before;
  for (CategoryId i = 0; i < 4; ++i) before.push_back(materialize_prompt(m.global, m.store, i, cats, vocab));
  m.store.row(m.global.id(0, 0)).array() += 0.25;
  for (CategoryId i = 0; i < 4; ++i) {
    auto after = materialize_prompt(m.global, m.store, i, cats, vocab);
    CHECK(token_at(after, 0).value != token_at(before[static_cast<std::size_t>(i)], 0).value);
    CHECK(token_at(after, 1).value == token_at(before[static_cast<std::size_t>(i)], 1).value);
  }
}

TEST_CASE("hand-craft prompts") {
  CategorySet cats({"dog", "mouse"});
  HandcraftPromptMap map;
  CHECK(map.render(cats, 0) == "a photo of a dog");
  map.overrides["mouse"] = "a photo of a computer mouse";
  CHECK(map.render(cats, 1) == "a photo of a computer mouse");
  try {
    map.render(cats, 5);
    FAIL("expected UnknownCategory");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::unknown_category);
  }
}

TEST_CASE("checkpoint round trip") {
  auto dir = fs::temp_directory_path() / "hiprompt_promptgraph";
  fs::create_directories(dir);
  auto p = two_pairs();
  auto m = make_prompt_model(p, {3, 2, 1, 2}, 4, 6, 11, 0.3);
  save_checkpoint(dir / "ck.bin", m, p);
  auto back = load_checkpoint(dir / "ck.bin", p);
  CHECK(back.global.composition == m.global.composition);
  CHECK(back.global.slots == m.global.slots);
  CHECK(back.local.slots == m.local.slots);
  CHECK(back.store.table() == m.store.table().cast<float>().cast<double>());

  SubgroupPartition other;
  other.coarse_groups = {{0, 1, 2, 3}};
  other.fine_groups = {{0, 1}, {2, 3}};
  CHECK_THROWS_AS(load_checkpoint(dir / "ck.bin", other), Error);
}
