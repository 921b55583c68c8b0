#include <algorithm>
#include <random>
#include <sstream>

#include "hiprompt/knowledge.hpp"
#include "hiprompt/llm_client.hpp"

namespace hiprompt {

namespace {

struct LexiconEntry {
  const char* name;
  const char* scene;
  const char* subscene;
  std::vector<std::string> traits;
};

const std::vector<LexiconEntry>& lexicon() {
  static const std::vector<LexiconEntry> entries = {
      {"knife", "kitchen", "utensils", {"sharp", "blade", "steel", "serrated", "slicing", "edge", "pointed", "chopping"}},
      {"fork", "kitchen", "utensils", {"prongs", "tines", "pronged", "twirling", "stabbing", "silverware", "polished", "dinnerware"}},
      {"spoon", "kitchen", "utensils", {"scoop", "ladle", "stirring", "curved", "soup", "rounded", "shallow", "teaspoon"}},
      {"oven", "kitchen", "appliances", {"baking", "heat", "roasting", "door", "tray", "thermostat", "preheated", "hot"}},
      {"microwave", "kitchen", "appliances", {"reheating", "turntable", "beeping", "popcorn", "keypad", "radiation", "timer", "defrost"}},
      {"toaster", "kitchen", "appliances", {"bread", "slots", "crispy", "lever", "toast", "crumbs", "golden", "popping"}},
      {"refrigerator", "kitchen", "appliances", {"cold", "chilled", "freezer", "shelves", "fridge", "frosty", "humming", "magnets"}},
      {"cup", "kitchen", "tableware", {"handle", "mug", "sipping", "ceramic", "coffee", "saucer", "steaming", "tea"}},
      {"bowl", "kitchen", "tableware", {"cereal", "hollow", "deep", "salad", "porcelain", "rim", "mixing", "noodles"}},
      {"sofa", "living room", "seating", {"cushions", "upholstered", "lounging", "armrest", "plush", "reclining", "fabric", "comfy"}},
      {"chair", "living room", "seating", {"legs", "backrest", "seat", "wooden", "sitting", "stool", "folding", "rocking"}},
      {"book", "living room", "decor", {"pages", "chapters", "novel", "reading", "paperback", "spine", "author", "hardcover"}},
      {"clock", "living room", "decor", {"ticking", "hands", "dial", "hours", "minutes", "alarm", "pendulum", "numerals"}},
      {"vase", "living room", "decor", {"flowers", "glass", "bouquet", "fragile", "tall", "blossoms", "glazed", "decorative"}},
      {"tv", "living room", "media", {"screen", "channels", "broadcast", "pixels", "watching", "flat", "streaming", "television"}},
      {"remote", "living room", "media", {"buttons", "batteries", "clicker", "infrared", "pressing", "volume", "handheld", "switching"}},
      {"car", "street", "vehicles", {"wheels", "engine", "driving", "sedan", "headlights", "tires", "parked", "honking"}},
      {"bus", "street", "vehicles", {"passengers", "route", "stop", "commuters", "double", "transit", "fare", "driver"}},
      {"truck", "street", "vehicles", {"cargo", "hauling", "trailer", "diesel", "delivery", "loading", "heavy", "freight"}},
      {"bicycle", "street", "riders", {"pedals", "chain", "spokes", "cycling", "helmet", "saddle", "handlebars", "riding"}},
      {"motorcycle", "street", "riders", {"throttle", "roaring", "biker", "exhaust", "leather", "revving", "kickstand", "chrome"}},
      {"dog", "countryside", "pets", {"barking", "fur", "leash", "puppy", "tail", "fetching", "paws", "loyal"}},
      {"cat", "countryside", "pets", {"whiskers", "purring", "meowing", "kitten", "claws", "feline", "litter", "napping"}},
      {"bird", "countryside", "wildlife", {"feathers", "wings", "beak", "chirping", "nest", "flying", "perched", "singing"}},
      {"horse", "countryside", "livestock", {"mane", "hooves", "galloping", "stable", "reins", "trotting", "stallion", "bridle"}},
      {"sheep", "countryside", "livestock", {"wool", "flock", "grazing", "lamb", "shearing", "bleating", "fleece", "pasture"}},
      {"cow", "countryside", "livestock", {"milk", "dairy", "mooing", "cattle", "udder", "herd", "spotted", "calf"}},
  };
  return entries;
}

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

template <class T>
const T& pick_from(Rng& rng, const std::vector<T>& v) {
  return v[pick(rng, v.size())];
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    auto b = part.find_first_not_of(' ');
    auto e = part.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(part.substr(b, e - b + 1));
  }
  return out;
}

std::string numbered(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    out += std::to_string(i + 1) + ". " + items[i];
    if (i + 1 < items.size()) out += '\n';
  }
  return out;
}

std::size_t parse_count(const std::string& s, std::size_t fallback) {
  try {
    return static_cast<std::size_t>(std::stoul(s));
  } catch (...) {
    return fallback;
  }
}

// k distinct traits (fewer when the profile is short).
std::vector<std::string> some_traits(Rng& rng, std::vector<std::string> traits, std::size_t k) {
  std::shuffle(traits.begin(), traits.end(), rng);
  traits.resize(std::min(k, traits.size()));
  while (traits.size() < k) traits.push_back(traits.front());
  return traits;
}

std::string describe_sentence(Rng& rng, const std::string& name, const std::string& attribute,
                              const std::vector<std::string>& traits) {
  auto t = some_traits(rng, traits, 3);
  switch (pick(rng, 8)) {
    case 0: return "the " + name + " has a " + t[0] + " " + attribute + " and is " + t[1] + " and " + t[2];
    case 1: return "a " + t[0] + " " + t[1] + " " + t[2] + " " + name;
    case 2: return "this " + name + " is " + t[0] + " and " + t[1] + " with a " + t[2] + " " + attribute;
    case 3: return "a " + name + " with a " + t[0] + " " + t[1] + " " + attribute;
    // The remaining forms never mention the category name.
    case 4: return "its " + attribute + " is " + t[0] + " " + t[1] + " and " + t[2];
    case 5: return "something " + t[0] + " and " + t[1] + " with a " + t[2] + " " + attribute;
    case 6: return "the object looks " + t[0] + " " + t[1] + " and feels " + t[2];
    default: return "a " + t[0] + " " + attribute + " that seems " + t[1] + " and " + t[2];
  }
}

std::string scene_sentence(Rng& rng, const std::string& n1, const std::string& n2,
                           const std::vector<std::string>& traits1, const std::vector<std::string>& traits2,
                           const std::vector<std::string>& places) {
  auto a = some_traits(rng, traits1, 2);
  auto b = some_traits(rng, traits2, 2);
  const auto& place = pick_from(rng, places);
  switch (pick(rng, 6)) {
    case 0: return "a " + a[0] + " " + n1 + " and a " + b[0] + " " + n2 + " in the " + place;
    case 1: return "the " + n1 + " sits near the " + b[0] + " " + n2 + " by the " + place;
    case 2: return "a " + a[0] + " " + n1 + " next to a " + b[0] + " " + b[1] + " " + n2;
    case 3: return "someone uses the " + a[0] + " " + n1 + " and the " + n2 + " at the " + place;
    case 4: return "a " + a[0] + " " + n1 + " beside something " + b[0] + " and " + b[1];
    default: return "something " + a[0] + " and " + a[1] + " beside the " + n2 + " near the " + place;
  }
}

}  // namespace

MockWorld MockWorld::builtin() {
  MockWorld w;
  w.common_attributes = {"color", "shape", "size", "material", "texture", "weight", "surface",
                         "pattern", "finish", "smell", "sound", "temperature", "age", "condition"};
  for (const auto& e : lexicon()) w.profiles[e.name] = {e.scene, e.subscene, e.traits};
  w.scene_words["kitchen"] = {"counter", "stove", "sink", "cabinet", "pantry", "kitchen table"};
  w.scene_words["living room"] = {"carpet", "lamp", "shelf", "fireplace", "window", "rug"};
  w.scene_words["street"] = {"road", "sidewalk", "intersection", "crossing", "parking lot", "curb"};
  w.scene_words["countryside"] = {"field", "farm", "meadow", "fence", "barnyard", "hillside"};
  return w;
}

MockCategoryProfile MockWorld::profile(std::string_view name) const {
  auto key = normalize_name(name);
  if (auto it = profiles.find(key); it != profiles.end()) return it->second;
  static const std::vector<std::string> syllables = {"ka", "lo", "mi", "ren", "tu", "vos", "bel",
                                                     "dar", "fi", "gon", "ru", "sa", "te", "zil"};
  Rng rng(fnv1a64(key));
  MockCategoryProfile p;
  while (p.traits.size() < 6) {
    std::string word;
    auto n = 2 + pick(rng, 2);
    for (std::size_t k = 0; k < n; ++k) word += pick_from(rng, syllables);
    if (std::find(p.traits.begin(), p.traits.end(), word) == p.traits.end()) p.traits.push_back(word);
  }
  return p;
}

MockLlmClient::MockLlmClient(std::uint64_t seed, MockWorld world) : seed_(seed), world_(std::move(world)) {}

std::string MockLlmClient::ask(const std::string& question) {
  Rng rng(fnv1a64(question) ^ (seed_ * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL));

  if (auto s = match_question(default_template(QuestionId::common_attributes), question)) {
    auto pool = world_.common_attributes;
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(std::min(pool.size(), parse_count(s->at("count"), pool.size())));
    return numbered(pool);
  }
  if (auto s = match_question(default_template(QuestionId::filter), question)) {
    auto prof = world_.profile(s->at("category"));
    std::vector<std::string> kept;
    auto items = split_commas(s->at("attribute_list"));
    for (const auto& a : items) {
      bool own = std::find(prof.traits.begin(), prof.traits.end(), a) != prof.traits.end();
      bool common = std::find(world_.common_attributes.begin(), world_.common_attributes.end(), a) !=
                    world_.common_attributes.end();
      if (own || (common && std::bernoulli_distribution(0.5)(rng))) kept.push_back(a);
    }
    if (kept.empty() && !items.empty()) kept.push_back(items.front());
    kept.resize(std::min(kept.size(), parse_count(s->at("count"), kept.size())));
    return numbered(kept);
  }
  if (auto s = match_question(default_template(QuestionId::describe), question)) {
    const auto& name = s->at("category");
    auto prof = world_.profile(name);
    std::vector<std::string> out;
    auto n = parse_count(s->at("count"), 10);
    for (std::size_t k = 0; k < n; ++k) out.push_back(describe_sentence(rng, name, s->at("attribute"), prof.traits));
    return numbered(out);
  }
  if (auto s = match_question(default_template(QuestionId::scene), question)) {
    const auto& n1 = s->at("category1");
    const auto& n2 = s->at("category2");
    auto p1 = world_.profile(n1);
    auto p2 = world_.profile(n2);
    std::vector<std::string> places{"room"};
    if (auto it = world_.scene_words.find(p1.scene); it != world_.scene_words.end()) places = it->second;
    std::vector<std::string> out;
    auto n = parse_count(s->at("count"), 10);
    for (std::size_t k = 0; k < n; ++k) out.push_back(scene_sentence(rng, n1, n2, p1.traits, p2.traits, places));
    return numbered(out);
  }
  if (auto s = match_question(default_template(QuestionId::partition), question)) {
    // Group by scene; a list that is already one scene is split by subscene.
    std::vector<std::pair<std::string, std::string>> known;  // (name, profile)
    std::set<std::string> scenes;
    for (const auto& name : split_commas(s->at("category_list"))) {
      auto prof = world_.profile(name);
      if (prof.scene.empty()) continue;
      known.emplace_back(name, prof.scene + "|" + prof.subscene);
      scenes.insert(prof.scene);
    }
    bool by_subscene = scenes.size() == 1;
    std::vector<std::string> labels;
    std::map<std::string, std::vector<std::string>> members;
    for (const auto& [name, key] : known) {
      auto bar = key.find('|');
      auto label = by_subscene ? key.substr(bar + 1) : key.substr(0, bar);
      if (!members.count(label)) labels.push_back(label);
      members[label].push_back(name);
    }
    std::vector<std::string> lines;
    for (const auto& label : labels) {
      std::string line = label + ": ";
      for (std::size_t k = 0; k < members[label].size(); ++k) line += (k ? ", " : "") + members[label][k];
      lines.push_back(line);
    }
    if (lines.empty()) return "I could not find any common scenes for these words.";
    return numbered(lines);
  }
  if (auto s = match_question(default_template(QuestionId::specific_attributes), question)) {
    auto prof = world_.profile(s->at("category"));
    auto traits = prof.traits;
    // A few traits of other objects, which the filter step should remove.
    const auto& lex = lexicon();
    for (int k = 0; k < 3; ++k) {
      const auto& other = lex[pick(rng, lex.size())];
      const auto& t = pick_from(rng, other.traits);
      if (std::find(traits.begin(), traits.end(), t) == traits.end()) traits.push_back(t);
    }
    std::shuffle(traits.begin(), traits.end(), rng);
    traits.resize(std::min(traits.size(), parse_count(s->at("count"), traits.size())));
    return numbered(traits);
  }
  return "Sorry, I am not able to help with that request.";
}

}  // namespace hiprompt
