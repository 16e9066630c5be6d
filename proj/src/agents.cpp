#include "kgroute/agents.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "kgroute/error.hpp"
#include "kgroute/random.hpp"

namespace kgroute {

using nlohmann::json;

namespace {

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'' || c == '\\') out += '\\';
    out += c;
  }
  return out + "'";
}

struct Family {
  const char* label;
  const char* condition;
  const char* tags[5];
};

constexpr Family kFamilies[] = {
    {"hypertension", "hypertension", {"low_sodium", "low_cholesterol", "low_saturated_fat", "low_fat", "high_potassium"}},
    {"diabetes", "diabetes", {"low_sugar", "low_carb", "low_calorie", "high_protein", "high_fiber"}},
    {"obesity", "obesity", {"high_fat", "high_saturated_fat", "high_calorie", "high_sugar", "low_fiber"}},
    {"renal", "renal/kidney diet", {"low_protein", "high_sodium", "high_carb", "high_cholesterol", "low_potassium"}},
};

constexpr const char* kVocabulary[] = {
    "high_calorie", "high_carb",   "high_cholesterol",   "high_fat",    "high_fiber",
    "high_potassium", "high_protein", "high_saturated_fat", "high_sodium", "high_sugar",
    "low_calorie",  "low_carb",    "low_cholesterol",    "low_fat",     "low_fiber",
    "low_potassium", "low_protein", "low_saturated_fat",  "low_sodium",  "low_sugar"};

constexpr const char* kFoods[] = {
    "Lentil soup",      "Beef stew",        "Caesar salad",     "Buttermilk pancakes", "Fried rice",
    "Chicken curry",    "Tomato pasta",     "Veggie omelette",  "Fish tacos",          "Mushroom risotto",
    "Bean chili",       "Apple pie",        "Yogurt parfait",   "Pork dumplings",      "Shrimp gumbo",
    "Falafel wrap",     "Peanut noodles",   "Minestrone",       "Spinach quiche",      "Baked salmon",
    "Turkey sandwich",  "Cornbread",        "Potato gratin",    "Hummus plate",        "Banana bread",
    "Clam chowder",     "Miso ramen",       "Seafood paella",   "Chicken noodle soup", "Stuffed peppers",
    "Eggplant bake",    "Belgian waffles",  "Burrito bowl",     "Cobb salad",          "Meatloaf",
    "Tofu stir fry",    "Steel-cut oatmeal", "Tuna melt",       "Cottage pie",         "Granola bar"};

constexpr const char* kIngredients[] = {
    "Salt",         "Olive oil",   "Butter",        "Garlic",        "Onion",       "Tomato",
    "Wheat flour",  "Cane sugar",  "Whole milk",    "Egg",           "Cheddar",     "White rice",
    "Soy sauce",    "Black pepper", "Basil",        "Chicken broth", "Carrot",      "Celery",
    "Potato",       "Heavy cream", "Honey",         "Lemon juice",   "Ginger",      "Cumin",
    "Paprika",      "Spinach",     "Bell pepper",   "Mushroom",      "Parsley",     "Cider vinegar",
    "Yeast",        "Baking soda", "Corn starch",   "Bacon",         "Ground beef", "Coconut milk",
    "Peanuts",      "Sesame oil",  "Chili flakes",  "Thyme"};

constexpr const char* kHabits[] = {
    "Walks after dinner",         "Often skips breakfast",     "Drinks two coffees a day",
    "Cooks at home most nights",  "Snacks late at night",      "Runs on weekends",
    "Eats out twice a week",      "Drinks green tea",          "Sleeps under six hours",
    "Works night shifts",         "Takes a daily multivitamin", "Avoids fried food",
    "Eats fruit every day",       "Drinks soda now and then",  "Does yoga weekly",
    "Commutes by bicycle",        "Eats lunch at the desk",    "Prefers spicy food",
    "Has wine with dinner",       "Meal preps on Sundays",     "Rarely eats fast food",
    "Drinks eight glasses of water", "Stands while working",   "Chews gum often",
    "Eats slowly",                "Shares meals with family",  "Skips dessert",
    "Drinks herbal tea at night", "Swims twice a week",        "Gardens on weekends"};

template <class T, std::size_t N>
std::vector<std::string> pick(Rng& rng, const T (&pool)[N], std::size_t k) {
  std::vector<std::string> all(std::begin(pool), std::end(pool));
  rng.shuffle(all);
  all.resize(std::min(k, all.size()));
  return all;
}

QueryInstance make_query(const ScenarioConfig& cfg, const Family& fam, const std::string& id,
                         const std::string& split) {
  Rng rng(derive_seed(cfg.seed, "query", id));
  QueryInstance q;
  q.id = id;
  q.family = fam.label;
  q.setting = "synthetic";
  q.split = split;
  q.context.record_id = id;

  const std::string food = kFoods[rng.below(std::size(kFoods))];
  q.question = "I have " + std::string(fam.condition) + ". Which nutrition tags settle whether \"" + food +
               "\" is a good choice for me?";

  std::vector<std::string> pool_tags(std::begin(fam.tags), std::end(fam.tags));
  rng.shuffle(pool_tags);
  std::vector<std::string> gold(pool_tags.begin(), pool_tags.begin() + 4);
  std::sort(gold.begin(), gold.end());

  const std::size_t n_noise = cfg.noise_min + rng.below(cfg.noise_max - cfg.noise_min + 1);
  const std::size_t n_distractor = std::min<std::size_t>(1 + rng.below(3), n_noise);
  const std::size_t n_habits = std::min(n_noise - n_distractor,
                                        static_cast<std::size_t>(std::lround(0.35 * static_cast<double>(n_noise))));
  const std::size_t n_ingredients = n_noise - n_distractor - n_habits;

  std::vector<std::string> distractors;
  for (const char* t : kVocabulary) {
    if (std::find(pool_tags.begin(), pool_tags.end(), t) == pool_tags.end()) distractors.push_back(t);
  }
  rng.shuffle(distractors);
  distractors.resize(n_distractor);
  const auto habits = pick(rng, kHabits, n_habits);
  const auto ingredients = pick(rng, kIngredients, n_ingredients);

  auto add = [&](const std::string& id_, const std::string& subkind) {
    q.context.nodes.push_back(Node{id_, NodeKind::kEntity, subkind, id_});
  };
  add("user", "user");
  add(food, "food");
  add(fam.condition, "condition");
  for (const auto& t : gold) add(t, "nutrition_tag");
  for (const auto& h : habits) add(h, "habit");
  for (const auto& i : ingredients) add(i, "ingredient");
  for (const auto& t : distractors) add(t, "nutrition_tag");

  std::set<Triple> triples;
  triples.insert({"user", "has", fam.condition});
  for (const auto& t : gold) {
    triples.insert({food, "belongs to", t});
    triples.insert({fam.condition, "match", t});
  }
  for (const auto& h : habits) triples.insert({"user", "has", h});
  for (const auto& i : ingredients) triples.insert({food, "has", i});
  for (const auto& t : distractors) {
    // Distractor tags hang off an ingredient (or the food when there is none).
    const std::string owner = ingredients.empty() ? food : ingredients[rng.below(ingredients.size())];
    triples.insert({owner, "belongs to", t});
  }
  q.context.triples.assign(triples.begin(), triples.end());
  q.mentions = {"user", food, fam.condition};
  std::sort(q.mentions.begin(), q.mentions.end());
  q.gold = gold;
  std::vector<std::string> relevant{"user", food, fam.condition};
  relevant.insert(relevant.end(), gold.begin(), gold.end());
  std::sort(relevant.begin(), relevant.end());
  q.relevant = relevant;
  return q;
}

}  // namespace

std::string linearize_graph(const ContextGraph& g) {
  std::vector<Triple> sorted = g.triples;
  std::stable_sort(sorted.begin(), sorted.end());
  std::string out;
  for (const auto& t : sorted) out += "[" + quote(t.src) + ", " + quote(t.label) + ", " + quote(t.dst) + "]\n";
  return out;
}

std::string linearize_graph(const RoutedGraph& g) { return linearize_graph(g.base()); }

double SyntheticAgentProfile::effective_hit(const std::string& family, std::size_t noise_entities) const {
  auto it = competence.find(family);
  if (it == competence.end()) {
    throw ConfigError("agent '" + agent_id + "' has no competence for query family '" + family + "'");
  }
  const double excess = noise_entities > budget ? static_cast<double>(noise_entities - budget) : 0.0;
  return std::clamp(it->second - sensitivity * excess, 0.0, 1.0);
}

std::size_t noise_entity_count(const QueryInstance& q, const ContextGraph& context) {
  if (!q.relevant) return 0;
  std::size_t n = 0;
  for (const auto& node : context.nodes) {
    if (!std::binary_search(q.relevant->begin(), q.relevant->end(), node.id)) ++n;
  }
  return n;
}

AgentAnswer simulate_answer(const SyntheticAgentProfile& profile, const QueryInstance& q,
                            const ContextGraph& context, const std::vector<std::string>& vocabulary,
                            std::uint64_t seed, const std::string& context_label) {
  const double hit = profile.effective_hit(q.family, noise_entity_count(q, context));
  TagSet universe(vocabulary.begin(), vocabulary.end());
  universe.insert(q.gold.begin(), q.gold.end());
  Rng rng(derive_seed(seed, "answer", profile.agent_id, q.id));
  AgentAnswer a;
  a.agent_id = profile.agent_id;
  a.query_id = q.id;
  a.context = context_label;
  for (const auto& tag : universe) {
    const double u = rng.uniform();
    const bool gold = std::binary_search(q.gold.begin(), q.gold.end(), tag);
    if (u < (gold ? hit : profile.flip)) a.tags.insert(tag);
  }
  return a;
}

void ScenarioConfig::validate() const {
  if (families < 1 || families > std::size(kFamilies)) throw ConfigError("scenario families must be in 1..4");
  if (train_per_family == 0) throw ConfigError("scenario needs training queries");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in [0, 1)");
  if (noise_min > noise_max) throw ConfigError("noise_min exceeds noise_max");
  if (backbones == 0) throw ConfigError("scenario needs at least one backbone");
  for (double p : {expert_hit, base_hit, flip, noisy_flip, attend_signal, attend_noise}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("scenario rates must lie in [0, 1]");
  }
  if (sensitivity < 0.0) throw ConfigError("sensitivity must be non-negative");
  if (backbones * 6 < families + noisy_agents) {
    throw ConfigError("pool too small for one expert per family plus the noisy agents");
  }
}

Scenario generate_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  Scenario s;
  s.config = cfg;
  s.vocabulary.assign(std::begin(kVocabulary), std::end(kVocabulary));

  for (std::size_t b = 0; b < cfg.backbones; ++b) {
    const std::string backbone = std::string("backbone-") + static_cast<char>('a' + b % 26) +
                                 (b >= 26 ? std::to_string(b / 26) : "");
    for (Strategy st : kAllStrategies) {
      AgentSpec a;
      a.backbone = backbone;
      a.strategy = st;
      a.id = backbone + "::" + to_string(st);
      a.description = "synthetic " + to_string(st) + " agent on " + backbone;
      s.pool.push_back(std::move(a));
    }
  }
  const std::size_t n_agents = s.pool.size();
  const std::size_t n_regular = n_agents - cfg.noisy_agents;

  Rng rng(derive_seed(cfg.seed, "experts"));
  std::vector<std::size_t> order(n_regular);
  for (std::size_t i = 0; i < n_regular; ++i) order[i] = i;
  rng.shuffle(order);
  for (std::size_t f = 0; f < cfg.families; ++f) {
    s.experts[kFamilies[f].label] = s.pool[order[f]].id;
    s.conditions[kFamilies[f].label] = kFamilies[f].condition;
  }

  for (std::size_t i = 0; i < n_agents; ++i) {
    SyntheticAgentProfile p;
    p.agent_id = s.pool[i].id;
    for (std::size_t f = 0; f < cfg.families; ++f) {
      p.competence[kFamilies[f].label] = s.experts[kFamilies[f].label] == p.agent_id ? cfg.expert_hit : cfg.base_hit;
    }
    p.flip = i >= n_regular ? cfg.noisy_flip : cfg.flip;
    p.sensitivity = cfg.noise_sensitive ? cfg.sensitivity : 0.0;
    p.budget = cfg.budget;
    s.profiles.push_back(std::move(p));
  }

  auto emit = [&](const std::string& split, std::size_t count, std::size_t first_index) {
    for (std::size_t f = 0; f < cfg.families; ++f) {
      for (std::size_t k = 0; k < count; ++k) {
        char id[64];
        std::snprintf(id, sizeof id, "%s-%s-%04zu", split.c_str(), kFamilies[f].label, first_index + k);
        s.queries.push_back(make_query(cfg, kFamilies[f], id, split));
      }
    }
  };
  const auto n_val = static_cast<std::size_t>(std::lround(cfg.val_fraction * static_cast<double>(cfg.train_per_family)));
  emit("train", cfg.train_per_family - n_val, 0);
  emit("val", n_val, cfg.train_per_family - n_val);
  emit("test", cfg.test_per_family, 0);

  for (auto& a : s.pool) {
    for (const auto& q : s.queries) {
      Rng ar(derive_seed(cfg.seed, "attend", a.id, q.id));
      std::vector<std::string> attended;
      for (const auto& node : q.context.nodes) {
        const bool signal = std::binary_search(q.relevant->begin(), q.relevant->end(), node.id);
        if (ar.bernoulli(signal ? cfg.attend_signal : cfg.attend_noise)) attended.push_back(node.id);
      }
      if (!attended.empty()) a.attends[q.id] = std::move(attended);
    }
  }
  return s;
}

std::string serialize_profiles(const std::vector<SyntheticAgentProfile>& profiles) {
  json arr = json::array();
  for (const auto& p : profiles) {
    arr.push_back({{"agent", p.agent_id},
                   {"competence", p.competence},
                   {"flip", p.flip},
                   {"sensitivity", p.sensitivity},
                   {"budget", p.budget}});
  }
  return arr.dump(1) + "\n";
}

std::vector<SyntheticAgentProfile> parse_profiles(const std::string& text) {
  std::vector<SyntheticAgentProfile> out;
  try {
    for (const auto& j : json::parse(text)) {
      SyntheticAgentProfile p;
      p.agent_id = j.at("agent").get<std::string>();
      p.competence = j.at("competence").get<std::map<std::string, double>>();
      p.flip = j.at("flip").get<double>();
      p.sensitivity = j.at("sensitivity").get<double>();
      p.budget = j.at("budget").get<std::size_t>();
      out.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed agent profiles: ") + e.what(), 1, 0);
  }
  return out;
}

}  // namespace kgroute
