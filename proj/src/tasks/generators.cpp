#include <algorithm>
#include <functional>
#include <set>

#include "interp/error.hpp"
#include "interp/tasks/task.hpp"
#include "interp/util/random.hpp"

namespace interp::tasks {

namespace {

using Fillers = std::vector<std::string>;

const std::vector<std::string> kNames = {
    "Mary",    "John",   "Tom",     "James",   "Dan",     "Sid",     "Martin", "Amy",     "Paul",    "Kate",
    "Mark",    "Anne",   "Michael", "Sarah",   "Jennifer", "Robert", "Lisa",   "David",   "Emma",    "Joseph",
    "Daniel",  "Chris",  "Alex",    "Ben",     "Ryan",    "Kevin",   "Jason",  "Brian",   "Eric",    "Adam",
    "Steve",   "Laura",  "Rachel",  "Jessica", "Emily",   "Andrew",  "Peter",  "Richard", "Charles", "Thomas",
    "George",  "Edward", "Henry",   "Jack",    "Matthew", "Nick",    "Sam",    "Max",     "Luke",    "Jacob",
    "Alice",   "Grace",  "Rose",    "Claire",  "Helen",   "Susan",   "Linda",  "Karen",   "Nancy",   "Betty",
    "Carol",   "Ruth",   "Sharon",  "Carl",    "Frank",   "Scott",   "Tim",    "Justin",  "Patrick", "Sean",
    "Greg",    "Simon",  "Victoria", "Lucy",   "Jane",    "Julia",   "Ellen"};

const std::vector<std::string> kPlaces = {"store",   "park",     "school",  "house",  "office", "beach",
                                          "garden",  "restaurant", "station", "hospital", "library", "market",
                                          "church",  "river",    "bank",    "airport"};

const std::vector<std::string> kGiftObjects = {"drink", "ring",  "kiss",   "bone",   "basketball", "computer", "necklace",
                                               "snack", "apple", "book",   "letter", "gift",       "ball",     "bottle",
                                               "cup",   "key",   "phone",  "pen",    "pencil",     "hat"};

// {IO} is the indirect object, {S} the subject (appears twice).
const std::vector<std::string> kIoiTemplates = {
    "Then, {S} and {IO} went to the {PLACE}. {S} gave a {OBJECT} to",
    "When {S} and {IO} got a {OBJECT} at the {PLACE}, {S} decided to give it to",
    "When {IO} and {S} went to the {PLACE}, {S} gave a {OBJECT} to",
    "After {IO} and {S} went to the {PLACE}, {S} gave a {OBJECT} to",
    "Friends {IO} and {S} went to the {PLACE}. {S} gave a {OBJECT} to",
    "While {S} and {IO} were working at the {PLACE}, {S} gave a {OBJECT} to",
    "Then, {IO} and {S} had a lot of fun at the {PLACE}. {S} gave a {OBJECT} to",
};

const std::vector<std::string> kEventNouns = {"war",    "expedition", "contract", "deal",       "project",
                                              "sanctions", "strike",  "trial",    "journey",    "reign",
                                              "dynasty", "occupation", "abduction", "pilgrimage"};

const std::vector<std::string> kAcronymWords = {
    "Chief",     "Executive", "Officer",  "Central",     "Intelligence", "Agency",    "National",   "Security",
    "Council",   "Public",    "Health",   "Service",     "General",      "Motors",    "Company",    "International",
    "Business",  "Machines",  "Federal",  "Reserve",     "Bank",         "World",     "Trade",      "Organization",
    "United",    "States",    "Army",     "Royal",       "Air",          "Force",     "Human",      "Resources",
    "Department", "Local",    "Area",     "Network",     "Personal",     "Computer",  "System",     "Digital",
    "Video",     "Disc",      "Open",     "Source",      "Software",     "Joint",     "Task",       "Special",
    "Operations", "Unit",     "Market",   "Research",    "Group",        "Data",      "Protection", "Act",
    "Free",      "Union",     "Global",   "Energy",      "Project",      "Key",       "Performance", "Index",
    "Annual",    "Report",    "Meeting",  "Board",       "Member",       "Committee", "Credit",     "Card",
    "Holder",    "Quality",   "Control",  "Team",        "Game",         "Console",   "Young",      "Adult",
    "Fiction"};

const std::vector<std::string> kColors = {"red",   "blue",   "green",  "yellow", "black",  "white", "brown",
                                          "orange", "purple", "pink",  "gray",   "silver", "gold"};

const std::vector<std::string> kTableObjects = {"pencil", "necklace", "lighter", "booklet", "dog",   "cup",  "ball",
                                                "phone",  "key",      "hat",     "book",    "plate", "bowl", "mug",
                                                "jug",    "scarf",    "sock",    "shirt",   "watch", "bracelet"};

const std::vector<std::string> kBoxObjects = {
    "apple", "computer", "document", "car",  "book",  "bell",  "key",   "map",  "ring",  "shoe",  "coat", "plane",
    "brick", "clock",    "cross",    "watch", "glass", "coin", "egg",   "fan",  "bag",   "cake",  "dress", "engine",
    "file",  "game",     "gift",     "guitar", "hat",  "leaf",  "milk", "newspaper", "note", "paper", "pen", "phone",
    "plant", "radio",    "rose",     "seed",  "stone", "tea",   "toy",  "train", "wire"};

constexpr int kBoxes = 7;

std::vector<std::string> pick_distinct(const std::vector<std::string>& pool, std::size_t k, util::Rng& rng,
                                       const std::set<std::string>& exclude = {}) {
  std::vector<std::string> candidates;
  for (const auto& s : pool) {
    if (!exclude.count(s)) candidates.push_back(s);
  }
  if (candidates.size() < k) throw ConfigError("filler pool too small");
  rng.shuffle(candidates);
  candidates.resize(k);
  return candidates;
}

struct Filled {
  std::string text;
  std::map<std::string, std::vector<Span>> slots;
};

Filled fill(const std::string& tmpl, const std::map<std::string, std::string>& values) {
  Filled out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      const std::string key = tmpl.substr(i + 1, close - i - 1);
      const auto& v = values.at(key);
      out.slots[key].push_back({out.text.size(), out.text.size() + v.size()});
      out.text += v;
      i = close + 1;
    } else {
      out.text.push_back(tmpl[i++]);
    }
  }
  return out;
}

std::string article(const std::string& word) {
  return std::string("aeiou").find(word[0]) != std::string::npos ? "an" : "a";
}

std::string two_digits(int v) {
  std::string s = std::to_string(v);
  return s.size() < 2 ? "0" + s : s;
}

struct Family {
  int n_templates = 1;
  std::function<Fillers(util::Rng&)> sample;
  std::function<Fillers(const Fillers&, util::Rng&)> counterfactual;
  std::function<TaskExample(int, const Fillers&)> build;
};

Family ioi_family() {
  Family f;
  f.n_templates = static_cast<int>(kIoiTemplates.size());
  f.sample = [](util::Rng& rng) {
    auto names = pick_distinct(kNames, 2, rng);
    return Fillers{names[0], names[1], rng.pick(kPlaces), rng.pick(kGiftObjects)};
  };
  f.counterfactual = [](const Fillers& old, util::Rng& rng) {
    auto names = pick_distinct(kNames, 2, rng, {old[0], old[1]});
    return Fillers{names[0], names[1], old[2], old[3]};
  };
  f.build = [](int t, const Fillers& v) {
    const auto filled = fill(kIoiTemplates[t], {{"IO", v[0]}, {"S", v[1]}, {"PLACE", v[2]}, {"OBJECT", v[3]}});
    TaskExample ex;
    ex.text = filled.text;
    ex.answers = {" " + v[0]};
    ex.distractors = {" " + v[1]};
    ex.spans["IO"] = filled.slots.at("IO")[0];
    ex.spans["S1"] = filled.slots.at("S")[0];
    ex.spans["S2"] = filled.slots.at("S")[1];
    ex.span_groups["DISTRACTORS"] = filled.slots.at("S");
    return ex;
  };
  return f;
}

Family greater_than_family() {
  Family f;
  f.sample = [](util::Rng& rng) {
    return Fillers{rng.pick(kEventNouns), std::to_string(11 + rng.below(7)), two_digits(2 + static_cast<int>(rng.below(97)))};
  };
  f.counterfactual = [](const Fillers& old, util::Rng& rng) {
    std::string yy;
    do {
      yy = two_digits(2 + static_cast<int>(rng.below(97)));
    } while (yy == old[2]);
    return Fillers{old[0], old[1], yy};
  };
  f.build = [](int, const Fillers& v) {
    const auto filled = fill("The {NOUN} lasted from the year {XX}{YY} to the year {XX}",
                             {{"NOUN", v[0]}, {"XX", v[1]}, {"YY", v[2]}});
    TaskExample ex;
    ex.text = filled.text;
    const int yy = std::stoi(v[2]);
    for (int y = yy + 1; y <= 99; ++y) ex.answers.push_back(two_digits(y));
    for (int y = 0; y <= yy; ++y) ex.distractors.push_back(two_digits(y));
    ex.spans["YY"] = filled.slots.at("YY")[0];
    ex.spans["XX"] = filled.slots.at("XX")[0];
    return ex;
  };
  return f;
}

Family acronym_family() {
  Family f;
  f.sample = [](util::Rng& rng) { return pick_distinct(kAcronymWords, 3, rng); };
  f.counterfactual = [](const Fillers& old, util::Rng& rng) {
    Fillers v;
    do {
      v = pick_distinct(kAcronymWords, 3, rng, {old.begin(), old.end()});
    } while (v[2][0] == old[2][0]);
    return v;
  };
  f.build = [](int, const Fillers& v) {
    const std::string l1(1, v[0][0]), l2(1, v[1][0]), l3(1, v[2][0]);
    const auto filled = fill("The {W1} {W2} {W3} ({L1}{L2}",
                             {{"W1", v[0]}, {"W2", v[1]}, {"W3", v[2]}, {"L1", l1}, {"L2", l2}});
    TaskExample ex;
    ex.text = filled.text;
    ex.answers = {l3};
    for (const auto& l : {l1, l2}) {
      if (l != l3) ex.distractors.push_back(l);
    }
    for (const char* k : {"W1", "W2", "W3", "L1", "L2"}) ex.spans[k] = filled.slots.at(k)[0];
    return ex;
  };
  return f;
}

// Fillers: example colors(3) objects(3) query-index, then query colors(3) objects(3) query-index.
Family colored_objects_family() {
  Family f;
  auto half = [](util::Rng& rng, Fillers& out) {
    for (const auto& c : pick_distinct(kColors, 3, rng)) out.push_back(c);
    for (const auto& o : pick_distinct(kTableObjects, 3, rng)) out.push_back(o);
    out.push_back(std::to_string(rng.below(3)));
  };
  f.sample = [half](util::Rng& rng) {
    Fillers v;
    half(rng, v);
    half(rng, v);
    return v;
  };
  f.counterfactual = [half](const Fillers& old, util::Rng& rng) {
    Fillers v(old.begin(), old.begin() + 7);
    Fillers q;
    do {
      q.clear();
      half(rng, q);
    } while (q[std::stoi(q[6])] == old[7 + std::stoi(old[13])]);
    v.insert(v.end(), q.begin(), q.end());
    return v;
  };
  f.build = [](int, const Fillers& v) {
    auto part = [&](int base, const std::string& prefix) {
      std::string t = "Q: On the table, there is ";
      for (int i = 0; i < 3; ++i) {
        if (i == 2) t += ", and ";
        else if (i == 1) t += ", ";
        t += article(v[base + i]) + " {" + prefix + "C" + std::to_string(i) + "} {" + prefix + "O" +
             std::to_string(i) + "}";
      }
      t += ". What color is the {" + prefix + "Q}? A:";
      return t;
    };
    std::map<std::string, std::string> values;
    for (int i = 0; i < 3; ++i) {
      values["eC" + std::to_string(i)] = v[i];
      values["eO" + std::to_string(i)] = v[3 + i];
      values["qC" + std::to_string(i)] = v[7 + i];
      values["qO" + std::to_string(i)] = v[10 + i];
    }
    const int eq = std::stoi(v[6]), qq = std::stoi(v[13]);
    values["eQ"] = v[3 + eq];
    values["eA"] = v[eq];
    values["qQ"] = v[10 + qq];
    const auto filled = fill(part(0, "e") + " {eA}\n" + part(7, "q"), values);
    TaskExample ex;
    ex.text = filled.text;
    ex.answers = {" " + v[7 + qq]};
    ex.spans["OBJ1"] = filled.slots.at("qO" + std::to_string(qq))[0];
    ex.spans["OBJ2"] = filled.slots.at("qQ")[0];
    ex.spans["COLOR"] = filled.slots.at("qC" + std::to_string(qq))[0];
    for (int i = 0; i < 3; ++i) {
      if (i == qq) continue;
      ex.distractors.push_back(" " + v[7 + i]);
      ex.span_groups["DISTRACTORS"].push_back(filled.slots.at("qC" + std::to_string(i))[0]);
    }
    return ex;
  };
  return f;
}

// Fillers: kBoxes objects, kBoxes box letters, query index.
Family entity_family() {
  Family f;
  static const std::vector<std::string> letters = [] {
    std::vector<std::string> out;
    for (char c = 'A'; c <= 'Z'; ++c) out.emplace_back(1, c);
    return out;
  }();
  auto draw = [](util::Rng& rng, const std::set<std::string>& avoid) {
    Fillers v = pick_distinct(kBoxObjects, kBoxes, rng, avoid);
    for (const auto& b : pick_distinct(letters, kBoxes, rng)) v.push_back(b);
    v.push_back(std::to_string(rng.below(kBoxes)));
    return v;
  };
  f.sample = [draw](util::Rng& rng) { return draw(rng, {}); };
  f.counterfactual = [draw](const Fillers& old, util::Rng& rng) {
    return draw(rng, {old[static_cast<std::size_t>(std::stoi(old[2 * kBoxes]))]});
  };
  f.build = [](int, const Fillers& v) {
    std::string t;
    std::map<std::string, std::string> values;
    for (int i = 0; i < kBoxes; ++i) {
      t += (i == 0 ? "The {O" : ", the {O") + std::to_string(i) + "} is in Box {B" + std::to_string(i) + "}";
      values["O" + std::to_string(i)] = v[i];
      values["B" + std::to_string(i)] = v[kBoxes + i];
    }
    const int q = std::stoi(v[2 * kBoxes]);
    values["BQ"] = v[kBoxes + q];
    t += ". Box {BQ} contains the";
    const auto filled = fill(t, values);
    TaskExample ex;
    ex.text = filled.text;
    ex.answers = {" " + v[q]};
    ex.spans["OBJECT"] = filled.slots.at("O" + std::to_string(q))[0];
    ex.spans["BOX"] = filled.slots.at("B" + std::to_string(q))[0];
    ex.spans["QUERY_BOX"] = filled.slots.at("BQ")[0];
    for (int i = 0; i < kBoxes; ++i) {
      if (i == q) continue;
      ex.distractors.push_back(" " + v[i]);
      ex.span_groups["DISTRACTORS"].push_back(filled.slots.at("O" + std::to_string(i))[0]);
    }
    return ex;
  };
  return f;
}

const Family& family_for(const std::string& task) {
  static const std::map<std::string, Family> families = {
      {"ioi", ioi_family()},
      {"greater-than", greater_than_family()},
      {"acronyms", acronym_family()},
      {"colored-objects", colored_objects_family()},
      {"entity-tracking", entity_family()},
  };
  auto it = families.find(task);
  if (it == families.end()) throw NotFoundError("no prompt generator for task family '" + task + "'");
  return it->second;
}

bool span_is_one_token(const model::TokenizedPrompt& tp, const Span& s) {
  int hits = 0;
  bool ends_ok = false;
  for (const auto& t : tp.tokens) {
    if (tp.bos_prepended && t.index == 0) continue;
    if (t.char_begin < s.end && s.begin < t.char_end) {
      ++hits;
      ends_ok = t.char_end == s.end && t.char_begin + 1 >= s.begin;
    }
  }
  return hits == 1 && ends_ok;
}

bool aligned(const TaskExample& ex, const model::ModelHandle& m) {
  const auto tp = m.tokenize(ex.text);
  for (const auto& [name, s] : ex.spans) {
    if (!span_is_one_token(tp, s)) return false;
  }
  for (const auto& [name, group] : ex.span_groups) {
    for (const auto& s : group) {
      if (!span_is_one_token(tp, s)) return false;
    }
  }
  for (const auto& a : ex.answers) {
    if (!m.tokenizer().single_token(a)) return false;
  }
  return true;
}

TaskExample finish(const Family& fam, int t, Fillers fillers, const GenerateOptions& options, bool& ok) {
  TaskExample ex = fam.build(t, fillers);
  ex.template_id = t;
  ex.fillers = std::move(fillers);
  ok = true;
  if (options.model) {
    ok = aligned(ex, *options.model);
    if (ok) resolve_positions(ex, *options.model);
  }
  return ex;
}

}  // namespace

std::vector<TaskExample> generate_prompts(const TaskDefinition& task, int n, std::uint64_t seed,
                                          const GenerateOptions& options) {
  if (n < 0) throw ValidationError("prompt count must be non-negative");
  const Family& fam = family_for(task.task);
  util::Rng rng(util::derive_seed(seed, "prompts/" + task.name));
  std::vector<TaskExample> out;
  std::set<std::string> seen;
  const long max_attempts = 2000L * std::max(n, 1);
  for (long attempt = 0; static_cast<int>(out.size()) < n; ++attempt) {
    if (attempt >= max_attempts) throw ValidationError("could not generate enough aligned prompts for " + task.name);
    const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(fam.n_templates)));
    bool ok = false;
    auto ex = finish(fam, t, fam.sample(rng), options, ok);
    if (!ok || !seen.insert(ex.text).second) continue;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TaskExample> sample_counterfactuals(const TaskDefinition& task, const std::vector<TaskExample>& prompts,
                                                std::uint64_t seed, const GenerateOptions& options) {
  const Family& fam = family_for(task.task);
  util::Rng rng(util::derive_seed(seed, "counterfactuals/" + task.name));
  std::vector<TaskExample> out;
  for (const auto& p : prompts) {
    std::optional<model::TokenizedPrompt> original;
    if (options.model) original = options.model->tokenize(p.text);
    for (int attempt = 0;; ++attempt) {
      if (attempt > 2000) throw ValidationError("no aligned counterfactual for: " + p.text);
      bool ok = false;
      auto cf = finish(fam, p.template_id, fam.counterfactual(p.fillers, rng), options, ok);
      if (!ok || cf.text == p.text) continue;
      // Keep the template's token length so positions transfer.
      if (original && options.model->tokenize(cf.text).size() != original->size()) continue;
      out.push_back(std::move(cf));
      break;
    }
  }
  return out;
}

}  // namespace interp::tasks
