#include "layerpool/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

#include "layerpool/io.hpp"
#include "layerpool/rng.hpp"

namespace layerpool {

namespace {

constexpr std::array<std::string_view, 3> kAbsaLabels{"negative", "neutral", "positive"};
constexpr std::array<std::string_view, 3> kNliLabels{"contradiction", "neutral", "entailment"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::int32_t> to_ids(std::string_view text, const Vocab& vocab) {
  std::vector<std::int32_t> ids;
  for (const std::string& tok : tokenize(text)) ids.push_back(vocab.id(tok));
  return ids;
}

}  // namespace

Schema parse_schema(std::string_view token) {
  if (token == "absa") return Schema::kAbsa;
  if (token == "nli") return Schema::kNli;
  throw ContractError("unknown schema '" + std::string(token) + "' (expected absa|nli)");
}

std::string_view to_string(Schema schema) { return schema == Schema::kAbsa ? "absa" : "nli"; }

std::span<const std::string_view> label_names(Schema schema) {
  return schema == Schema::kAbsa ? std::span<const std::string_view>(kAbsaLabels)
                                 : std::span<const std::string_view>(kNliLabels);
}

std::int32_t label_index(Schema schema, std::string_view name) {
  const std::string key = lower(name);
  const auto names = label_names(schema);
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == key) return static_cast<std::int32_t>(i);
  return -1;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.push_back(lower(text.substr(start, i - start)));
  }
  return out;
}

// ---- Vocab -------------------------------------------------------------------

Vocab::Vocab() {
  for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add(t);
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  if (tokens.size() < 4 || !std::equal(v.tokens_.begin(), v.tokens_.end(), tokens.begin())) {
    throw DataError("vocabulary does not start with the reserved tokens");
  }
  for (std::size_t i = 4; i < tokens.size(); ++i) {
    if (v.index_.contains(tokens[i])) throw DataError("duplicate vocabulary token '" + tokens[i] + "'");
    v.add(tokens[i]);
  }
  return v;
}

std::int32_t Vocab::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

void Vocab::add(const std::string& token) {
  if (index_.contains(token)) return;
  index_.emplace(token, static_cast<std::int32_t>(tokens_.size()));
  tokens_.push_back(token);
}

Vocab build_vocab(std::span<const std::string> corpus, std::size_t min_count) {
  if (corpus.empty()) throw ContractError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const std::string& line : corpus)
    for (std::string& tok : tokenize(line)) ++counts[std::move(tok)];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& x, const auto& y) { return x.second > y.second; });
  Vocab v;
  for (const auto& [tok, n] : ranked)
    if (n >= min_count) v.add(tok);
  return v;
}

Vocab build_vocab(std::span<const PairExample> examples, std::size_t min_count) {
  std::vector<std::string> corpus;
  corpus.reserve(2 * examples.size());
  for (const PairExample& ex : examples) {
    corpus.push_back(ex.text_a);
    corpus.push_back(ex.text_b);
  }
  return build_vocab(corpus, min_count);
}

// ---- packing -----------------------------------------------------------------

PackedInput pack_ids(std::span<const std::int32_t> a, std::span<const std::int32_t> b, std::size_t max_len) {
  if (max_len < 3) throw ContractError("max_len must leave room for [CLS] and two [SEP]");
  std::size_t na = a.size(), nb = b.size();
  while (na + nb > max_len - 3) {
    if (na > nb) --na;
    else --nb;
  }
  PackedInput p;
  p.token_ids.reserve(max_len);
  p.token_ids.push_back(Vocab::kCls);
  p.token_ids.insert(p.token_ids.end(), a.begin(), a.begin() + static_cast<std::ptrdiff_t>(na));
  p.token_ids.push_back(Vocab::kSep);
  const std::size_t first_segment = p.token_ids.size();
  p.token_ids.insert(p.token_ids.end(), b.begin(), b.begin() + static_cast<std::ptrdiff_t>(nb));
  p.token_ids.push_back(Vocab::kSep);
  const std::size_t used = p.token_ids.size();
  p.segment_ids.assign(max_len, 0);
  std::fill(p.segment_ids.begin() + static_cast<std::ptrdiff_t>(first_segment),
            p.segment_ids.begin() + static_cast<std::ptrdiff_t>(used), 1);
  p.mask.assign(max_len, 0);
  std::fill(p.mask.begin(), p.mask.begin() + static_cast<std::ptrdiff_t>(used), 1);
  p.token_ids.resize(max_len, Vocab::kPad);
  return p;
}

PackedInput pack_pair(const PairExample& example, const Vocab& vocab, std::size_t max_len) {
  return pack_ids(to_ids(example.text_a, vocab), to_ids(example.text_b, vocab), max_len);
}

// ---- JSONL -------------------------------------------------------------------

std::vector<PairExample> parse_jsonl(std::istream& in, Schema schema) {
  const char* first = schema == Schema::kAbsa ? "text" : "premise";
  const char* second = schema == Schema::kAbsa ? "aspect" : "hypothesis";
  std::vector<PairExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + "malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw DataError(where + "expected a JSON object");
    for (const char* field : {first, second, "label"}) {
      if (!obj.contains(field)) throw DataError(where + "missing field '" + field + "'");
      if (!obj[field].is_string()) throw DataError(where + "field '" + field + "' must be a string");
    }
    const auto label_str = obj["label"].get<std::string>();
    const std::int32_t label = label_index(schema, label_str);
    if (label < 0) throw DataError(where + "unknown label '" + label_str + "'");
    out.push_back(PairExample{obj[first].get<std::string>(), obj[second].get<std::string>(), label});
  }
  return out;
}

std::vector<PairExample> load_jsonl(const std::filesystem::path& path, Schema schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_jsonl(in, schema);
}

std::string to_jsonl(std::span<const PairExample> examples, Schema schema) {
  const char* first = schema == Schema::kAbsa ? "text" : "premise";
  const char* second = schema == Schema::kAbsa ? "aspect" : "hypothesis";
  const auto names = label_names(schema);
  std::string out;
  for (const PairExample& ex : examples) {
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= names.size()) {
      throw DataError("label " + std::to_string(ex.label) + " has no name in schema " +
                      std::string(to_string(schema)));
    }
    nlohmann::ordered_json obj;
    obj[first] = ex.text_a;
    obj[second] = ex.text_b;
    obj["label"] = std::string(names[static_cast<std::size_t>(ex.label)]);
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, std::span<const PairExample> examples, Schema schema) {
  write_file_atomic(path, to_jsonl(examples, schema));
}

// ---- synthetic task ------------------------------------------------------------

namespace {

constexpr std::size_t kNamedGroups = 3;
constexpr std::array<std::array<std::array<std::string_view, 2>, 3>, kNamedGroups> kMarkers{{
    {{{"bland", "awful"}, {"okay", "average"}, {"tasty", "delicious"}}},
    {{{"rude", "slow"}, {"adequate", "standard"}, {"friendly", "prompt"}}},
    {{{"dull", "gloomy"}, {"plain", "ordinary"}, {"cozy", "lovely"}}},
}};
constexpr std::array<std::array<std::string_view, 6>, kNamedGroups> kAspects{{
    {"food", "pizza", "pasta", "dessert", "soup", "bread"},
    {"service", "staff", "waiter", "host", "manager", "bartender"},
    {"ambience", "decor", "music", "view", "lighting", "seating"},
}};
constexpr std::array<std::string_view, 7> kFillers{"honestly", "overall", "i", "think", "we", "visited", "yesterday"};
constexpr std::array<std::string_view, 3> kAdverbs{"really", "quite", "very"};
constexpr std::array<std::string_view, 3> kConjunctions{"and", "but", "while"};

struct SynthLexicon {
  // aspects[group][i], markers[group][class][j]
  std::vector<std::vector<std::string>> aspects;
  std::vector<std::vector<std::vector<std::string>>> markers;
};

SynthLexicon make_lexicon(std::size_t classes, const SynthSpec& spec) {
  if (classes < 2) throw ContractError("synthetic task needs at least two classes");
  if (spec.groups < 2 || spec.groups > classes) {
    throw ContractError("synthetic spec needs between 2 and " + std::to_string(classes) + " aspect groups");
  }
  if (spec.aspects_per_group == 0 || spec.markers_per_class == 0) {
    throw ContractError("synthetic spec needs at least one aspect and one marker");
  }
  SynthLexicon lex;
  const bool named = classes == 3 && spec.markers_per_class <= 2;
  for (std::size_t g = 0; g < spec.groups; ++g) {
    std::vector<std::string> aspects;
    for (std::size_t i = 0; i < spec.aspects_per_group; ++i) {
      aspects.push_back(g < kNamedGroups && i < kAspects[g].size()
                            ? std::string(kAspects[g][i])
                            : "aspect" + std::to_string(g) + "x" + std::to_string(i));
    }
    lex.aspects.push_back(std::move(aspects));
    std::vector<std::vector<std::string>> per_class;
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<std::string> words;
      for (std::size_t j = 0; j < spec.markers_per_class; ++j) {
        words.push_back(named && g < kNamedGroups
                            ? std::string(kMarkers[g][c][j])
                            : "m" + std::to_string(g) + "c" + std::to_string(c) + "w" + std::to_string(j));
      }
      per_class.push_back(std::move(words));
    }
    lex.markers.push_back(std::move(per_class));
  }
  return lex;
}

template <typename Seq>
const auto& pick(const Seq& seq, Rng& rng) {
  return seq[rng.below(seq.size())];
}

}  // namespace

std::vector<PairExample> synth_generate(std::size_t n, std::size_t classes, std::uint64_t seed,
                                        const SynthSpec& spec) {
  if (n < classes) throw ContractError("synthetic set smaller than the number of classes");
  const SynthLexicon lex = make_lexicon(classes, spec);
  const std::size_t groups = spec.groups;
  Rng rng(seed);

  std::vector<std::int32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::int32_t>(i % classes);
  for (std::size_t i = n; i > 1; --i) std::swap(labels[i - 1], labels[rng.below(i)]);

  std::vector<PairExample> out;
  out.reserve(n);
  std::vector<std::size_t> others, order(groups), cls(groups);
  std::vector<std::string> clause(groups), aspect(groups);
  for (std::size_t i = 0; i < n; ++i) {
    // The target group carries the label; every other group gets a distinct
    // class drawn from the rest, so markers never repeat a class.
    const std::size_t target = rng.below(groups);
    others.clear();
    for (std::size_t c = 0; c < classes; ++c)
      if (c != static_cast<std::size_t>(labels[i])) others.push_back(c);
    for (std::size_t k = others.size(); k > 1; --k) std::swap(others[k - 1], others[rng.below(k)]);
    for (std::size_t g = 0, next = 0; g < groups; ++g)
      cls[g] = g == target ? static_cast<std::size_t>(labels[i]) : others[next++];

    for (std::size_t g = 0; g < groups; ++g) {
      aspect[g] = pick(lex.aspects[g], rng);
      if (spec.terse) {
        clause[g] = aspect[g] + " ";
      } else {
        clause[g] = "the " + aspect[g] + " was ";
        if (spec.max_fillers > 0 && rng.below(2) == 1) clause[g] += std::string(pick(kAdverbs, rng)) + " ";
      }
      clause[g] += pick(lex.markers[g][cls[g]], rng);
    }
    std::string text;
    const std::size_t fillers = rng.below(spec.max_fillers + 1);
    for (std::size_t f = 0; f < fillers; ++f) text += std::string(pick(kFillers, rng)) + " ";
    for (std::size_t g = 0; g < groups; ++g) order[g] = g;
    for (std::size_t k = groups; k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
    for (std::size_t k = 0; k < groups; ++k) {
      if (k > 0) text += " " + std::string(pick(kConjunctions, rng)) + " ";
      text += clause[order[k]];
    }
    out.push_back(PairExample{std::move(text), aspect[target], labels[i]});
  }
  return out;
}

std::int32_t synth_label(const PairExample& example, std::size_t classes, const SynthSpec& spec) {
  const SynthLexicon lex = make_lexicon(classes, spec);
  const auto query = tokenize(example.text_b);
  if (query.size() != 1) return -1;
  int group = -1;
  for (std::size_t g = 0; g < lex.aspects.size(); ++g)
    if (std::find(lex.aspects[g].begin(), lex.aspects[g].end(), query[0]) != lex.aspects[g].end())
      group = static_cast<int>(g);
  if (group < 0) return -1;
  std::int32_t found = -1;
  for (const std::string& tok : tokenize(example.text_a)) {
    for (std::size_t c = 0; c < classes; ++c) {
      const auto& words = lex.markers[static_cast<std::size_t>(group)][c];
      if (std::find(words.begin(), words.end(), tok) == words.end()) continue;
      if (found >= 0) return -1;
      found = static_cast<std::int32_t>(c);
    }
  }
  return found;
}

// ---- unigram baseline ------------------------------------------------------------

void UnigramBaseline::fit(std::span<const PairExample> examples, std::size_t classes) {
  if (examples.empty()) throw ContractError("cannot fit a baseline on no data");
  classes_ = classes;
  counts_.assign(classes, {});
  totals_.assign(classes, 0.0);
  std::vector<double> prior(classes, 0.0);
  std::unordered_map<std::string, int> seen;
  for (const PairExample& ex : examples) {
    const auto c = static_cast<std::size_t>(ex.label);
    prior.at(c) += 1.0;
    for (const std::string& tok : tokenize(ex.text_a)) {
      counts_[c][tok] += 1.0;
      totals_[c] += 1.0;
      seen[tok] = 1;
    }
  }
  vocab_size_ = seen.size();
  log_prior_.resize(classes);
  for (std::size_t c = 0; c < classes; ++c)
    log_prior_[c] = std::log((prior[c] + 1.0) / (static_cast<double>(examples.size()) + static_cast<double>(classes)));
}

std::int32_t UnigramBaseline::predict(const PairExample& example) const {
  const auto tokens = tokenize(example.text_a);
  std::int32_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < classes_; ++c) {
    double score = log_prior_[c];
    const double denom = totals_[c] + static_cast<double>(vocab_size_) + 1.0;
    for (const std::string& tok : tokens) {
      const auto it = counts_[c].find(tok);
      score += std::log(((it == counts_[c].end() ? 0.0 : it->second) + 1.0) / denom);
    }
    if (score > best_score) {
      best_score = score;
      best = static_cast<std::int32_t>(c);
    }
  }
  return best;
}

double UnigramBaseline::accuracy(std::span<const PairExample> examples) const {
  if (examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const PairExample& ex : examples) hits += predict(ex) == ex.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

}  // namespace layerpool
