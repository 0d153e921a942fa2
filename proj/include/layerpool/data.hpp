#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "layerpool/encoder.hpp"

namespace layerpool {

/// Sentence-pair task family. Decides JSONL field names and label tables.
enum class Schema { kAbsa, kNli };

Schema parse_schema(std::string_view token);
std::string_view to_string(Schema schema);
/// Fixed label tables: absa {negative, neutral, positive},
/// nli {contradiction, neutral, entailment}.
std::span<const std::string_view> label_names(Schema schema);
/// Case-insensitive label lookup; returns -1 for unknown strings.
std::int32_t label_index(Schema schema, std::string_view name);

struct PairExample {
  std::string text_a;  // sentence / premise
  std::string text_b;  // aspect / hypothesis
  std::int32_t label = 0;

  friend bool operator==(const PairExample&, const PairExample&) = default;
};

/// Lowercased whitespace tokens.
std::vector<std::string> tokenize(std::string_view text);

class Vocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kCls = 2;
  static constexpr std::int32_t kSep = 3;

  Vocab();
  /// Rebuilds a vocabulary from its id-ordered token list (reserved tokens first).
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  void add(const std::string& token);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

/// Tokens seen at least `min_count` times, ordered by count (descending)
/// then lexicographically.
Vocab build_vocab(std::span<const std::string> corpus, std::size_t min_count = 1);
Vocab build_vocab(std::span<const PairExample> examples, std::size_t min_count = 1);

/// BERT pair packing: [CLS] a [SEP] b [SEP], padded to max_len. When the pair
/// does not fit, the longer side loses tokens from its end one at a time.
PackedInput pack_ids(std::span<const std::int32_t> a, std::span<const std::int32_t> b, std::size_t max_len);
PackedInput pack_pair(const PairExample& example, const Vocab& vocab, std::size_t max_len);

std::vector<PairExample> parse_jsonl(std::istream& in, Schema schema);
std::vector<PairExample> load_jsonl(const std::filesystem::path& path, Schema schema);
std::string to_jsonl(std::span<const PairExample> examples, Schema schema);
void save_jsonl(const std::filesystem::path& path, std::span<const PairExample> examples, Schema schema);

// ---- synthetic pair task -------------------------------------------------------

/// Knobs for the synthetic aspect task. text_a mentions one aspect from each
/// of `groups` aspect groups, each followed by a sentiment marker whose
/// vocabulary is specific to that group. The markers of one sentence carry
/// pairwise different classes. text_b names one of the mentioned aspects and
/// the label is the class of that aspect's marker, so text_a alone does no
/// better than choosing among `groups` equally likely classes.
struct SynthSpec {
  std::size_t groups = 2;  // 2 <= groups <= classes
  std::size_t aspects_per_group = 1;
  std::size_t markers_per_class = 1;
  std::size_t max_fillers = 0;
  bool terse = true;  // "food awful" instead of "the food was (adverb) awful"
};

std::vector<PairExample> synth_generate(std::size_t n, std::size_t classes, std::uint64_t seed,
                                        const SynthSpec& spec = {});

/// Recovers the label of a synthetic example from its text alone; -1 when
/// the text does not follow the generator's grammar.
std::int32_t synth_label(const PairExample& example, std::size_t classes, const SynthSpec& spec = {});

/// Multinomial naive Bayes over text_a unigrams. Never looks at text_b.
class UnigramBaseline {
 public:
  void fit(std::span<const PairExample> examples, std::size_t classes);
  std::int32_t predict(const PairExample& example) const;
  double accuracy(std::span<const PairExample> examples) const;

 private:
  std::size_t classes_ = 0;
  std::vector<double> log_prior_;
  std::vector<std::unordered_map<std::string, double>> counts_;
  std::vector<double> totals_;
  std::size_t vocab_size_ = 0;
};

}  // namespace layerpool
