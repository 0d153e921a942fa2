#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "layerpool/autodiff.hpp"
#include "layerpool/rng.hpp"

namespace layerpool {

struct EncoderConfig {
  std::size_t layers = 4;
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t ffn = 64;
  std::size_t vocab = 0;
  std::size_t max_len = 64;
  Real dropout = 0.1;
  Real init_stddev = 0.02;

  /// Throws ContractError when the configuration is unusable.
  void validate() const;
  std::size_t head_dim() const { return hidden / heads; }
};

/// One sentence pair laid out as `[CLS] a [SEP] b [SEP] [PAD]...`.
struct PackedInput {
  std::vector<std::int32_t> token_ids;
  std::vector<std::int32_t> segment_ids;
  std::vector<std::uint8_t> mask;

  std::size_t length() const noexcept { return token_ids.size(); }
  friend bool operator==(const PackedInput&, const PackedInput&) = default;
};

/// Drops trailing padding. Outputs at unmasked positions are unchanged.
PackedInput trim_padding(const PackedInput& input);

/// Classification-token hidden state of every transformer layer, ordered
/// from the layer nearest the embeddings (index 0) to the last layer.
struct CLSTrace {
  std::vector<Var> layers;

  std::size_t size() const noexcept { return layers.size(); }
  bool empty() const noexcept { return layers.empty(); }
  std::vector<Tensor> values() const;
};

struct EncoderOutput {
  Var final;   // [S x H] output of the last layer
  CLSTrace trace;
};

/// Optional inspection hook filled by self_attention_block.
struct AttentionProbe {
  std::vector<Tensor> weights;  // per head, [S x S], rows are queries
  Tensor values;                // [S x H] value projections
  Tensor context;               // [S x H] attention output before the output projection
};

struct EncoderLayer {
  Parameter query_w, query_b, key_w, key_b, value_w, value_b, out_w, out_b;
  Parameter attn_norm_gamma, attn_norm_beta;
  Parameter ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b;
  Parameter ffn_norm_gamma, ffn_norm_beta;
};

/// Post-norm transformer encoder in the BERT layout: token + segment +
/// learned position embeddings, then `layers` blocks of multi-head
/// self-attention and a GELU feed-forward network, each wrapped in
/// residual + layer norm.
///
/// A null `dropout_rng` selects evaluation mode (no dropout).
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, Rng& init_rng);

  const EncoderConfig& config() const noexcept { return config_; }

  Var embed(Tape& tape, const PackedInput& input, Rng* dropout_rng);
  Var self_attention_block(Tape& tape, const Var& x, std::span<const std::uint8_t> mask,
                           std::size_t layer, Rng* dropout_rng, AttentionProbe* probe = nullptr);
  EncoderOutput encode(Tape& tape, const PackedInput& input, Rng* dropout_rng);

  std::vector<Parameter*> parameters();
  EncoderLayer& layer(std::size_t i) { return layers_.at(i); }
  Parameter& token_table() { return token_table_; }
  Parameter& position_table() { return position_table_; }
  Parameter& segment_table() { return segment_table_; }

 private:
  void check_input(const PackedInput& input) const;

  EncoderConfig config_;
  Parameter token_table_, position_table_, segment_table_;
  Parameter embed_norm_gamma_, embed_norm_beta_;
  std::vector<EncoderLayer> layers_;
};

}  // namespace layerpool
