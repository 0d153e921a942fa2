#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "layerpool/autodiff.hpp"
#include "layerpool/encoder.hpp"

namespace layerpool {

enum class PoolingKind { kLast, kLstm, kAttention };

/// Accepts exactly "last", "lstm" or "attention".
PoolingKind parse_pooling(std::string_view token);
std::string_view to_string(PoolingKind kind);

/// Single-layer unidirectional LSTM with hidden size equal to its input
/// size. Gate blocks are laid out column-wise as [input | forget | cell | output].
struct LSTMPoolHead {
  static LSTMPoolHead create(std::size_t hidden, Rng& rng);

  std::size_t hidden() const { return input_w.value.rows(); }
  std::vector<Parameter*> parameters() { return {&input_w, &recurrent_w, &bias}; }

  Parameter input_w;      // [H x 4H]
  Parameter recurrent_w;  // [H x 4H]
  Parameter bias;         // [4H], forget block starts at 1
};

/// Dot-product attention over layers: a learned query scores every trace
/// vector, and the softmax-weighted sum is projected by w_h^T.
struct AttentionPoolHead {
  static AttentionPoolHead create(std::size_t hidden, Rng& rng, Real stddev = 0.02);

  std::vector<Parameter*> parameters() { return {&projection, &query}; }

  Parameter projection;  // w_h, [H x H], no bias
  Parameter query;       // q, [1 x H]
};

struct ClassifierHead {
  static ClassifierHead create(std::size_t hidden, std::size_t classes, Rng& rng, Real stddev = 0.02);

  std::size_t classes() const { return bias.value.size(); }
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }

  Parameter weight;  // w_o, [H x C]
  Parameter bias;    // b_o, [C]
};

/// o = h^L: the last layer's vector, untouched.
Var last_cls_pool(const CLSTrace& trace);

/// Runs the LSTM over the trace in layer order from zero state and returns
/// the final hidden state.
Var lstm_pool(Tape& tape, const CLSTrace& trace, LSTMPoolHead& head);

/// o = w_h^T sum_i softmax(q . h^i) h^i. `weights_out`, when given,
/// receives the [1 x L] attention weights.
Var attention_pool(Tape& tape, const CLSTrace& trace, AttentionPoolHead& head, Tensor* weights_out = nullptr);

/// y = softmax(w_o^T dropout(o) + b_o). Dropout only runs when `dropout_rng`
/// is non-null.
Var classify(Tape& tape, const Var& pooled, ClassifierHead& head, Real dropout_rate, Rng* dropout_rng);

/// Index of the largest probability; ties resolve to the lowest index.
std::size_t argmax(std::span<const Real> probs);

/// Runtime-selected pooling strategy owning whatever parameters it needs.
class PoolingHead {
 public:
  PoolingHead() = default;
  PoolingHead(PoolingKind kind, std::size_t hidden, Rng& rng);

  PoolingKind kind() const noexcept { return kind_; }
  Var pool(Tape& tape, const CLSTrace& trace);
  std::vector<Parameter*> parameters();

  LSTMPoolHead* lstm() { return lstm_ ? &*lstm_ : nullptr; }
  AttentionPoolHead* attention() { return attention_ ? &*attention_ : nullptr; }

 private:
  PoolingKind kind_ = PoolingKind::kLast;
  std::optional<LSTMPoolHead> lstm_;
  std::optional<AttentionPoolHead> attention_;
};

}  // namespace layerpool
