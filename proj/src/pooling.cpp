#include "layerpool/pooling.hpp"

#include <cmath>

namespace layerpool {

namespace {

void require_trace(const CLSTrace& trace) {
  if (trace.empty()) throw ContractError("pooling over an empty CLS trace");
}

}  // namespace

PoolingKind parse_pooling(std::string_view token) {
  if (token == "last") return PoolingKind::kLast;
  if (token == "lstm") return PoolingKind::kLstm;
  if (token == "attention") return PoolingKind::kAttention;
  throw ContractError("unknown pooling '" + std::string(token) + "' (expected last|lstm|attention)");
}

std::string_view to_string(PoolingKind kind) {
  switch (kind) {
    case PoolingKind::kLast: return "last";
    case PoolingKind::kLstm: return "lstm";
    case PoolingKind::kAttention: return "attention";
  }
  return "last";
}

LSTMPoolHead LSTMPoolHead::create(std::size_t hidden, Rng& rng) {
  const Real bound = 1.0 / std::sqrt(static_cast<Real>(hidden));
  auto uniform = [&](const std::string& name) {
    Tensor t({hidden, 4 * hidden});
    for (Real& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * bound;
    return Parameter(name, std::move(t));
  };
  LSTMPoolHead head;
  head.input_w = uniform("pool.lstm.input_w");
  head.recurrent_w = uniform("pool.lstm.recurrent_w");
  Tensor b({4 * hidden});
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
  head.bias = Parameter("pool.lstm.bias", std::move(b), false);
  return head;
}

AttentionPoolHead AttentionPoolHead::create(std::size_t hidden, Rng& rng, Real stddev) {
  AttentionPoolHead head;
  Tensor w({hidden, hidden});
  for (Real& v : w.values()) v = rng.normal(0.0, stddev);
  Tensor q({1, hidden});
  for (Real& v : q.values()) v = rng.normal(0.0, stddev);
  head.projection = Parameter("pool.attention.w_h", std::move(w));
  head.query = Parameter("pool.attention.q", std::move(q));
  return head;
}

ClassifierHead ClassifierHead::create(std::size_t hidden, std::size_t classes, Rng& rng, Real stddev) {
  ClassifierHead head;
  Tensor w({hidden, classes});
  for (Real& v : w.values()) v = rng.normal(0.0, stddev);
  head.weight = Parameter("classifier.w_o", std::move(w));
  head.bias = Parameter("classifier.b_o", Tensor({classes}), false);
  return head;
}

Var last_cls_pool(const CLSTrace& trace) {
  require_trace(trace);
  return trace.layers.back();
}

Var lstm_pool(Tape& tape, const CLSTrace& trace, LSTMPoolHead& head) {
  require_trace(trace);
  const std::size_t h = head.hidden();
  const Var wi = tape.parameter(head.input_w);
  const Var wr = tape.parameter(head.recurrent_w);
  const Var b = tape.parameter(head.bias);
  Var hidden = tape.constant(Tensor({1, h}));
  Var cell = tape.constant(Tensor({1, h}));
  for (const Var& x : trace.layers) {
    const Var z = add_bias(add(matmul(x, wi), matmul(hidden, wr)), b);
    const Var in_gate = sigmoid(slice_cols(z, 0, h));
    const Var forget_gate = sigmoid(slice_cols(z, h, 2 * h));
    const Var candidate = tanh(slice_cols(z, 2 * h, 3 * h));
    const Var out_gate = sigmoid(slice_cols(z, 3 * h, 4 * h));
    cell = add(mul(forget_gate, cell), mul(in_gate, candidate));
    hidden = mul(out_gate, tanh(cell));
  }
  return hidden;
}

Var attention_pool(Tape& tape, const CLSTrace& trace, AttentionPoolHead& head, Tensor* weights_out) {
  require_trace(trace);
  const Var stacked = stack_rows(trace.layers);                             // [L x H]
  const Var scores = matmul(tape.parameter(head.query), transpose(stacked));  // [1 x L]
  const Var weights = softmax(scores);
  if (weights_out) *weights_out = weights.value();
  return matmul(matmul(weights, stacked), tape.parameter(head.projection));
}

Var classify(Tape& tape, const Var& pooled, ClassifierHead& head, Real dropout_rate, Rng* dropout_rng) {
  Var o = pooled;
  if (o.value().rank() != 2) o = stack_rows(std::span<const Var>(&pooled, 1));
  if (dropout_rng) o = dropout(o, dropout_rate, *dropout_rng);
  return softmax(add_bias(matmul(o, tape.parameter(head.weight)), tape.parameter(head.bias)));
}

std::size_t argmax(std::span<const Real> probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

PoolingHead::PoolingHead(PoolingKind kind, std::size_t hidden, Rng& rng) : kind_(kind) {
  if (kind == PoolingKind::kLstm) lstm_ = LSTMPoolHead::create(hidden, rng);
  if (kind == PoolingKind::kAttention) attention_ = AttentionPoolHead::create(hidden, rng);
}

Var PoolingHead::pool(Tape& tape, const CLSTrace& trace) {
  switch (kind_) {
    case PoolingKind::kLstm: return lstm_pool(tape, trace, *lstm_);
    case PoolingKind::kAttention: return attention_pool(tape, trace, *attention_);
    case PoolingKind::kLast: break;
  }
  return last_cls_pool(trace);
}

std::vector<Parameter*> PoolingHead::parameters() {
  if (lstm_) return lstm_->parameters();
  if (attention_) return attention_->parameters();
  return {};
}

}  // namespace layerpool
