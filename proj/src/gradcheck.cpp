#include "layerpool/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "layerpool/model.hpp"
#include "layerpool/training.hpp"

namespace layerpool {

GradCheckResult check_gradients(const std::string& name, std::span<Parameter* const> params,
                                const std::function<Var(Tape&)>& loss_fn, const GradCheckOptions& opt) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss_fn(tape));
  }
  auto evaluate = [&] {
    Tape tape;
    return loss_fn(tape).value().item();
  };

  GradCheckResult r{name, 0.0, 0, true};
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const Real saved = p->value[i];
      p->value[i] = saved + opt.step;
      const Real up = evaluate();
      p->value[i] = saved - opt.step;
      const Real down = evaluate();
      p->value[i] = saved;
      const Real numeric = (up - down) / (2.0 * opt.step);
      const Real analytic = p->grad[i];
      const Real denom = std::max({std::abs(analytic), std::abs(numeric), opt.floor});
      const Real rel = std::abs(analytic - numeric) / denom;
      r.max_rel_error = std::max(r.max_rel_error, rel);
      ++r.checked;
    }
  }
  r.passed = r.max_rel_error < opt.tolerance && std::isfinite(r.max_rel_error);
  return r;
}

namespace {

// Small read-out weights keep the loss near 1 so rounding noise in the
// finite differences stays well below the comparison floor.
constexpr Real kLossWeightScale = 0.1;

Tensor random_tensor(Shape shape, Rng& rng, Real stddev = 1.0) {
  Tensor t(std::move(shape));
  for (Real& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

EncoderConfig tiny_encoder(std::size_t layers) {
  EncoderConfig c;
  c.layers = layers;
  c.hidden = 8;
  c.heads = 2;
  c.ffn = 16;
  c.vocab = 12;
  c.max_len = 8;
  c.dropout = 0.1;
  c.init_stddev = 0.5;  // large enough that every path carries signal
  return c;
}

PackedInput random_input(std::size_t len, std::size_t pad, std::size_t vocab, Rng& rng) {
  PackedInput in;
  for (std::size_t i = 0; i < len + pad; ++i) {
    in.token_ids.push_back(static_cast<std::int32_t>(rng.below(vocab)));
    in.segment_ids.push_back(i * 2 >= len ? 1 : 0);
    in.mask.push_back(i < len ? 1 : 0);
  }
  return in;
}

Var weighted_sum(Tape& tape, const Var& x, const Tensor& weights) { return sum(mul(x, tape.constant(weights))); }

std::vector<Parameter> trace_parameters(std::size_t layers, std::size_t hidden, Rng& rng) {
  std::vector<Parameter> out;
  for (std::size_t l = 0; l < layers; ++l)
    out.emplace_back("trace" + std::to_string(l), random_tensor({1, hidden}, rng));
  return out;
}

CLSTrace trace_on(Tape& tape, std::vector<Parameter>& vectors) {
  CLSTrace trace;
  for (Parameter& p : vectors) trace.layers.push_back(tape.parameter(p));
  return trace;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(std::size_t seeds, const GradCheckOptions& opt) {
  std::vector<GradCheckResult> results;
  for (std::size_t s = 0; s < seeds; ++s) {
    const std::string tag = "[seed " + std::to_string(s) + "]";
    Rng rng(0x9d5eed00ULL + s);

    {  // embeddings + layer norm + dropout
      Rng init = rng.split(1);
      Encoder enc(tiny_encoder(1), init);
      const PackedInput input = random_input(5, 1, 12, rng);
      const Tensor w = random_tensor({6, 8}, rng, kLossWeightScale);
      const std::uint64_t drop_seed = rng();
      std::vector<Parameter*> params{&enc.token_table(), &enc.position_table(), &enc.segment_table()};
      results.push_back(check_gradients("embed " + tag, params, [&](Tape& t) {
        Rng drop(drop_seed);
        return weighted_sum(t, enc.embed(t, input, &drop), w);
      }, opt));
    }
    {  // one attention block, including the input and a padded key
      Rng init = rng.split(2);
      Encoder enc(tiny_encoder(1), init);
      Parameter x("x", random_tensor({5, 8}, rng));
      const std::vector<std::uint8_t> mask{1, 1, 1, 1, 0};
      const Tensor w = random_tensor({5, 8}, rng, kLossWeightScale);
      const std::uint64_t drop_seed = rng();
      std::vector<Parameter*> params = enc.parameters();
      params.erase(params.begin(), params.begin() + 5);  // embeddings are unused here
      params.push_back(&x);
      results.push_back(check_gradients("self_attention_block " + tag, params, [&](Tape& t) {
        Rng drop(drop_seed);
        return weighted_sum(t, enc.self_attention_block(t, t.parameter(x), mask, 0, &drop), w);
      }, opt));
    }
    {  // full encoder through its CLS trace
      Rng init = rng.split(3);
      Encoder enc(tiny_encoder(2), init);
      const PackedInput input = random_input(6, 0, 12, rng);
      const Tensor w_final = random_tensor({6, 8}, rng, kLossWeightScale);
      const Tensor w_trace = random_tensor({1, 8}, rng, kLossWeightScale);
      auto params = enc.parameters();
      results.push_back(check_gradients("encode " + tag, params, [&](Tape& t) {
        const EncoderOutput out = enc.encode(t, input, nullptr);
        Var loss = weighted_sum(t, out.final, w_final);
        for (const Var& v : out.trace.layers) loss = add(loss, weighted_sum(t, v, w_trace));
        return loss;
      }, opt));
    }
    {  // LSTM pooling
      Rng init = rng.split(4);
      const std::size_t layers = 2 + s % 4;
      LSTMPoolHead head = LSTMPoolHead::create(6, init);
      auto vectors = trace_parameters(layers, 6, rng);
      const Tensor w = random_tensor({1, 6}, rng, kLossWeightScale);
      std::vector<Parameter*> params = head.parameters();
      for (Parameter& p : vectors) params.push_back(&p);
      results.push_back(check_gradients("lstm_pool " + tag, params, [&](Tape& t) {
        return weighted_sum(t, lstm_pool(t, trace_on(t, vectors), head), w);
      }, opt));
    }
    {  // attention pooling
      Rng init = rng.split(5);
      const std::size_t layers = 2 + s % 4;
      AttentionPoolHead head = AttentionPoolHead::create(6, init, 0.5);
      auto vectors = trace_parameters(layers, 6, rng);
      const Tensor w = random_tensor({1, 6}, rng, kLossWeightScale);
      std::vector<Parameter*> params = head.parameters();
      for (Parameter& p : vectors) params.push_back(&p);
      results.push_back(check_gradients("attention_pool " + tag, params, [&](Tape& t) {
        return weighted_sum(t, attention_pool(t, trace_on(t, vectors), head), w);
      }, opt));
    }
    {  // classifier with dropout on the pooled vector
      Rng init = rng.split(6);
      ClassifierHead head = ClassifierHead::create(6, 3, init, 0.5);
      Parameter pooled("o", random_tensor({1, 6}, rng));
      const std::int32_t label = static_cast<std::int32_t>(rng.below(3));
      const std::uint64_t drop_seed = rng();
      std::vector<Parameter*> params = head.parameters();
      params.push_back(&pooled);
      results.push_back(check_gradients("classify " + tag, params, [&](Tape& t) {
        Rng drop(drop_seed);
        const Var y = classify(t, t.parameter(pooled), head, 0.1, &drop);
        return cross_entropy(y, std::span<const std::int32_t>(&label, 1));
      }, opt));
    }
    {  // regularised loss through a whole model, cycling the pooling head
      ModelConfig mc;
      mc.encoder = tiny_encoder(2);
      mc.encoder.init_stddev = 0.3;
      mc.pooling = static_cast<PoolingKind>(s % 3);
      mc.classes = 3;
      Model model(mc, rng());
      const std::vector<PackedInput> inputs{random_input(5, 2, 12, rng), random_input(4, 0, 12, rng)};
      const std::vector<std::int32_t> labels{static_cast<std::int32_t>(rng.below(3)),
                                             static_cast<std::int32_t>(rng.below(3))};
      const std::uint64_t drop_seed = rng();
      auto params = model.parameters();
      results.push_back(check_gradients(
          "regularized_loss/" + std::string(to_string(mc.pooling)) + " " + tag, params, [&](Tape& t) {
            Rng drop(drop_seed);
            std::vector<Var> rows;
            for (const PackedInput& in : inputs) rows.push_back(model.forward(t, in, &drop).probs);
            return regularized_loss(stack_rows(rows), labels, params, 1e-2);
          }, opt));
    }
  }
  return results;
}

}  // namespace layerpool
