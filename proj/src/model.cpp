#include "layerpool/model.hpp"

namespace layerpool {

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  if (config_.classes < 2) throw ContractError("a classifier needs at least two classes");
  const Rng root(seed);
  Rng encoder_rng = root.split(1);
  Rng pooling_rng = root.split(2);
  Rng classifier_rng = root.split(3);
  encoder_ = Encoder(config_.encoder, encoder_rng);
  pooling_ = PoolingHead(config_.pooling, config_.encoder.hidden, pooling_rng);
  classifier_ = ClassifierHead::create(config_.encoder.hidden, config_.classes, classifier_rng,
                                       config_.encoder.init_stddev);
  std::size_t slot = 0;
  for (Parameter* p : parameters()) p->slot = slot++;
}

Model::Output Model::forward(Tape& tape, const PackedInput& input, Rng* dropout_rng) {
  EncoderOutput enc = encoder_.encode(tape, trim_padding(input), dropout_rng);
  Output out;
  out.pooled = pooling_.pool(tape, enc.trace);
  out.probs = classify(tape, out.pooled, classifier_, config_.encoder.dropout, dropout_rng);
  out.trace = std::move(enc.trace);
  return out;
}

std::vector<Real> Model::predict_proba(const PackedInput& input) {
  Tape tape;
  const Output out = forward(tape, input, nullptr);
  const auto v = out.probs.value().values();
  return {v.begin(), v.end()};
}

std::vector<Tensor> Model::trace_values(const PackedInput& input) {
  Tape tape;
  return encoder_.encode(tape, trim_padding(input), nullptr).trace.values();
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out = encoder_.parameters();
  for (Parameter* p : pooling_.parameters()) out.push_back(p);
  for (Parameter* p : classifier_.parameters()) out.push_back(p);
  return out;
}

std::vector<Tensor> Model::snapshot() {
  std::vector<Tensor> out;
  for (Parameter* p : parameters()) out.push_back(p->value);
  return out;
}

void Model::restore(const std::vector<Tensor>& values) {
  const auto params = parameters();
  if (values.size() != params.size()) throw ContractError("snapshot does not match model parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].shape() != params[i]->value.shape()) {
      throw ShapeError("snapshot entry " + params[i]->name + " has shape " + to_string(values[i].shape()));
    }
    params[i]->value = values[i];
  }
}

}  // namespace layerpool
