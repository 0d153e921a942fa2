#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layerpool/encoder.hpp"
#include "layerpool/pooling.hpp"

namespace layerpool {

struct ModelConfig {
  EncoderConfig encoder;
  PoolingKind pooling = PoolingKind::kLast;
  std::size_t classes = 3;
};

/// Encoder -> CLS trace -> pooling head -> classifier.
class Model {
 public:
  struct Output {
    Var probs;  // [1 x C]
    Var pooled;
    CLSTrace trace;
  };

  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }

  /// Trailing padding is trimmed before encoding. Null `dropout_rng` is eval mode.
  Output forward(Tape& tape, const PackedInput& input, Rng* dropout_rng);

  /// Eval-mode class probabilities.
  std::vector<Real> predict_proba(const PackedInput& input);
  /// Eval-mode CLS vectors of every layer.
  std::vector<Tensor> trace_values(const PackedInput& input);

  /// Stable order; `Parameter::slot` equals the position in this list.
  std::vector<Parameter*> parameters();
  std::vector<Tensor> snapshot();
  void restore(const std::vector<Tensor>& values);

  Encoder& encoder() noexcept { return encoder_; }
  PoolingHead& pooling() noexcept { return pooling_; }
  ClassifierHead& classifier() noexcept { return classifier_; }

 private:
  ModelConfig config_;
  Encoder encoder_;
  PoolingHead pooling_;
  ClassifierHead classifier_;
};

}  // namespace layerpool
