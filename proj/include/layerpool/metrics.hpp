#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace layerpool {

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;  // [actual][predicted]

struct EvalResult {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  // Classes with neither actual nor predicted instances; their F1 is 0.
  std::vector<bool> empty_class;
  ConfusionMatrix confusion;

  std::size_t classes() const noexcept { return per_class_f1.size(); }
};

/// Accuracy, per-class F1 = 2PR/(P+R) and their unweighted mean. P, R and
/// F1 are 0 whenever their denominators are.
EvalResult score_confusion(const ConfusionMatrix& confusion);
EvalResult score_predictions(std::span<const std::int32_t> labels, std::span<const std::int32_t> predictions,
                             std::size_t classes);

}  // namespace layerpool
