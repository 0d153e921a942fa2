#include "layerpool/metrics.hpp"

#include <string>

#include "layerpool/tensor.hpp"

namespace layerpool {

EvalResult score_confusion(const ConfusionMatrix& confusion) {
  const std::size_t c = confusion.size();
  if (c == 0) throw ContractError("empty confusion matrix");
  for (const auto& row : confusion)
    if (row.size() != c) throw ShapeError("confusion matrix must be square");

  EvalResult r;
  r.confusion = confusion;
  r.per_class_f1.assign(c, 0.0);
  r.empty_class.assign(c, false);
  std::size_t total = 0, correct = 0;
  std::vector<std::size_t> actual(c, 0), predicted(c, 0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      total += confusion[i][j];
      actual[i] += confusion[i][j];
      predicted[j] += confusion[i][j];
      if (i == j) correct += confusion[i][j];
    }
  if (total == 0) throw ContractError("cannot score an empty evaluation set");
  r.accuracy = static_cast<double>(correct) / static_cast<double>(total);

  double f1_sum = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    const auto tp = static_cast<double>(confusion[k][k]);
    const double precision = predicted[k] ? tp / static_cast<double>(predicted[k]) : 0.0;
    const double recall = actual[k] ? tp / static_cast<double>(actual[k]) : 0.0;
    r.empty_class[k] = actual[k] == 0 && predicted[k] == 0;
    r.per_class_f1[k] = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    f1_sum += r.per_class_f1[k];
  }
  r.macro_f1 = f1_sum / static_cast<double>(c);
  return r;
}

EvalResult score_predictions(std::span<const std::int32_t> labels, std::span<const std::int32_t> predictions,
                             std::size_t classes) {
  if (labels.size() != predictions.size()) throw ShapeError("labels and predictions differ in length");
  if (labels.empty()) throw ContractError("cannot score an empty evaluation set");
  ConfusionMatrix m(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto a = static_cast<std::size_t>(labels[i]);
    const auto p = static_cast<std::size_t>(predictions[i]);
    if (labels[i] < 0 || a >= classes || predictions[i] < 0 || p >= classes) {
      throw IndexError("class index out of range at position " + std::to_string(i));
    }
    ++m[a][p];
  }
  return score_confusion(m);
}

}  // namespace layerpool
