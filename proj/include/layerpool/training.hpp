#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "layerpool/autodiff.hpp"
#include "layerpool/metrics.hpp"
#include "layerpool/model.hpp"

namespace layerpool {

struct TrainConfig {
  Real l2 = 1e-5;
  Real lr = 2e-5;
  Real dropout = 0.1;
  std::size_t epochs = 10;
  std::size_t folds = 10;
  std::uint64_t seed = 1;
  std::size_t batch_size = 32;
  // When set, 10% of each training split is held out and the epoch with the
  // best dev accuracy is the one evaluated.
  bool select_on_dev = false;
  Real dev_fraction = 0.1;

  /// Fine-tuning values for sentence-aspect tasks: 10 epochs, fixed.
  static TrainConfig absa();
  /// Fine-tuning values for inference tasks: 5 epochs, best dev epoch.
  static TrainConfig nli();
  /// From-scratch desk runs: absa() with lr raised to 1e-3.
  static TrainConfig desk_scale();

  void validate() const;
};

/// lambda * sum of squares over parameters with `decay` set (weights and
/// embeddings; biases and layer-norm parameters are skipped).
Var l2_penalty(Tape& tape, std::span<Parameter* const> params, Real lambda);
Var regularized_loss(const Var& probs, std::span<const std::int32_t> labels, std::span<Parameter* const> params,
                     Real lambda);

struct AdamOptions {
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

/// One bias-corrected Adam update of a single tensor. `step` counts from 1.
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::uint64_t step,
                 const AdamOptions& opt);

class Adam {
 public:
  explicit Adam(AdamOptions opt = {}) : opt_(opt) {}

  /// Applies one update from each parameter's `grad`.
  void step(std::span<Parameter* const> params);
  std::uint64_t steps() const noexcept { return t_; }
  const AdamOptions& options() const noexcept { return opt_; }

 private:
  AdamOptions opt_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified k-fold partition. Each class's indices are shuffled with the
/// seed, then dealt round-robin across folds, continuing from class to
/// class, so per-class and total fold sizes both differ by at most one.
std::vector<Fold> kfold_split(std::span<const std::int32_t> labels, std::size_t folds, std::uint64_t seed);

struct Example {
  PackedInput input;
  std::int32_t label = 0;
};

/// Called after every completed epoch (1-based).
using EpochHook = std::function<void(std::size_t epoch, Model& model)>;

struct TrainStats {
  std::vector<Real> epoch_loss;
  std::size_t best_epoch = 0;  // epoch whose weights the model ends with
};

/// One optimisation step on a batch: per-example tapes (run in parallel)
/// feed per-example gradient buffers that are summed in batch order, so
/// the result does not depend on the thread count. Returns the batch loss.
Real train_step(Model& model, Adam& adam, std::span<const Example> batch, Real l2, Rng& step_rng,
                bool parallel = true);

TrainStats train_model(Model& model, std::span<const Example> train, const TrainConfig& config,
                       const EpochHook& hook = {}, std::span<const Example> dev = {});

std::vector<std::int32_t> predict(Model& model, std::span<const Example> data);
EvalResult evaluate(Model& model, std::span<const Example> data);

struct FoldResult {
  EvalResult eval;
  TrainStats stats;
};

struct CVReport {
  std::vector<FoldResult> folds;
  std::size_t classes = 0;
  double mean_accuracy = 0.0, std_accuracy = 0.0;
  double mean_macro_f1 = 0.0, std_macro_f1 = 0.0;
  std::vector<double> mean_class_f1, std_class_f1;
};

/// Fold callback: fold index, the trained model and its held-out examples.
using FoldHook = std::function<void(std::size_t fold, Model& model, std::span<const std::size_t> test_idx)>;
/// Per-epoch callback inside a fold.
using FoldEpochHook = std::function<void(std::size_t fold, std::size_t epoch, Model& model,
                                         std::span<const std::size_t> test_idx)>;

std::uint64_t fold_seed(std::uint64_t master, std::size_t fold);

/// Trains a freshly initialised model per fold and aggregates the held-out
/// metrics (population standard deviation).
CVReport cross_validated_train(std::span<const Example> data, const ModelConfig& model_config,
                               const TrainConfig& config, const FoldHook& on_fold = {},
                               const FoldEpochHook& on_epoch = {});

/// Columns: fold,accuracy,macro_f1,f1_class0..f1_class{C-1},empty_classes.
/// Per-fold rows, then `mean` and `std` rows.
std::string cv_report_csv(const CVReport& report);

}  // namespace layerpool
