#include "layerpool/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>

#include "layerpool/io.hpp"

namespace layerpool {

// ---- configuration -------------------------------------------------------------

TrainConfig TrainConfig::absa() { return TrainConfig{}; }

TrainConfig TrainConfig::nli() {
  TrainConfig c;
  c.epochs = 5;
  c.select_on_dev = true;
  return c;
}

TrainConfig TrainConfig::desk_scale() {
  TrainConfig c = absa();
  c.lr = 1e-3;
  return c;
}

void TrainConfig::validate() const {
  if (!(l2 >= 0.0)) throw ContractError("l2 coefficient must be non-negative");
  if (!(lr > 0.0)) throw ContractError("learning rate must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("dropout must lie in [0, 1)");
  if (epochs < 1) throw ContractError("epochs must be at least 1");
  if (folds < 2) throw ContractError("cross-validation needs at least 2 folds");
  if (batch_size < 1) throw ContractError("batch size must be at least 1");
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw ContractError("dev fraction must lie in (0, 1)");
}

// ---- loss --------------------------------------------------------------------------

Var l2_penalty(Tape& tape, std::span<Parameter* const> params, Real lambda) {
  if (lambda < 0.0) throw ContractError("l2 coefficient must be non-negative");
  Var total = tape.constant(Tensor::scalar(0.0));
  for (Parameter* p : params)
    if (p->decay) total = add(total, sum_squares(tape.parameter(*p)));
  return scale(total, lambda);
}

Var regularized_loss(const Var& probs, std::span<const std::int32_t> labels, std::span<Parameter* const> params,
                     Real lambda) {
  Var ce = cross_entropy(probs, labels);
  if (lambda == 0.0) return ce;
  return add(ce, l2_penalty(probs.tape(), params, lambda));
}

// ---- Adam -------------------------------------------------------------------------

void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::uint64_t step,
                 const AdamOptions& opt) {
  if (grad.shape() != param.shape() || m.shape() != param.shape() || v.shape() != param.shape()) {
    throw ContractError("adam: shape mismatch between parameter " + to_string(param.shape()) + " and gradient " +
                        to_string(grad.shape()));
  }
  if (step == 0) throw ContractError("adam: step counts from 1");
  const Real t = static_cast<Real>(step);
  const Real c1 = 1.0 - std::pow(opt.beta1, t);
  const Real c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * grad[i];
    v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
    const Real m_hat = m[i] / c1;
    const Real v_hat = v[i] / c2;
    param[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
  }
}

void Adam::step(std::span<Parameter* const> params) {
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size()) throw ContractError("adam: parameter list changed between steps");
  ++t_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (p.grad.size() != p.value.size()) p.zero_grad();
    adam_update(p.value, p.grad, m_[i], v_[i], t_, opt_);
  }
}

// ---- folds ---------------------------------------------------------------------------

std::vector<Fold> kfold_split(std::span<const std::int32_t> labels, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw ContractError("k-fold split needs at least 2 folds");
  if (folds > labels.size()) {
    throw ContractError("cannot split " + std::to_string(labels.size()) + " items into " + std::to_string(folds) +
                        " folds");
  }
  std::map<std::int32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw IndexError("negative label at index " + std::to_string(i));
    by_class[labels[i]].push_back(i);
  }
  Rng rng(seed);
  std::vector<Fold> out(folds);
  std::size_t dealt = 0;
  for (auto& [label, idx] : by_class) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    for (std::size_t i : idx) out[dealt++ % folds].test.push_back(i);
  }
  for (Fold& f : out) {
    std::sort(f.test.begin(), f.test.end());
    std::vector<bool> held(labels.size(), false);
    for (std::size_t i : f.test) held[i] = true;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (!held[i]) f.train.push_back(i);
  }
  return out;
}

// ---- training ------------------------------------------------------------------------

Real train_step(Model& model, Adam& adam, std::span<const Example> batch, Real l2, Rng& step_rng, bool parallel) {
  if (batch.empty()) throw ContractError("empty training batch");
  const auto params = model.parameters();
  const auto batch_size = static_cast<long>(batch.size());
  const Real inv_b = 1.0 / static_cast<Real>(batch.size());
  std::vector<std::vector<Tensor>> sinks(batch.size(), std::vector<Tensor>(params.size()));
  std::vector<Real> losses(batch.size(), 0.0);
  std::exception_ptr failure;

#pragma omp parallel for schedule(dynamic) if (parallel)
  for (long b = 0; b < batch_size; ++b) {
    try {
      const auto i = static_cast<std::size_t>(b);
      Rng dropout_rng = step_rng.split(i);
      Tape tape(&sinks[i]);
      const Model::Output out = model.forward(tape, batch[i].input, &dropout_rng);
      const std::int32_t label = batch[i].label;
      const Var loss = scale(cross_entropy(out.probs, std::span<const std::int32_t>(&label, 1)), inv_b);
      losses[i] = loss.value().item();
      tape.backward(loss);
    } catch (...) {
#pragma omp critical(layerpool_train_step)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  Real total = 0.0;
  for (Real l : losses) total += l;
  for (Parameter* p : params) p->zero_grad();
  for (const auto& sink : sinks)
    for (std::size_t s = 0; s < params.size(); ++s)
      if (!sink[s].empty()) params[s]->grad += sink[s];
  if (l2 > 0.0) {
    Tape tape;
    const Var penalty = l2_penalty(tape, params, l2);
    total += penalty.value().item();
    tape.backward(penalty);
  }
  adam.step(params);
  return total;
}

TrainStats train_model(Model& model, std::span<const Example> train, const TrainConfig& config,
                       const EpochHook& hook, std::span<const Example> dev) {
  config.validate();
  if (train.empty()) throw ContractError("empty training set");
  Adam adam(AdamOptions{.lr = config.lr});
  const Rng root(config.seed);
  Rng order_rng = root.split(0x5eed);
  const Rng dropout_root = root.split(0xd809);

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainStats stats;
  double best_dev = -1.0;
  std::vector<Tensor> best_weights;
  std::uint64_t step = 0;
  std::vector<Example> batch;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
    Real epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(train[order[k]]);
      Rng step_rng = dropout_root.split(step++);
      epoch_loss += train_step(model, adam, batch, config.l2, step_rng);
      ++batches;
    }
    stats.epoch_loss.push_back(epoch_loss / static_cast<Real>(batches));
    if (!dev.empty()) {
      const double acc = evaluate(model, dev).accuracy;
      if (acc > best_dev) {
        best_dev = acc;
        best_weights = model.snapshot();
        stats.best_epoch = epoch;
      }
    } else {
      stats.best_epoch = epoch;
    }
    if (hook) hook(epoch, model);
  }
  if (!dev.empty()) model.restore(best_weights);
  return stats;
}

std::vector<std::int32_t> predict(Model& model, std::span<const Example> data) {
  std::vector<std::int32_t> out(data.size(), 0);
  const auto n = static_cast<long>(data.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      const auto probs = model.predict_proba(data[static_cast<std::size_t>(i)].input);
      out[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(argmax(probs));
    } catch (...) {
#pragma omp critical(layerpool_predict)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

EvalResult evaluate(Model& model, std::span<const Example> data) {
  if (data.empty()) throw ContractError("cannot evaluate on an empty dataset");
  std::vector<std::int32_t> labels;
  labels.reserve(data.size());
  for (const Example& ex : data) labels.push_back(ex.label);
  return score_predictions(labels, predict(model, data), model.config().classes);
}

// ---- cross-validation ------------------------------------------------------------------

std::uint64_t fold_seed(std::uint64_t master, std::size_t fold) {
  return Rng::mix(master ^ Rng::mix(0xf01dULL + fold));
}

namespace {

std::vector<Example> gather(std::span<const Example> data, std::span<const std::size_t> idx) {
  std::vector<Example> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data[i]);
  return out;
}

void mean_std(const std::vector<double>& xs, double& mean, double& stddev) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  stddev = std::sqrt(var / static_cast<double>(xs.size()));
}

}  // namespace

CVReport cross_validated_train(std::span<const Example> data, const ModelConfig& model_config,
                               const TrainConfig& config, const FoldHook& on_fold, const FoldEpochHook& on_epoch) {
  config.validate();
  std::vector<std::int32_t> labels;
  for (const Example& ex : data) labels.push_back(ex.label);
  const auto folds = kfold_split(labels, config.folds, config.seed);

  ModelConfig mc = model_config;
  mc.encoder.dropout = config.dropout;
  CVReport report;
  report.classes = mc.classes;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const std::uint64_t seed = fold_seed(config.seed, f);
    TrainConfig fold_config = config;
    fold_config.seed = seed;
    Model model(mc, seed);

    std::vector<Example> train_set, dev_set;
    if (config.select_on_dev) {
      std::vector<std::int32_t> train_labels;
      for (std::size_t i : folds[f].train) train_labels.push_back(labels[i]);
      const auto parts = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(1.0 / config.dev_fraction)));
      const auto inner = kfold_split(train_labels, std::min(parts, train_labels.size()), seed);
      std::vector<std::size_t> dev_idx, fit_idx;
      for (std::size_t k : inner[0].test) dev_idx.push_back(folds[f].train[k]);
      for (std::size_t k : inner[0].train) fit_idx.push_back(folds[f].train[k]);
      train_set = gather(data, fit_idx);
      dev_set = gather(data, dev_idx);
    } else {
      train_set = gather(data, folds[f].train);
    }
    const std::vector<Example> test_set = gather(data, folds[f].test);

    EpochHook hook;
    if (on_epoch) {
      hook = [&](std::size_t epoch, Model& m) { on_epoch(f, epoch, m, folds[f].test); };
    }
    FoldResult result;
    result.stats = train_model(model, train_set, fold_config, hook, dev_set);
    result.eval = evaluate(model, test_set);
    if (on_fold) on_fold(f, model, folds[f].test);
    report.folds.push_back(std::move(result));
  }

  std::vector<double> acc, f1;
  for (const FoldResult& r : report.folds) {
    acc.push_back(r.eval.accuracy);
    f1.push_back(r.eval.macro_f1);
  }
  mean_std(acc, report.mean_accuracy, report.std_accuracy);
  mean_std(f1, report.mean_macro_f1, report.std_macro_f1);
  report.mean_class_f1.assign(report.classes, 0.0);
  report.std_class_f1.assign(report.classes, 0.0);
  for (std::size_t c = 0; c < report.classes; ++c) {
    std::vector<double> xs;
    for (const FoldResult& r : report.folds) xs.push_back(r.eval.per_class_f1[c]);
    mean_std(xs, report.mean_class_f1[c], report.std_class_f1[c]);
  }
  return report;
}

std::string cv_report_csv(const CVReport& report) {
  std::string out = "fold,accuracy,macro_f1";
  for (std::size_t c = 0; c < report.classes; ++c) out += ",f1_class" + std::to_string(c);
  out += ",empty_classes\n";
  for (std::size_t f = 0; f < report.folds.size(); ++f) {
    const EvalResult& e = report.folds[f].eval;
    out += std::to_string(f) + "," + format_real(e.accuracy) + "," + format_real(e.macro_f1);
    for (double v : e.per_class_f1) out += "," + format_real(v);
    std::string empty;
    for (std::size_t c = 0; c < e.empty_class.size(); ++c) {
      if (!e.empty_class[c]) continue;
      if (!empty.empty()) empty += ';';
      empty += std::to_string(c);
    }
    out += "," + empty + "\n";
  }
  out += "mean," + format_real(report.mean_accuracy) + "," + format_real(report.mean_macro_f1);
  for (double v : report.mean_class_f1) out += "," + format_real(v);
  out += ",\nstd," + format_real(report.std_accuracy) + "," + format_real(report.std_macro_f1);
  for (double v : report.std_class_f1) out += "," + format_real(v);
  out += ",\n";
  return out;
}

}  // namespace layerpool
