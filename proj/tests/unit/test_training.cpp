#include "doctest.h"

#include <omp.h>

#include <cmath>
#include <set>

#include "layerpool/io.hpp"
#include "layerpool/training.hpp"
#include "oracles.hpp"

using namespace layerpool;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.layers = 2;
  c.hidden = 8;
  c.heads = 2;
  c.ffn = 16;
  c.vocab = 12;
  c.max_len = 8;
  return c;
}

EncoderConfig desk_encoder(std::size_t vocab) {
  EncoderConfig c;
  c.vocab = vocab;
  c.max_len = 16;
  return c;
}

Example toy_example(std::int32_t token, std::int32_t label) {
  Example ex;
  ex.input.token_ids = {2, token, 3, 3};
  ex.input.segment_ids = {0, 0, 0, 1};
  ex.input.mask = {1, 1, 1, 1};
  ex.label = label;
  return ex;
}

/// Tokens 4..9, two per class: separable by the token id alone.
std::vector<Example> separable_set(std::size_t n) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto token = static_cast<std::int32_t>(4 + i % 6);
    out.push_back(toy_example(token, (token - 4) / 2));
  }
  return out;
}

std::vector<Example> random_set(std::size_t n, std::size_t len, std::size_t vocab, Rng& rng) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.input.token_ids.push_back(2);
    for (std::size_t k = 1; k < len; ++k) ex.input.token_ids.push_back(static_cast<std::int32_t>(4 + rng.below(vocab - 4)));
    for (std::size_t k = 0; k < len; ++k) {
      ex.input.segment_ids.push_back(k >= len / 2 ? 1 : 0);
      ex.input.mask.push_back(1);
    }
    ex.label = static_cast<std::int32_t>(rng.below(3));
    out.push_back(ex);
  }
  return out;
}

}  // namespace

TEST_CASE("config presets and validation") {
  CHECK(TrainConfig::absa().lr == 2e-5);
  CHECK(TrainConfig::absa().epochs == 10);
  CHECK(TrainConfig::absa().l2 == 1e-5);
  CHECK(TrainConfig::absa().dropout == 0.1);
  CHECK(TrainConfig::absa().folds == 10);
  CHECK(TrainConfig::absa().batch_size == 32);
  CHECK(TrainConfig::nli().epochs == 5);
  CHECK(TrainConfig::nli().select_on_dev);
  CHECK(TrainConfig::desk_scale().lr == 1e-3);
  TrainConfig c;
  c.l2 = -1;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = {};
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = {};
  c.folds = 1;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = {};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
}

TEST_CASE("regularised loss examples") {
  Tape t;
  Parameter w("w", Tensor::scalar(2.0));
  Parameter b("b", Tensor::scalar(5.0), false);
  std::vector<Parameter*> params{&w, &b};
  const std::vector<std::int32_t> label{0};
  const Var perfect = t.constant(Tensor::matrix({{1.0, 0.0, 0.0}}));
  CHECK(regularized_loss(perfect, label, params, 1e-5).value().item() == doctest::Approx(4e-5).epsilon(1e-12));
  const Var probs = t.constant(Tensor::matrix({{0.2, 0.3, 0.5}}));
  CHECK(regularized_loss(probs, label, params, 0.0).value().item() == cross_entropy(probs, label).value().item());
  CHECK_THROWS_AS(l2_penalty(t, params, -1.0), ContractError);
}

TEST_CASE("adam first step equals minus the learning rate") {
  for (Real lr : {1e-3, 0.1, 2e-5}) {
    Tensor p = Tensor::scalar(0.5), g = Tensor::scalar(1.0), m = Tensor::scalar(0.0), v = Tensor::scalar(0.0);
    adam_update(p, g, m, v, 1, AdamOptions{.lr = lr});
    CHECK(std::abs((p.item() - 0.5) - (-lr / (1.0 + 1e-8))) < 1e-12);
  }
}

TEST_CASE("adam leaves parameters alone under zero gradient") {
  Parameter p("p", Tensor::matrix({{1.5, -2.0}}));
  Adam adam;
  for (int i = 0; i < 50; ++i) {
    p.zero_grad();
    std::vector<Parameter*> ps{&p};
    adam.step(ps);
  }
  CHECK(p.value == Tensor::matrix({{1.5, -2.0}}));
}

TEST_CASE("adam on the scalar quadratic") {
  Parameter p("theta", Tensor::scalar(1.0));
  Adam adam(AdamOptions{.lr = 0.1});
  std::vector<Parameter*> ps{&p};
  for (int i = 0; i < 200; ++i) {
    Tape t;
    const Var x = t.parameter(p);
    p.zero_grad();
    t.backward(mul(x, x));
    adam.step(ps);
  }
  CHECK(std::abs(p.value.item()) < 0.05);
  CHECK(std::abs(p.value.item() - oracle::adam_quadratic(1.0, 0.1, 200)) < 1e-12);
  Tensor q = Tensor::scalar(1.0), g({2}), m = Tensor::scalar(0.0), v = Tensor::scalar(0.0);
  CHECK_THROWS_AS(adam_update(q, g, m, v, 1, {}), ContractError);
}

TEST_CASE("kfold examples") {
  std::vector<std::int32_t> ten(10, 0);
  for (const Fold& f : kfold_split(ten, 10, 3)) CHECK(f.test.size() == 1);

  std::vector<std::int32_t> thirty;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 10; ++i) thirty.push_back(c);
  for (const Fold& f : kfold_split(thirty, 10, 4)) {
    REQUIRE(f.test.size() == 3);
    std::set<std::int32_t> classes;
    for (std::size_t i : f.test) classes.insert(thirty[i]);
    CHECK(classes.size() == 3);
  }
  CHECK_THROWS_AS(kfold_split(ten, 11, 1), ContractError);
  CHECK_THROWS_AS(kfold_split(ten, 1, 1), ContractError);
}

TEST_CASE("kfold partition and stratification laws on fuzzed inputs") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t classes = 1 + rng.below(4);
    const std::size_t n = 2 + rng.below(120);
    const std::size_t folds = 2 + rng.below(std::min<std::size_t>(n - 1, 12));
    std::vector<std::int32_t> labels(n);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng.below(classes));
    const std::uint64_t seed = rng();
    const auto split = kfold_split(labels, folds, seed);
    REQUIRE(split.size() == folds);
    std::vector<int> seen(n, 0);
    std::size_t min_size = n, max_size = 0;
    for (const Fold& f : split) {
      REQUIRE(f.train.size() + f.test.size() == n);
      std::vector<bool> in_test(n, false);
      for (std::size_t i : f.test) {
        ++seen[i];
        in_test[i] = true;
      }
      for (std::size_t i : f.train) REQUIRE(!in_test[i]);
      min_size = std::min(min_size, f.test.size());
      max_size = std::max(max_size, f.test.size());
    }
    for (int s : seen) REQUIRE(s == 1);
    REQUIRE(max_size - min_size <= 1);
    for (std::size_t c = 0; c < classes; ++c) {
      std::size_t lo = n, hi = 0;
      for (const Fold& f : split) {
        std::size_t k = 0;
        for (std::size_t i : f.test) k += labels[i] == static_cast<std::int32_t>(c);
        lo = std::min(lo, k);
        hi = std::max(hi, k);
      }
      REQUIRE(hi - lo <= 1);
    }
    const auto again = kfold_split(labels, folds, seed);
    for (std::size_t f = 0; f < folds; ++f) REQUIRE(again[f].test == split[f].test);
  }
}

TEST_CASE("metrics hand-derived cases") {
  const EvalResult r = score_confusion({{2, 0, 0}, {0, 1, 1}, {0, 0, 2}});
  CHECK(r.accuracy == doctest::Approx(5.0 / 6));
  CHECK(r.per_class_f1[0] == doctest::Approx(1.0));
  CHECK(r.per_class_f1[1] == doctest::Approx(2.0 / 3));
  CHECK(r.per_class_f1[2] == doctest::Approx(0.8));
  CHECK(r.macro_f1 == doctest::Approx(0.8222).epsilon(1e-4));

  std::vector<std::int32_t> labels, zeros(30, 0);
  for (int i = 0; i < 30; ++i) labels.push_back(i % 3);
  const EvalResult z = score_predictions(labels, zeros, 3);
  CHECK(z.accuracy == doctest::Approx(1.0 / 3));
  CHECK(z.macro_f1 == doctest::Approx(0.5 / 3));

  const EvalResult perfect = score_predictions(labels, labels, 3);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_f1 == 1.0);
}

TEST_CASE("empty classes score zero and are flagged") {
  const std::vector<std::int32_t> labels{0, 0, 1}, preds{0, 1, 1};
  const EvalResult r = score_predictions(labels, preds, 3);
  CHECK(r.empty_class == std::vector<bool>{false, false, true});
  CHECK(r.per_class_f1[2] == 0.0);
  CHECK(r.macro_f1 == doctest::Approx((2.0 / 3 + 2.0 / 3) / 3));
  CHECK_THROWS_AS(score_predictions(labels, std::vector<std::int32_t>{0, 3, 1}, 3), IndexError);
  CHECK_THROWS_AS(score_predictions({}, {}, 3), ContractError);
}

TEST_CASE("metrics agree with the independent oracle on fuzzed cases") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = 2 + static_cast<int>(rng.below(4));
    const std::size_t n = 1 + rng.below(60);
    std::vector<std::int32_t> labels(n), preds(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<std::int32_t>(rng.below(classes));
      preds[i] = rng.uniform() < 0.5 ? labels[i] : static_cast<std::int32_t>(rng.below(classes));
    }
    const EvalResult r = score_predictions(labels, preds, static_cast<std::size_t>(classes));
    const oracle::Scores o = oracle::score(std::vector<int>(labels.begin(), labels.end()),
                                           std::vector<int>(preds.begin(), preds.end()), classes);
    REQUIRE(r.accuracy == o.accuracy);
    REQUIRE(r.macro_f1 == o.macro_f1);
    REQUIRE(r.per_class_f1 == o.f1);
    std::size_t trace = 0;
    for (int c = 0; c < classes; ++c) trace += r.confusion[c][c];
    REQUIRE(r.accuracy == static_cast<double>(trace) / static_cast<double>(n));
  }
}

TEST_CASE("two-fold CV on a separable toy set is perfect") {
  ModelConfig mc;
  mc.encoder = tiny_encoder();
  TrainConfig tc = TrainConfig::desk_scale();
  tc.folds = 2;
  tc.epochs = 100;
  tc.dropout = 0.0;
  tc.lr = 1e-2;
  tc.batch_size = 8;
  const auto data = separable_set(60);
  const CVReport report = cross_validated_train(data, mc, tc);
  REQUIRE(report.folds.size() == 2);
  for (const FoldResult& f : report.folds) CHECK(f.eval.accuracy == 1.0);
  CHECK(report.mean_accuracy == 1.0);
  CHECK(report.std_accuracy == 0.0);
  CHECK(report.mean_macro_f1 == 1.0);
}

TEST_CASE("CV reruns are byte-identical and the CSV aggregates the folds") {
  ModelConfig mc;
  mc.encoder = tiny_encoder();
  TrainConfig tc = TrainConfig::desk_scale();
  tc.folds = 3;
  tc.epochs = 2;
  tc.batch_size = 4;
  Rng rng(7);
  const auto data = random_set(30, 6, 12, rng);
  const std::string a = cv_report_csv(cross_validated_train(data, mc, tc));
  const std::string b = cv_report_csv(cross_validated_train(data, mc, tc));
  CHECK(a == b);
  tc.seed = 2;
  CHECK(cv_report_csv(cross_validated_train(data, mc, tc)) != a);

  const auto lines = split(a, '\n');
  REQUIRE(lines.size() >= 6);
  CHECK(lines[0] == "fold,accuracy,macro_f1,f1_class0,f1_class1,f1_class2,empty_classes");
  for (std::size_t col = 1; col <= 5; ++col) {
    double mean = 0.0;
    for (std::size_t f = 1; f <= 3; ++f) mean += parse_real(split(lines[f], ',')[col]) / 3.0;
    CHECK(std::abs(mean - parse_real(split(lines[4], ',')[col])) < 1e-12);
  }
  CHECK(split(lines[4], ',')[0] == "mean");
  CHECK(split(lines[5], ',')[0] == "std");
}

TEST_CASE("single-class data trains and scores") {
  ModelConfig mc;
  mc.encoder = tiny_encoder();
  TrainConfig tc = TrainConfig::desk_scale();
  tc.folds = 2;
  tc.epochs = 1;
  std::vector<Example> data;
  for (int i = 0; i < 8; ++i) data.push_back(toy_example(4 + i % 3, 1));
  const CVReport report = cross_validated_train(data, mc, tc);
  for (const FoldResult& f : report.folds) {
    for (std::size_t c = 0; c < 3; ++c) {
      std::size_t touched = 0;
      for (std::size_t k = 0; k < 3; ++k) touched += f.eval.confusion[c][k] + f.eval.confusion[k][c];
      CHECK(f.eval.empty_class[c] == (touched == 0));
    }
    CHECK(!f.eval.empty_class[1]);
    CHECK(f.eval.per_class_f1[0] == 0.0);
  }
}

TEST_CASE("NLI-style runs keep the best dev epoch") {
  ModelConfig mc;
  mc.encoder = tiny_encoder();
  TrainConfig tc = TrainConfig::nli();
  tc.lr = 1e-2;
  tc.folds = 2;
  tc.epochs = 3;
  tc.batch_size = 8;
  const CVReport report = cross_validated_train(separable_set(60), mc, tc);
  for (const FoldResult& f : report.folds) {
    CHECK(f.stats.best_epoch >= 1);
    CHECK(f.stats.best_epoch <= 3);
  }
}

TEST_CASE("training steps do not depend on the thread count") {
  Rng rng(8);
  const auto batch = random_set(12, 7, 12, rng);
  ModelConfig mc;
  mc.encoder = tiny_encoder();
  mc.pooling = PoolingKind::kLstm;
  auto run = [&](int threads, bool parallel) {
    const int saved = omp_get_max_threads();
    omp_set_num_threads(threads);
    Model model(mc, 5);
    Adam adam(AdamOptions{.lr = 1e-3});
    for (std::uint64_t s = 0; s < 3; ++s) {
      Rng step(s);
      train_step(model, adam, batch, 1e-5, step, parallel);
    }
    omp_set_num_threads(saved);
    return model.snapshot();
  };
  const auto serial = run(1, false);
  CHECK(run(1, true) == serial);
  CHECK(run(3, true) == serial);
}

TEST_CASE("loss on a fixed batch decreases over the first steps") {
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(200 + seed);
    const auto batch = random_set(8, 10, 30, rng);
    ModelConfig mc;
    mc.encoder = desk_encoder(30);
    mc.encoder.dropout = 0.0;
    mc.pooling = static_cast<PoolingKind>(seed % 3);
    Model model(mc, seed);
    Adam adam(AdamOptions{.lr = 1e-3});
    std::vector<Real> losses;
    for (int s = 0; s < 6; ++s) {
      Rng step(s);
      losses.push_back(train_step(model, adam, batch, 1e-5, step));
    }
    bool monotone = true;
    for (std::size_t i = 1; i < losses.size(); ++i) monotone = monotone && losses[i] <= losses[i - 1];
    ok += monotone;
  }
  CHECK(ok >= 18);
}

TEST_CASE("eval predictions do not depend on batch composition or padding") {
  Rng rng(9);
  const auto data = random_set(10, 6, 12, rng);
  ModelConfig mc;
  mc.encoder = tiny_encoder();
  mc.pooling = PoolingKind::kAttention;
  Model model(mc, 3);
  const auto all = predict(model, data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto probs = model.predict_proba(data[i].input);
    CHECK(all[i] == static_cast<std::int32_t>(argmax(probs)));
    PackedInput padded = data[i].input;
    padded.token_ids.push_back(0);
    padded.segment_ids.push_back(0);
    padded.mask.push_back(0);
    const auto padded_probs = model.predict_proba(padded);
    for (std::size_t c = 0; c < probs.size(); ++c) CHECK(std::abs(probs[c] - padded_probs[c]) < 1e-6);
    const std::vector<Example> one{data[i]};
    CHECK(predict(model, one)[0] == all[i]);
  }
  CHECK_THROWS_AS(evaluate(model, std::span<const Example>{}), ContractError);
}
