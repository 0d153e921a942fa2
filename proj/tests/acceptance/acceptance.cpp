// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <map>
#include <string>

#include "../unit/oracles.hpp"
#include "layerpool/analysis.hpp"
#include "layerpool/data.hpp"
#include "layerpool/gradcheck.hpp"
#include "layerpool/io.hpp"
#include "layerpool/training.hpp"

using namespace layerpool;

namespace {

// Fixed seeds for the learning run: data, split and model.
constexpr std::uint64_t kDataSeed = 7;
constexpr std::uint64_t kSplitSeed = 3;
constexpr std::uint64_t kModelSeed = 5;

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

oracle::Mat random_trace(std::size_t layers, std::size_t h, Rng& rng) {
  oracle::Mat m(layers, oracle::Vec(h));
  for (auto& row : m)
    for (double& v : row) v = rng.normal(0.0, 1.0);
  return m;
}

CLSTrace on_tape(Tape& t, const oracle::Mat& vectors) {
  CLSTrace trace;
  for (const auto& v : vectors) trace.layers.push_back(t.constant(Tensor::row(v)));
  return trace;
}

oracle::Mat as_mat(const Tensor& t) {
  oracle::Mat m(t.rows(), oracle::Vec(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

oracle::LstmWeights split_gates(LSTMPoolHead& head) {
  const std::size_t h = head.hidden();
  oracle::LstmWeights w;
  w.wi.assign(4, oracle::Mat(h, oracle::Vec(h)));
  w.wr.assign(4, oracle::Mat(h, oracle::Vec(h)));
  w.b.assign(4, oracle::Vec(h));
  for (std::size_t g = 0; g < 4; ++g)
    for (std::size_t j = 0; j < h; ++j) {
      w.b[g][j] = head.bias.value[g * h + j];
      for (std::size_t k = 0; k < h; ++k) {
        w.wi[g][k][j] = head.input_w.value.at(k, g * h + j);
        w.wr[g][k][j] = head.recurrent_w.value.at(k, g * h + j);
      }
    }
  return w;
}

double max_diff(std::span<const Real> a, const oracle::Vec& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

void gradient_suite() {
  const double t0 = cpu_seconds();
  const auto results = run_gradient_suite(20);
  const double cpu = cpu_seconds() - t0;
  std::map<std::string, std::size_t> seeds_per_check;
  double worst = 0.0;
  std::string worst_name;
  bool all = true;
  for (const auto& r : results) {
    seeds_per_check[r.name.substr(0, r.name.find(" ["))]++;
    all = all && r.passed;
    if (r.max_rel_error > worst) worst = r.max_rel_error, worst_name = r.name;
  }
  std::size_t min_seeds = results.size();
  for (const auto& [name, n] : seeds_per_check) min_seeds = std::min(min_seeds, n);
  const bool enough = seeds_per_check.count("embed") && seeds_per_check.count("self_attention_block") &&
                      seeds_per_check.count("encode") && seeds_per_check.count("lstm_pool") &&
                      seeds_per_check.count("attention_pool") && seeds_per_check.count("classify");
  std::size_t reg = 0;
  for (const auto& [name, n] : seeds_per_check) reg += name.rfind("regularized_loss", 0) == 0 ? n : 0;
  report(1, all && enough && min_seeds >= 6 && reg >= 20 && cpu < 60.0,
         std::to_string(results.size()) + " checks, max rel err " + fmt("%.2e", worst) + " (" + worst_name +
             "), cpu " + fmt("%.1fs", cpu));
}

void pooling_oracles() {
  Rng rng(2024);
  double att = 0.0, lstm = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t layers = 1 + rng.below(8), h = 1 + rng.below(16);
    Rng init = rng.split(trial);
    AttentionPoolHead a = AttentionPoolHead::create(h, init, 0.7);
    LSTMPoolHead l = LSTMPoolHead::create(h, init);
    const oracle::Mat trace = random_trace(layers, h, rng);
    Tape t;
    const Tensor oa = attention_pool(t, on_tape(t, trace), a).value();
    att = std::max(att, max_diff(oa.values(), oracle::attention_pool(trace, as_mat(a.query.value)[0],
                                                                     as_mat(a.projection.value))));
    const Tensor ol = lstm_pool(t, on_tape(t, trace), l).value();
    lstm = std::max(lstm, max_diff(ol.values(), oracle::lstm_pool(split_gates(l), trace)));
  }
  AttentionPoolHead worked;
  worked.projection = Parameter("w", Tensor::identity(2));
  worked.query = Parameter("q", Tensor::matrix({{1, 0}}));
  Tape t;
  const Tensor o = attention_pool(t, on_tape(t, {{0, 4}, {std::log(3.0), 0}}), worked).value();
  const double ex = std::max(std::abs(o[0] - 0.75 * std::log(3.0)), std::abs(o[1] - 1.0));
  report(2, att < 1e-10 && lstm < 1e-10 && ex < 1e-10,
         "attention vs oracle " + fmt("%.1e", att) + ", worked example " + fmt("%.1e", ex) + ", lstm vs oracle " +
             fmt("%.1e", lstm));
}

void invariances() {
  Rng rng(77);
  double perm = 0.0;
  int argmax_ok = 0, trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    const std::size_t layers = 2 + rng.below(7), h = 1 + rng.below(16);
    Rng init = rng.split(trial);
    AttentionPoolHead head = AttentionPoolHead::create(h, init, 0.7);
    oracle::Mat trace = random_trace(layers, h, rng);
    Tape t;
    Tensor w0;
    const Tensor a = attention_pool(t, on_tape(t, trace), head, &w0).value();
    const std::size_t best = argmax(w0.values());
    bool same = true;
    const Tensor q = head.query.value;
    for (Real c : {0.05, 0.5, 2.0, 40.0}) {
      for (std::size_t j = 0; j < h; ++j) head.query.value[j] = c * q[j];
      Tensor w;
      attention_pool(t, on_tape(t, trace), head, &w);
      same = same && argmax(w.values()) == best;
    }
    argmax_ok += same;
    head.query.value = q;
    std::shuffle(trace.begin(), trace.end(), rng);
    perm = std::max(perm, max_abs_diff(a, attention_pool(t, on_tape(t, trace), head).value()));
  }
  int sensitive = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(500 + seed);
    LSTMPoolHead head = LSTMPoolHead::create(8, r);
    oracle::Mat trace = random_trace(2 + r.below(6), 8, r);
    Tape t;
    const Tensor fwd = lstm_pool(t, on_tape(t, trace), head).value();
    std::reverse(trace.begin(), trace.end());
    sensitive += max_abs_diff(fwd, lstm_pool(t, on_tape(t, trace), head).value()) > 1e-8;
  }
  report(3, perm < 1e-10 && argmax_ok == trials && sensitive >= 19,
         "permutation max diff " + fmt("%.1e", perm) + ", argmax kept " + std::to_string(argmax_ok) + "/" +
             std::to_string(trials) + ", lstm order-sensitive " + std::to_string(sensitive) + "/20");
}

struct LearningRun {
  std::vector<LayerDump> dumps;  // LSTM head, epochs 1 and 6, layers 1..L
};

LearningRun learning() {
  const auto raw = synth_generate(3000, 3, kDataSeed);
  const Vocab vocab = build_vocab(raw);
  std::vector<Example> data;
  std::vector<std::int32_t> labels;
  for (const auto& ex : raw) {
    data.push_back(Example{pack_pair(ex, vocab, 64), ex.label});
    labels.push_back(ex.label);
  }
  const auto folds = kfold_split(labels, 5, kSplitSeed);
  std::vector<Example> train, test;
  std::vector<PairExample> raw_train, raw_test;
  std::vector<std::string> test_ids;
  for (std::size_t i : folds[0].train) train.push_back(data[i]), raw_train.push_back(raw[i]);
  for (std::size_t i : folds[0].test) {
    test.push_back(data[i]);
    raw_test.push_back(raw[i]);
    test_ids.push_back(std::to_string(i));
  }

  UnigramBaseline baseline;
  baseline.fit(raw_train, 3);
  const double base_acc = baseline.accuracy(raw_test);

  TrainConfig tc = TrainConfig::desk_scale();
  tc.dropout = 0.0;
  LearningRun run;
  std::string detail;
  bool pass = base_acc <= 0.55;
  for (PoolingKind kind : {PoolingKind::kLast, PoolingKind::kLstm, PoolingKind::kAttention}) {
    ModelConfig mc;
    mc.encoder.vocab = vocab.size();
    mc.encoder.dropout = tc.dropout;
    mc.pooling = kind;
    Model model(mc, kModelSeed);
    std::size_t reached = 0;
    double best = 0.0;
    const double t0 = cpu_seconds();
    const std::vector<std::size_t> all_layers{1, 2, 3, 4};
    train_model(model, train, tc, [&](std::size_t epoch, Model& m) {
      const double acc = evaluate(m, test).accuracy;
      best = std::max(best, acc);
      if (acc >= 0.9 && reached == 0) reached = epoch;
      if (kind == PoolingKind::kLstm && (epoch == 1 || epoch == 6)) {
        auto d = collect_layer_dumps(m, test, test_ids, epoch, all_layers);
        run.dumps.insert(run.dumps.end(), d.begin(), d.end());
      }
    });
    const double cpu = cpu_seconds() - t0;
    pass = pass && reached > 0 && cpu < 300.0;
    detail += std::string(to_string(kind)) + " best " + fmt("%.3f", best) +
              (reached ? " (>=0.9 at epoch " + std::to_string(reached) + ")" : " (never >=0.9)") + " cpu " +
              fmt("%.0fs", cpu) + "; ";
  }
  report(4, pass, detail + "unigram baseline " + fmt("%.3f", base_acc));
  return run;
}

void cluster_tightening(const LearningRun& run) {
  std::map<std::pair<std::size_t, std::size_t>, double> score;
  for (const LayerDump& d : run.dumps) score[{d.epoch, d.layer}] = cluster_score(pca_project(d));
  if (score.size() != 8) {
    report(5, false, "expected 8 dumps, got " + std::to_string(score.size()));
    return;
  }
  const double e1 = score[{1, 4}], e6 = score[{6, 4}], l1 = score[{6, 1}];
  report(5, e6 < e1 && e6 <= l1,
         "final layer epoch1 " + fmt("%.3f", e1) + " -> epoch6 " + fmt("%.3f", e6) + ", epoch6 layer1 " +
             fmt("%.3f", l1));
}

void protocol() {
  const auto raw = synth_generate(300, 3, 5);
  const Vocab vocab = build_vocab(raw);
  std::vector<Example> data;
  std::vector<std::int32_t> labels;
  for (const auto& ex : raw) {
    data.push_back(Example{pack_pair(ex, vocab, 64), ex.label});
    labels.push_back(ex.label);
  }
  TrainConfig tc = TrainConfig::desk_scale();
  tc.epochs = 1;

  bool laws = true;
  const auto folds = kfold_split(labels, 10, tc.seed);
  std::vector<int> seen(labels.size(), 0);
  for (const Fold& f : folds) {
    laws = laws && f.test.size() == 30 && f.train.size() == 270;
    std::vector<int> per_class(3, 0);
    for (std::size_t i : f.test) ++seen[i], ++per_class[labels[i]];
    laws = laws && per_class == std::vector<int>{10, 10, 10};
  }
  laws = laws && std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; });

  ModelConfig mc;
  mc.encoder.vocab = vocab.size();
  mc.pooling = PoolingKind::kLstm;
  const std::string csv = cv_report_csv(cross_validated_train(data, mc, tc));
  const std::string again = cv_report_csv(cross_validated_train(data, mc, tc));

  const auto lines = split(csv, '\n');
  double agg_err = 0.0;
  for (std::size_t col = 1; col <= 5; ++col) {
    double mean = 0.0;
    for (std::size_t f = 1; f <= 10; ++f) mean += parse_real(split(lines[f], ',')[col]);
    agg_err = std::max(agg_err, std::abs(mean / 10.0 - parse_real(split(lines[11], ',')[col])));
  }
  report(6, laws && agg_err < 1e-12 && csv == again,
         std::string("partition/stratification ") + (laws ? "hold" : "violated") + ", aggregate err " +
             fmt("%.1e", agg_err) + ", rerun " + (csv == again ? "byte-identical" : "differs"));
}

void metrics() {
  Rng rng(31);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = 2 + static_cast<int>(rng.below(4));
    const std::size_t n = 1 + rng.below(80);
    std::vector<std::int32_t> y(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<std::int32_t>(rng.below(classes));
      p[i] = rng.uniform() < 0.6 ? y[i] : static_cast<std::int32_t>(rng.below(classes));
    }
    const EvalResult r = score_predictions(y, p, static_cast<std::size_t>(classes));
    const oracle::Scores o =
        oracle::score(std::vector<int>(y.begin(), y.end()), std::vector<int>(p.begin(), p.end()), classes);
    exact += r.accuracy == o.accuracy && r.macro_f1 == o.macro_f1;
  }
  const std::vector<int> hy{0, 0, 1, 1, 2, 2}, hp{0, 0, 1, 2, 2, 2};
  const oracle::Scores hand = oracle::score(hy, hp, 3);
  const EvalResult lib = score_confusion({{2, 0, 0}, {0, 1, 1}, {0, 0, 2}});
  const bool hand_ok = lib.macro_f1 == hand.macro_f1 && std::abs(lib.macro_f1 - (1.0 + 2.0 / 3 + 0.8) / 3) < 1e-15;
  report(7, exact == 100 && hand_ok,
         std::to_string(exact) + "/100 fuzzed cases exact, hand case macro-F1 " + fmt("%.4f", lib.macro_f1));
}

void optimizer() {
  Parameter theta("theta", Tensor::scalar(1.0));
  Adam adam(AdamOptions{.lr = 0.1});
  std::vector<Parameter*> ps{&theta};
  double first_delta = 0.0;
  for (int step = 0; step < 200; ++step) {
    Tape t;
    const Var x = t.parameter(theta);
    theta.zero_grad();
    t.backward(mul(x, x));
    const double before = theta.value.item();
    adam.step(ps);
    if (step == 0) first_delta = theta.value.item() - before;
  }
  const double closed_form = -0.1 * 2.0 / (2.0 + 1e-8);
  const double err = std::abs(first_delta - closed_form);
  report(8, std::abs(theta.value.item()) < 0.05 && err < 1e-12,
         "|theta_200| " + fmt("%.2e", std::abs(theta.value.item())) + ", first-step delta error " + fmt("%.1e", err));
}

}  // namespace

int main() {
  gradient_suite();
  pooling_oracles();
  invariances();
  const LearningRun run = learning();
  cluster_tightening(run);
  protocol();
  metrics();
  optimizer();
  std::printf("%d of 8 criteria failed\n", failures);
  return failures;
}
