#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "layerpool/analysis.hpp"
#include "layerpool/checkpoint.hpp"
#include "layerpool/data.hpp"
#include "layerpool/gradcheck.hpp"
#include "layerpool/io.hpp"
#include "layerpool/training.hpp"

namespace fs = std::filesystem;
using namespace layerpool;

namespace {

constexpr int kExitData = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainArgs {
  std::string data, schema = "absa", pooling = "lstm", out = "run", config;
  std::size_t folds = 10, epochs = 0, batch_size = 32;  // epochs 0: schema preset
  double lr = 1e-3, l2 = 1e-5, dropout = 0.1;
  std::uint64_t seed = 1;
  std::size_t layers = 4, hidden = 32, heads = 4, ffn = 64, max_len = 64;
  std::vector<std::size_t> dump_epochs, dump_layers;
  bool select_on_dev = false;
};

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (const std::string& part : split(text, ',')) {
    if (part.empty()) continue;
    out.push_back(static_cast<std::size_t>(std::stoull(part)));
  }
  return out;
}

/// Copies config-file values into every option the command line left unset.
void apply_config(CLI::App& cmd, const std::string& path, TrainArgs& a) {
  const auto kv = load_key_values(path);
  auto unset = [&](const std::string& key) {
    const CLI::Option* opt = cmd.get_option_no_throw("--" + key);
    return opt == nullptr || opt->count() == 0;
  };
  auto to_size = [](const std::string& v) { return static_cast<std::size_t>(std::stoull(v)); };
  static const std::set<std::string> pooling_tokens{"last", "lstm", "attention"};
  for (const auto& [key, value] : kv) {
    if (!unset(key)) continue;
    if (key == "data") a.data = value;
    else if (key == "schema") a.schema = value;
    else if (key == "pooling") {
      if (!pooling_tokens.contains(value)) throw UsageError("config pooling '" + value + "' not in {last,lstm,attention}");
      a.pooling = value;
    } else if (key == "out") a.out = value;
    else if (key == "folds") a.folds = to_size(value);
    else if (key == "epochs") a.epochs = to_size(value);
    else if (key == "batch-size") a.batch_size = to_size(value);
    else if (key == "lr") a.lr = parse_real(value);
    else if (key == "l2") a.l2 = parse_real(value);
    else if (key == "dropout") a.dropout = parse_real(value);
    else if (key == "seed") a.seed = std::stoull(value);
    else if (key == "layers") a.layers = to_size(value);
    else if (key == "hidden") a.hidden = to_size(value);
    else if (key == "heads") a.heads = to_size(value);
    else if (key == "ffn") a.ffn = to_size(value);
    else if (key == "max-len") a.max_len = to_size(value);
    else if (key == "dump-epochs") a.dump_epochs = parse_list(value);
    else if (key == "dump-layers") a.dump_layers = parse_list(value);
    else if (key == "select-on-dev") a.select_on_dev = value == "true" || value == "1";
    else throw UsageError("unknown config key '" + key + "' in " + path);
  }
}

std::vector<Example> pack_all(std::span<const PairExample> data, const Vocab& vocab, std::size_t max_len) {
  std::vector<Example> out;
  out.reserve(data.size());
  for (const PairExample& ex : data) out.push_back(Example{pack_pair(ex, vocab, max_len), ex.label});
  return out;
}

int run_train(CLI::App& cmd, TrainArgs a) {
  if (!a.config.empty()) apply_config(cmd, a.config, a);
  if (a.data.empty()) throw UsageError("train: --data is required (flag or config key)");
  const Schema schema = parse_schema(a.schema);
  const auto raw = load_jsonl(a.data, schema);
  if (raw.empty()) throw DataError(a.data + ": no examples");
  const Vocab vocab = build_vocab(raw);
  const auto data = pack_all(raw, vocab, a.max_len);

  ModelConfig mc;
  mc.encoder.layers = a.layers;
  mc.encoder.hidden = a.hidden;
  mc.encoder.heads = a.heads;
  mc.encoder.ffn = a.ffn;
  mc.encoder.vocab = vocab.size();
  mc.encoder.max_len = a.max_len;
  mc.encoder.validate();
  mc.pooling = parse_pooling(a.pooling);
  mc.classes = label_names(schema).size();

  TrainConfig tc = schema == Schema::kNli ? TrainConfig::nli() : TrainConfig::absa();
  tc.lr = a.lr;
  tc.l2 = a.l2;
  tc.dropout = a.dropout;
  tc.folds = a.folds;
  tc.seed = a.seed;
  tc.batch_size = a.batch_size;
  tc.select_on_dev = tc.select_on_dev || a.select_on_dev;
  if (a.epochs > 0) tc.epochs = a.epochs;
  tc.validate();

  std::vector<std::size_t> layers = a.dump_layers;
  if (layers.empty())
    for (std::size_t l = 1; l <= a.layers; ++l) layers.push_back(l);
  const std::set<std::size_t> dump_epochs(a.dump_epochs.begin(), a.dump_epochs.end());
  const fs::path out(a.out);
  fs::create_directories(out);

  auto held_out = [&](std::span<const std::size_t> idx, std::vector<Example>& ex, std::vector<std::string>& ids) {
    for (std::size_t i : idx) {
      ex.push_back(data[i]);
      ids.push_back(std::to_string(i));
    }
  };
  FoldEpochHook on_epoch;
  if (!dump_epochs.empty()) {
    on_epoch = [&](std::size_t fold, std::size_t epoch, Model& model, std::span<const std::size_t> test_idx) {
      if (!dump_epochs.contains(epoch)) return;
      std::vector<Example> ex;
      std::vector<std::string> ids;
      held_out(test_idx, ex, ids);
      dump_trace(model, ex, ids, epoch, layers, out / "dumps" / ("fold" + std::to_string(fold)));
    };
  }
  const FoldHook on_fold = [&](std::size_t fold, Model& model, std::span<const std::size_t>) {
    save_checkpoint(out / ("fold" + std::to_string(fold) + ".ckpt"), model, vocab,
                    {{"schema", a.schema}, {"fold", std::to_string(fold)}, {"seed", std::to_string(a.seed)}});
    std::cerr << "fold " << fold << " done\n";
  };
  const CVReport report = cross_validated_train(data, mc, tc, on_fold, on_epoch);
  write_file_atomic(out / "results.csv", cv_report_csv(report));
  std::cout << "accuracy " << format_real(report.mean_accuracy) << " +- " << format_real(report.std_accuracy)
            << "\nmacro_f1 " << format_real(report.mean_macro_f1) << " +- " << format_real(report.std_macro_f1)
            << "\nwrote " << (out / "results.csv").string() << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data_path, const std::string& schema_flag) {
  Checkpoint ck = load_checkpoint(checkpoint);
  std::string schema_name = schema_flag;
  if (schema_name.empty()) {
    const auto it = ck.metadata.find("schema");
    schema_name = it == ck.metadata.end() ? "absa" : it->second;
  }
  const auto raw = load_jsonl(data_path, parse_schema(schema_name));
  if (raw.empty()) throw DataError(data_path + ": no examples");
  const auto data = pack_all(raw, ck.vocab, ck.model.config().encoder.max_len);
  const EvalResult r = evaluate(ck.model, data);
  std::cout << "accuracy," << format_real(r.accuracy) << "\nmacro_f1," << format_real(r.macro_f1) << "\n";
  for (std::size_t c = 0; c < r.classes(); ++c)
    std::cout << "f1_class" << c << "," << format_real(r.per_class_f1[c]) << "\n";
  return 0;
}

int run_synth(std::size_t n, std::uint64_t seed, const std::string& out, const std::string& schema) {
  const auto data = synth_generate(n, 3, seed);
  save_jsonl(out, data, parse_schema(schema));
  std::cout << "wrote " << data.size() << " examples to " << out << "\n";
  return 0;
}

int run_project(const std::string& dumps, const std::string& out) {
  const auto summaries = project_directory(dumps, out);
  std::cout << "epoch,layer,cluster_score\n";
  for (const auto& s : summaries) std::cout << s.epoch << "," << s.layer << "," << format_real(s.score) << "\n";
  return 0;
}

int run_gradcheck(std::size_t seeds) {
  bool ok = true;
  for (const GradCheckResult& r : run_gradient_suite(seeds)) {
    std::printf("%-4s %-40s max_rel_error=%.3e checked=%zu\n", r.passed ? "ok" : "FAIL", r.name.c_str(),
                r.max_rel_error, r.checked);
    ok = ok && r.passed;
  }
  return ok ? 0 : kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-pooling sentence-pair classifier: training, evaluation and analysis"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "Cross-validated training on a JSONL dataset");
  train->add_option("--data", ta.data, "JSONL dataset");
  train->add_option("--schema", ta.schema, "Field layout")->check(CLI::IsMember({"absa", "nli"}));
  train->add_option("--pooling", ta.pooling, "Pooling head")->check(CLI::IsMember({"last", "lstm", "attention"}));
  train->add_option("--folds", ta.folds, "Cross-validation folds");
  train->add_option("--epochs", ta.epochs, "Epochs per fold (default: 10 absa, 5 nli)");
  train->add_option("--lr", ta.lr, "Adam learning rate");
  train->add_option("--l2", ta.l2, "L2 coefficient");
  train->add_option("--dropout", ta.dropout, "Dropout rate");
  train->add_option("--batch-size", ta.batch_size, "Examples per step");
  train->add_option("--seed", ta.seed, "Master seed");
  train->add_option("--layers", ta.layers, "Encoder layers");
  train->add_option("--hidden", ta.hidden, "Hidden size");
  train->add_option("--heads", ta.heads, "Attention heads");
  train->add_option("--ffn", ta.ffn, "Feed-forward size");
  train->add_option("--max-len", ta.max_len, "Maximum packed length");
  train->add_option("--dump-epochs", ta.dump_epochs, "Epochs at which to dump held-out CLS vectors")->delimiter(',');
  train->add_option("--dump-layers", ta.dump_layers, "Layers to dump (default: all)")->delimiter(',');
  train->add_flag("--select-on-dev", ta.select_on_dev, "Keep the best epoch on a 10% dev split");
  train->add_option("--config", ta.config, "key=value file; flags override it");
  train->add_option("--out", ta.out, "Output directory");

  std::string ck_path, eval_data, eval_schema;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a saved checkpoint");
  eval->add_option("--checkpoint", ck_path, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "JSONL dataset")->required();
  eval->add_option("--schema", eval_schema, "Field layout (default: from checkpoint)")
      ->check(CLI::IsMember({"absa", "nli"}));

  std::size_t synth_n = 3000;
  std::uint64_t synth_seed = 1;
  std::string synth_out, synth_schema = "absa";
  CLI::App* synth = app.add_subcommand("synth", "Generate the synthetic aspect task");
  synth->add_option("--n", synth_n, "Number of examples");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", synth_out, "Output JSONL")->required();
  synth->add_option("--schema", synth_schema, "Field layout")->check(CLI::IsMember({"absa", "nli"}));

  std::string dumps_dir, proj_out;
  CLI::App* project = app.add_subcommand("project", "PCA projections and cluster scores of layer dumps");
  project->add_option("--dumps", dumps_dir, "Directory of dump_e*_l*.csv files")->required();
  project->add_option("--out", proj_out, "Output directory")->required();

  std::size_t grad_seeds = 20;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--seeds", grad_seeds, "Random draws per check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (train->parsed()) return run_train(*train, ta);
    if (eval->parsed()) return run_eval(ck_path, eval_data, eval_schema);
    if (synth->parsed()) return run_synth(synth_n, synth_seed, synth_out, synth_schema);
    if (project->parsed()) return run_project(dumps_dir, proj_out);
    if (gradcheck->parsed()) return run_gradcheck(grad_seeds);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
