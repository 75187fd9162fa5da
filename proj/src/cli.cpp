#include "minibert/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "minibert/checkpoint.hpp"
#include "minibert/datasets.hpp"
#include "minibert/finetune.hpp"
#include "minibert/kv_config.hpp"
#include "minibert/manifest.hpp"
#include "minibert/metrics.hpp"
#include "minibert/model.hpp"
#include "minibert/pretrain.hpp"
#include "minibert/textio.hpp"
#include "minibert/vocab.hpp"
#include "minibert/vocab_align.hpp"

namespace minibert {

namespace {

namespace fs = std::filesystem;

// Everything a run accumulates for its manifest.
struct RunContext {
  std::map<std::string, std::string> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, double> metrics;

  void input(const std::string& path) { inputs[path] = digest_file(path); }
  void output(const std::string& path) { outputs.push_back(path); }
};

// Reruns a module validator, reclassifying its complaint as a
// configuration problem.
template <typename Fn>
auto as_config_error(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
}

// The complete key inventory; anything else in a config is rejected.
const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "seed",
      "output.dir",
      "model.hidden",
      "model.layers",
      "model.heads",
      "model.intermediate",
      "model.max_seq",
      "model.dropout",
      "model.type_vocab",
      "masking.p_select",
      "masking.p_mask",
      "masking.p_random",
      "masking.p_keep",
      "masking.seed",
      "pretrain.batch_size",
      "pretrain.total_steps",
      "pretrain.warmup_steps",
      "pretrain.base_lr",
      "pretrain.weight_decay",
      "pretrain.checkpoint_every",
      "pretrain.eval_examples",
      "vocab.target_size",
      "vocab.min_pair_freq",
      "finetune.batch_size",
      "finetune.learning_rate",
      "finetune.epochs",
      "finetune.max_seq",
      "finetune.weight_decay",
      "finetune.inference_only",
      "task.preset",
      "task.kind",
      "task.labels",
      "task.averaging",
      "data.corpus",
      "data.train",
      "data.validation",
      "data.examples",
      "data.predictions",
      "data.vocab",
      "data.merges",
      "data.checkpoint",
      "data.base_vocab",
      "data.base_merges",
      "data.base_checkpoint",
      "data.placeholder_a",
      "data.placeholder_b",
  };
  return keys;
}

void validate_config(const KvConfig& config) {
  for (const auto& [key, value] : config.values)
    if (known_keys().count(key) == 0) throw ConfigError("config: unknown key \"" + key + "\"");
  // Every referenced input path must exist up front.
  for (const auto& [key, value] : config.values) {
    if (key.rfind("data.", 0) != 0 || key.rfind("data.placeholder", 0) == 0) continue;
    if (!fs::exists(value)) throw ConfigError("config: " + key + ": file not found: " + value);
  }
}

std::uint64_t seed_or_zero(const KvConfig& config) {
  if (!config.has("seed")) return 0;
  int64_t seed = config.get_int("seed");
  if (seed < 0) throw ConfigError("config: seed must be non-negative");
  return static_cast<std::uint64_t>(seed);
}

std::uint64_t require_seed(const KvConfig& config, const std::string& command) {
  if (!config.has("seed"))
    throw ConfigError("config: " + command + " requires a seed (--seed or seed=N)");
  return seed_or_zero(config);
}

std::string require_out_dir(const KvConfig& config) {
  std::string dir = config.get_or("output.dir", "");
  if (dir.empty())
    throw ConfigError("config: an output directory is required (--out or output.dir=)");
  fs::create_directories(dir);
  return dir;
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

Vocabulary load_vocab_from(const KvConfig& config, const std::string& vocab_key,
                           const std::string& merges_key, RunContext& ctx) {
  const std::string& vocab_path = config.get(vocab_key);
  std::string merges_path = config.get_or(merges_key, "");
  ctx.input(vocab_path);
  if (!merges_path.empty()) ctx.input(merges_path);
  return load_vocab(vocab_path, merges_path);
}

ModelConfig model_from(const KvConfig& config, int64_t vocab_size) {
  ModelConfig mc;
  mc.vocab_size = vocab_size;
  mc.hidden = config.get_int("model.hidden");
  mc.layers = config.get_int("model.layers");
  mc.heads = config.get_int("model.heads");
  mc.intermediate = config.get_int("model.intermediate");
  mc.max_seq = config.get_int_or("model.max_seq", 512);
  mc.dropout = config.get_real_or("model.dropout", 0.1);
  mc.type_vocab = config.get_int_or("model.type_vocab", 2);
  as_config_error([&] { mc.validate(); });
  return mc;
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "token") return TaskKind::token_classification;
  if (name == "sequence") return TaskKind::sequence_classification;
  if (name == "multilabel") return TaskKind::multi_label;
  if (name == "similarity") return TaskKind::similarity;
  if (name == "qa") return TaskKind::qa_classification;
  throw ConfigError("config: unknown task.kind \"" + name +
                    "\" (token|sequence|multilabel|similarity|qa)");
}

Averaging parse_averaging(const std::string& name) {
  if (name == "micro") return Averaging::micro;
  if (name == "macro") return Averaging::macro;
  if (name == "accuracy") return Averaging::accuracy;
  throw ConfigError("config: unknown task.averaging \"" + name + "\" (micro|macro|accuracy)");
}

// Task family, declared labels, and effective fine-tuning
// hyperparameters: preset values (when task.preset is set) overridden by
// any explicit finetune.* keys.
struct TaskSetup {
  TaskKind kind = TaskKind::sequence_classification;
  std::vector<std::string> labels;  // empty: derive from the dataset
  Averaging averaging = Averaging::micro;
  FinetuneConfig fc;
};

std::string trim_copy(const std::string& text) {
  std::size_t first = text.find_first_not_of(" \t");
  if (first == std::string::npos) return "";
  std::size_t last = text.find_last_not_of(" \t");
  return text.substr(first, last - first + 1);
}

TaskSetup task_setup(const KvConfig& config, std::uint64_t seed) {
  TaskSetup setup;
  if (config.has("task.preset") && config.has("task.kind"))
    throw ConfigError("config: task.preset and task.kind are mutually exclusive");
  if (config.has("task.preset")) {
    const DatasetPreset* preset = find_dataset_preset(config.get("task.preset"));
    if (preset == nullptr)
      throw ConfigError("config: unknown task.preset \"" + config.get("task.preset") + "\"");
    setup.kind = preset->kind;
    setup.fc.learning_rate = preset->learning_rate;
    setup.fc.batch_size = preset->batch_size;
    setup.fc.epochs = preset->epochs;
  } else if (config.has("task.kind")) {
    setup.kind = parse_task_kind(config.get("task.kind"));
  } else {
    throw ConfigError("config: set task.preset or task.kind");
  }
  if (config.has("task.labels")) {
    for (const std::string& field : split_fields(config.get("task.labels"), ','))
      setup.labels.push_back(trim_copy(field));
  }
  setup.averaging = parse_averaging(config.get_or("task.averaging", "micro"));
  setup.fc.learning_rate = config.get_real_or("finetune.learning_rate", setup.fc.learning_rate);
  setup.fc.batch_size =
      static_cast<std::size_t>(config.get_int_or("finetune.batch_size",
                                                 static_cast<int64_t>(setup.fc.batch_size)));
  setup.fc.epochs = static_cast<std::size_t>(
      config.get_int_or("finetune.epochs", static_cast<int64_t>(setup.fc.epochs)));
  setup.fc.max_seq = config.get_int_or("finetune.max_seq", setup.fc.max_seq);
  setup.fc.weight_decay = config.get_real_or("finetune.weight_decay", setup.fc.weight_decay);
  setup.fc.inference_only = config.get_bool_or("finetune.inference_only", false);
  setup.fc.seed = seed;
  as_config_error([&] { setup.fc.validate(); });
  return setup;
}

TaskSpec spec_for(const TaskSetup& setup, const std::vector<std::string>& labels) {
  return as_config_error([&] {
    switch (setup.kind) {
      case TaskKind::token_classification:
        return TaskSpec::token_classification(labels);
      case TaskKind::sequence_classification:
        return TaskSpec::sequence_classification(labels, setup.averaging);
      case TaskKind::multi_label:
        return TaskSpec::multi_label(labels);
      case TaskKind::similarity:
        return TaskSpec::similarity();
      case TaskKind::qa_classification:
        return TaskSpec::qa_classification(labels);
    }
    throw ConfigError("config: unknown task kind");
  });
}

std::vector<std::string> sorted_unique(std::vector<std::string> values) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return values;
}

struct LoadedExamples {
  std::vector<TaskExample> examples;
  std::vector<std::string> derived_labels;
};

LoadedExamples load_task_examples(TaskKind kind, const std::string& path,
                                  const KvConfig& config,
                                  const std::vector<std::string>& declared) {
  switch (kind) {
    case TaskKind::token_classification: {
      NerCorpus corpus = load_conll(path);
      return {examples_from_ner(corpus), corpus.tag_set};
    }
    case TaskKind::sequence_classification: {
      std::vector<RelationExample> rows =
          load_relation(path, config.get_or("data.placeholder_a", "@A$"),
                        config.get_or("data.placeholder_b", "@B$"), declared);
      std::vector<std::string> observed;
      observed.reserve(rows.size());
      for (const RelationExample& row : rows) observed.push_back(row.label);
      return {examples_from_relations(rows), sorted_unique(std::move(observed))};
    }
    case TaskKind::qa_classification: {
      std::vector<QaExample> rows = load_qa(path, declared);
      std::vector<std::string> observed;
      observed.reserve(rows.size());
      for (const QaExample& row : rows) observed.push_back(row.label);
      return {examples_from_qa(rows), sorted_unique(std::move(observed))};
    }
    case TaskKind::multi_label: {
      MultiLabelCorpus corpus = load_multilabel(path, declared);
      return {examples_from_multilabel(corpus), corpus.label_set};
    }
    case TaskKind::similarity:
      return {examples_from_pairs(load_sentence_pairs(path)), {}};
  }
  throw ConfigError("config: unknown task kind");
}

// finetune.max_seq must respect the model's position table; both values
// are known from configuration alone, so this is a config-time check.
void check_max_seq(const TaskSetup& setup, const ModelConfig& mc) {
  if (setup.fc.max_seq > mc.max_seq)
    throw ConfigError("config: finetune.max_seq " + std::to_string(setup.fc.max_seq) +
                      " exceeds model.max_seq " + std::to_string(mc.max_seq));
}

void cmd_train_vocab(const KvConfig& config, RunContext& ctx, const std::string& out) {
  const std::string& corpus_path = config.get("data.corpus");
  ctx.input(corpus_path);
  int64_t target = config.get_int("vocab.target_size");
  int64_t min_pair = config.get_int_or("vocab.min_pair_freq", 2);
  std::vector<std::vector<std::string>> documents = load_pretrain_corpus(corpus_path);
  std::vector<std::string> flat;
  for (const auto& doc : documents)
    for (const std::string& sentence : doc) flat.push_back(sentence);
  Vocabulary vocab = train_bpe(flat, target, min_pair);
  std::string vocab_path = join_path(out, "vocab.txt");
  std::string merges_path = join_path(out, "merges.txt");
  save_vocab(vocab_path, vocab);
  save_merges(merges_path, vocab);
  ctx.output(vocab_path);
  ctx.output(merges_path);
  ctx.metrics["vocab_size"] = static_cast<double>(vocab.size());
  ctx.metrics["merges"] = static_cast<double>(vocab.merges.size());
}

void cmd_align_vocab(const KvConfig& config, RunContext& ctx, const std::string& out,
                     std::uint64_t seed) {
  Vocabulary new_vocab = load_vocab_from(config, "data.vocab", "data.merges", ctx);
  Vocabulary base_vocab = load_vocab_from(config, "data.base_vocab", "data.base_merges", ctx);
  const std::string& base_ckpt_path = config.get("data.base_checkpoint");
  ctx.input(base_ckpt_path);
  std::map<std::string, Tensor> tensors = read_checkpoint(base_ckpt_path);
  auto emb = tensors.find("embeddings.token");
  if (emb == tensors.end())
    throw std::runtime_error("align-vocab: base checkpoint has no embeddings.token");
  tensors["embeddings.token"] = align_vocabulary(new_vocab, base_vocab, emb->second, seed);
  // The tied MLM output bias is indexed by token id, so it is remapped
  // with the same copy/compose/fresh rule, as a one-column table.
  auto bias = tensors.find("mlm.output.bias");
  if (bias != tensors.end()) {
    Tensor column = Tensor::zeros({base_vocab.size(), 1});
    if (bias->second.data.size() != static_cast<std::size_t>(base_vocab.size()))
      throw std::runtime_error("align-vocab: mlm.output.bias does not match the base vocabulary");
    column.data = bias->second.data;
    Tensor remapped = align_vocabulary(new_vocab, base_vocab, column, seed);
    Tensor flat = Tensor::zeros({new_vocab.size()});
    flat.data = remapped.data;
    tensors["mlm.output.bias"] = flat;
  }
  std::string out_path = join_path(out, "aligned.ckpt");
  write_checkpoint(out_path, tensors);
  ctx.output(out_path);
  ctx.metrics["vocab_size"] = static_cast<double>(new_vocab.size());
}

void cmd_pretrain(const KvConfig& config, RunContext& ctx, const std::string& out,
                  std::uint64_t seed) {
  const std::string& corpus_path = config.get("data.corpus");
  ctx.input(corpus_path);
  Vocabulary vocab = load_vocab_from(config, "data.vocab", "data.merges", ctx);
  ModelConfig mc = model_from(config, vocab.size());
  PretrainOptions options;
  options.policy.p_select = config.get_real_or("masking.p_select", options.policy.p_select);
  options.policy.p_mask = config.get_real_or("masking.p_mask", options.policy.p_mask);
  options.policy.p_random = config.get_real_or("masking.p_random", options.policy.p_random);
  options.policy.p_keep = config.get_real_or("masking.p_keep", options.policy.p_keep);
  options.policy.seed = static_cast<std::uint64_t>(
      config.get_int_or("masking.seed", static_cast<int64_t>(seed)));
  options.batch_size =
      static_cast<std::size_t>(config.get_int_or("pretrain.batch_size", 8));
  options.total_steps =
      static_cast<std::size_t>(config.get_int("pretrain.total_steps"));
  options.warmup_steps =
      static_cast<std::size_t>(config.get_int_or("pretrain.warmup_steps", 2000));
  options.base_lr = config.get_real_or("pretrain.base_lr", 3e-4);
  options.weight_decay = config.get_real_or("pretrain.weight_decay", 0.01);
  options.checkpoint_every =
      static_cast<std::size_t>(config.get_int_or("pretrain.checkpoint_every", 0));
  options.seed = seed;
  options.checkpoint_path = join_path(out, "checkpoint.ckpt");

  std::vector<std::vector<std::string>> corpus = load_pretrain_corpus(corpus_path);
  PretrainRun run = pretrain(mc, corpus, vocab, options);
  std::string trace_path = join_path(out, "trace.tsv");
  write_text_file(trace_path, serialize_trace(run.trace));
  ctx.output(options.checkpoint_path);
  ctx.output(trace_path);
  if (!run.trace.empty()) {
    ctx.metrics["final_mlm_loss"] = run.trace.back().mlm;
    ctx.metrics["final_nsp_loss"] = run.trace.back().nsp;
  }
  std::size_t eval_examples =
      static_cast<std::size_t>(config.get_int_or("pretrain.eval_examples", 32));
  if (eval_examples > 0) {
    PretrainEval eval = evaluate_pretrain(run.model, corpus, vocab, options, eval_examples);
    ctx.metrics["mlm_accuracy"] = eval.mlm_accuracy;
    ctx.metrics["nsp_accuracy"] = eval.nsp_accuracy;
  }
}

void cmd_finetune(const KvConfig& config, RunContext& ctx, const std::string& out,
                  std::uint64_t seed) {
  Vocabulary vocab = load_vocab_from(config, "data.vocab", "data.merges", ctx);
  ModelConfig mc = model_from(config, vocab.size());
  TaskSetup setup = task_setup(config, seed);
  check_max_seq(setup, mc);
  const std::string& ckpt_path = config.get("data.checkpoint");
  const std::string& train_path = config.get("data.train");
  ctx.input(ckpt_path);
  ctx.input(train_path);

  LoadedExamples train = load_task_examples(setup.kind, train_path, config, setup.labels);
  std::vector<std::string> labels =
      setup.labels.empty() ? train.derived_labels : setup.labels;
  TaskSpec task = spec_for(setup, labels);

  std::vector<TaskExample> validation;
  if (config.has("data.validation")) {
    const std::string& path = config.get("data.validation");
    ctx.input(path);
    validation = load_task_examples(setup.kind, path, config, labels).examples;
  }

  FinetuneResult result =
      finetune(mc, ckpt_path, vocab, task, train.examples, validation, setup.fc);
  std::string model_path = join_path(out, "finetuned.ckpt");
  std::string trace_path = join_path(out, "trace.tsv");
  save_checkpoint(model_path, result.model.encoder.params());
  write_text_file(trace_path, serialize_epoch_trace(result.trace));
  ctx.output(model_path);
  ctx.output(trace_path);
  if (!result.trace.empty()) ctx.metrics = result.trace.back().metrics.values;
}

// evaluate and predict share their model-loading path.
TaskModel load_task_model(const KvConfig& config, const Vocabulary& vocab,
                          const TaskSpec& task, std::uint64_t seed, RunContext& ctx) {
  ModelConfig mc = model_from(config, vocab.size());
  const std::string& ckpt_path = config.get("data.checkpoint");
  ctx.input(ckpt_path);
  return make_task_model(mc, task, ckpt_path, seed);
}

int64_t eval_max_seq(const KvConfig& config) {
  int64_t model_cap = config.get_int_or("model.max_seq", 512);
  return config.get_int_or("finetune.max_seq", model_cap);
}

MetricReport evaluate_prediction_file(const TaskSetup& setup, const std::string& path,
                                      RunContext& ctx) {
  ctx.input(path);
  switch (setup.kind) {
    case TaskKind::token_classification: {
      NerPredictionFile file = read_ner_predictions(path);
      std::vector<std::string> labels = setup.labels;
      if (labels.empty()) {
        std::vector<std::string> observed;
        for (const auto& sentence : file.gold)
          observed.insert(observed.end(), sentence.begin(), sentence.end());
        for (const auto& sentence : file.predicted)
          observed.insert(observed.end(), sentence.begin(), sentence.end());
        labels = sorted_unique(std::move(observed));
      }
      return score_token_tags(file.gold, file.predicted, labels);
    }
    case TaskKind::sequence_classification: {
      LabelPredictionFile file = read_label_predictions(path);
      return classification_scores(file.gold, file.predicted, setup.averaging, setup.labels);
    }
    case TaskKind::qa_classification: {
      LabelPredictionFile file = read_label_predictions(path);
      return classification_scores(file.gold, file.predicted, Averaging::accuracy,
                                   setup.labels);
    }
    case TaskKind::multi_label: {
      SetPredictionFile file = read_multilabel_predictions(path);
      return multilabel_scores(file.gold, file.predicted, setup.labels);
    }
    case TaskKind::similarity: {
      ScorePredictionFile file = read_score_predictions(path);
      return score_similarity(file.gold, file.predicted);
    }
  }
  throw ConfigError("config: unknown task kind");
}

void cmd_evaluate(const KvConfig& config, RunContext& ctx, const std::string& out,
                  std::uint64_t seed) {
  TaskSetup setup = task_setup(config, seed);
  MetricReport report;
  if (config.has("data.predictions")) {
    report = evaluate_prediction_file(setup, config.get("data.predictions"), ctx);
  } else {
    Vocabulary vocab = load_vocab_from(config, "data.vocab", "data.merges", ctx);
    const std::string& data_path = config.get("data.examples");
    ctx.input(data_path);
    LoadedExamples data = load_task_examples(setup.kind, data_path, config, setup.labels);
    std::vector<std::string> labels =
        setup.labels.empty() ? data.derived_labels : setup.labels;
    TaskSpec task = spec_for(setup, labels);
    TaskModel model = load_task_model(config, vocab, task, seed, ctx);
    report = evaluate_task(model, vocab, data.examples, eval_max_seq(config));
  }
  std::string report_path = join_path(out, "metrics.txt");
  write_text_file(report_path, serialize_report(report));
  ctx.output(report_path);
  ctx.metrics = report.values;
  std::cout << serialize_report(report);
}

void cmd_predict(const KvConfig& config, RunContext& ctx, const std::string& out,
                 std::uint64_t seed) {
  TaskSetup setup = task_setup(config, seed);
  Vocabulary vocab = load_vocab_from(config, "data.vocab", "data.merges", ctx);
  const std::string& data_path = config.get("data.examples");
  ctx.input(data_path);
  LoadedExamples data = load_task_examples(setup.kind, data_path, config, setup.labels);
  std::vector<std::string> labels =
      setup.labels.empty() ? data.derived_labels : setup.labels;
  TaskSpec task = spec_for(setup, labels);
  TaskModel model = load_task_model(config, vocab, task, seed, ctx);
  TaskPredictions predictions = predict(model, vocab, data.examples, eval_max_seq(config));

  std::string path = join_path(out, "predictions.tsv");
  switch (setup.kind) {
    case TaskKind::token_classification:
      write_ner_predictions(path, data.examples, predictions);
      break;
    case TaskKind::sequence_classification:
    case TaskKind::qa_classification:
      write_label_predictions(path, data.examples, predictions);
      break;
    case TaskKind::multi_label:
      write_multilabel_predictions(path, data.examples, predictions);
      break;
    case TaskKind::similarity:
      write_score_predictions(path, data.examples, predictions);
      break;
  }
  ctx.output(path);
  ctx.metrics["truncated"] = static_cast<double>(predictions.truncated);
}

int cmd_compare_runs(const std::vector<std::string>& paths, const std::string& out_dir) {
  if (paths.size() < 2)
    throw ConfigError("compare-runs: need at least two manifest paths");
  for (const std::string& path : paths)
    if (!fs::exists(path)) throw ConfigError("compare-runs: file not found: " + path);
  std::vector<RunManifest> runs;
  runs.reserve(paths.size());
  for (const std::string& path : paths) runs.push_back(read_manifest(path));
  CompareReport report = compare_runs(runs);
  std::cout << report.table;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text_file(join_path(out_dir, "compare.txt"), report.table);
  }
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Vocabulary, pretraining, and fine-tuning pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed_flag = 0;
  std::string out_flag;
  std::vector<std::string> manifest_paths;

  const std::vector<std::string> commands = {"train-vocab", "align-vocab", "pretrain",
                                             "finetune",    "evaluate",    "predict"};
  for (const std::string& name : commands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "key=value configuration file");
    sub->add_option("--set", overrides, "override KEY=VALUE (repeatable)");
    sub->add_option("--seed", seed_flag, "run seed");
    sub->add_option("--out", out_flag, "output directory");
  }
  CLI::App* compare = app.add_subcommand("compare-runs");
  compare->add_option("manifests", manifest_paths, "manifest.json paths");
  compare->add_option("--out", out_flag, "directory for the rendered table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();

  try {
    if (command == "compare-runs") return cmd_compare_runs(manifest_paths, out_flag);

    KvConfig config;
    if (!config_path.empty()) {
      if (!fs::exists(config_path))
        throw ConfigError("config: file not found: " + config_path);
      config = load_kv_file(config_path);
    }
    for (const std::string& assignment : overrides) apply_kv_override(config, assignment);
    if (sub->count("--seed") > 0) config.set("seed", std::to_string(seed_flag));
    if (sub->count("--out") > 0) config.set("output.dir", out_flag);
    validate_config(config);

    std::string out = require_out_dir(config);
    RunContext ctx;
    auto started = std::chrono::steady_clock::now();
    std::uint64_t seed = 0;
    if (command == "train-vocab") {
      cmd_train_vocab(config, ctx, out);
    } else if (command == "align-vocab") {
      seed = seed_or_zero(config);
      cmd_align_vocab(config, ctx, out, seed);
    } else if (command == "pretrain") {
      seed = require_seed(config, command);
      cmd_pretrain(config, ctx, out, seed);
    } else if (command == "finetune") {
      seed = require_seed(config, command);
      cmd_finetune(config, ctx, out, seed);
    } else if (command == "evaluate") {
      seed = seed_or_zero(config);
      cmd_evaluate(config, ctx, out, seed);
    } else if (command == "predict") {
      seed = seed_or_zero(config);
      cmd_predict(config, ctx, out, seed);
    } else {
      throw ConfigError("unknown command: " + command);
    }

    RunManifest manifest;
    manifest.command = command;
    manifest.config = config.values;
    manifest.seed = seed;
    manifest.inputs = std::move(ctx.inputs);
    manifest.outputs = std::move(ctx.outputs);
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    manifest.metrics = std::move(ctx.metrics);
    std::string manifest_path = join_path(out, "manifest.json");
    write_manifest(manifest_path, manifest);
    std::cout << "wrote " << manifest_path << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace minibert
