#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "minibert/checkpoint.hpp"
#include "minibert/cli.hpp"
#include "minibert/kv_config.hpp"
#include "minibert/manifest.hpp"
#include "minibert/model.hpp"
#include "minibert/rng.hpp"
#include "minibert/textio.hpp"
#include "minibert/vocab.hpp"

using minibert::CompareReport;
using minibert::ConfigError;
using minibert::KvConfig;
using minibert::RunManifest;
using minibert::Tensor;
using minibert::Vocabulary;

namespace {

namespace fs = std::filesystem;

std::string test_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "minibert_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

// In-process invocation with captured streams, argv[0] included.
CliResult run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("minibert");
  for (const std::string& arg : args) argv.push_back(arg.c_str());
  std::ostringstream out;
  std::ostringstream err;
  std::streambuf* old_out = std::cout.rdbuf(out.rdbuf());
  std::streambuf* old_err = std::cerr.rdbuf(err.rdbuf());
  CliResult result;
  result.code = minibert::cli_main(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  result.out = out.str();
  result.err = err.str();
  return result;
}

// Every failure is one line on the diagnostic stream, prefixed.
void check_error_shape(const CliResult& result) {
  CAPTURE(result.err);
  REQUIRE(result.err.rfind("error: ", 0) == 0);
  CHECK(std::count(result.err.begin(), result.err.end(), '\n') == 1);
  CHECK(result.err.back() == '\n');
}

Vocabulary letter_vocab() {
  Vocabulary vocab;
  vocab.tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  for (char c = 'a'; c <= 'z'; ++c) vocab.tokens.push_back(std::string(1, c));
  vocab.finalize();
  return vocab;
}

// Four documents over disjoint letter ranges; one sentence per line,
// blank line between documents.
std::string letter_corpus_text() {
  std::string text;
  for (int d = 0; d < 4; ++d) {
    for (int r = 0; r < 4; ++r) {
      std::string sentence;
      for (int i = 0; i < 4; ++i) {
        if (i > 0) sentence += ' ';
        sentence += static_cast<char>('a' + 4 * d + (i + r) % 4);
      }
      text += sentence + "\n";
    }
    text += "\n";
  }
  return text;
}

std::string ner_train_conll() {
  return
      "e B-Dis\nm I-Dis\nf B-Dis\nn I-Dis\n\n"
      "g B-Dis\no I-Dis\nh B-Dis\np I-Dis\n\n"
      "e B-Dis\no I-Dis\n\n"
      "f B-Dis\np I-Dis\n\n"
      "i B-Chem\nj B-Chem\nk B-Chem\nl B-Chem\n\n"
      "l B-Chem\nk B-Chem\nj B-Chem\ni B-Chem\n\n"
      "a O\nb O\nc O\nd O\n\n"
      "d O\nc O\nb O\na O\n\n"
      "b O\nd O\n\n"
      "c O\na O\n";
}

std::string ner_val_conll() {
  return
      "g B-Dis\np I-Dis\n\n"
      "j B-Chem\ni B-Chem\n\n"
      "a O\nc O\n";
}

// On-disk inputs shared by the end-to-end cases: corpus, vocabulary,
// model configuration, task data, and one pretrained checkpoint produced
// through the command line itself.
struct Pipeline {
  std::string dir;
  std::string corpus;
  std::string vocab;
  std::string model_cfg;
  std::string train;
  std::string val;
  std::string pretrain_dir;
  std::string checkpoint;
};

const Pipeline& pipeline() {
  static const Pipeline shared = [] {
    Pipeline p;
    p.dir = test_dir("pipeline");
    p.corpus = p.dir + "/corpus.txt";
    minibert::write_text_file(p.corpus, letter_corpus_text());
    Vocabulary vocab = letter_vocab();
    p.vocab = p.dir + "/vocab.txt";
    minibert::save_vocab(p.vocab, vocab);
    p.model_cfg = p.dir + "/model.cfg";
    minibert::write_text_file(p.model_cfg,
                              "model.hidden = 32\n"
                              "model.layers = 1\n"
                              "model.heads = 2\n"
                              "model.intermediate = 64\n"
                              "model.max_seq = 16\n"
                              "model.dropout = 0\n");
    p.train = p.dir + "/train.conll";
    minibert::write_text_file(p.train, ner_train_conll());
    p.val = p.dir + "/val.conll";
    minibert::write_text_file(p.val, ner_val_conll());
    p.pretrain_dir = p.dir + "/pre";
    CliResult r = run_cli({"pretrain", "--config", p.model_cfg,
                           "--set", "data.corpus=" + p.corpus,
                           "--set", "data.vocab=" + p.vocab,
                           "--set", "pretrain.total_steps=30",
                           "--set", "pretrain.warmup_steps=5",
                           "--set", "pretrain.eval_examples=4",
                           "--seed", "7", "--out", p.pretrain_dir});
    if (r.code != 0) throw std::runtime_error("pipeline pretrain failed: " + r.err);
    p.checkpoint = p.pretrain_dir + "/checkpoint.ckpt";
    return p;
  }();
  return shared;
}

}  // namespace

TEST_CASE("kv config parses, serializes, and round-trips") {
  std::string text =
      "# a comment\n"
      "model.hidden = 64\n"
      "\n"
      "  task.labels = B-Dis, O  \r\n"
      "data.train=x/y.tsv\n";
  KvConfig config = minibert::parse_kv_text(text);
  CHECK(config.values.size() == 3);
  CHECK(config.get("model.hidden") == "64");
  CHECK(config.get("task.labels") == "B-Dis, O");
  CHECK(config.get("data.train") == "x/y.tsv");
  CHECK(config.get_int("model.hidden") == 64);
  CHECK(config.get_int_or("model.layers", 3) == 3);
  CHECK(config.get_real_or("model.dropout", 0.25) == 0.25);
  CHECK(config.get_or("absent", "fallback") == "fallback");
  CHECK(config.has("data.train"));
  CHECK_FALSE(config.has("absent"));

  std::string serialized = minibert::serialize_kv(config);
  CHECK(serialized ==
        "data.train = x/y.tsv\n"
        "model.hidden = 64\n"
        "task.labels = B-Dis, O\n");
  KvConfig reparsed = minibert::parse_kv_text(serialized);
  CHECK(reparsed.values == config.values);
  CHECK(minibert::serialize_kv(reparsed) == serialized);
  CHECK(minibert::serialize_kv(KvConfig{}).empty());

  KvConfig bools = minibert::parse_kv_text("a = true\nb = false\nc = 1\nd = 0\n");
  CHECK(bools.get_bool_or("a", false));
  CHECK_FALSE(bools.get_bool_or("b", true));
  CHECK(bools.get_bool_or("c", false));
  CHECK_FALSE(bools.get_bool_or("d", true));
  CHECK(bools.get_bool_or("absent", true));
}

TEST_CASE("kv config rejects malformed input") {
  CHECK_THROWS_WITH_AS(minibert::parse_kv_text("a = 1\nb = 2\na = 3\n"),
                       "config: line 3: duplicate key \"a\"", ConfigError);
  CHECK_THROWS_WITH_AS(minibert::parse_kv_text("just words\n"),
                       "config: line 1: expected key=value, got \"just words\"", ConfigError);
  CHECK_THROWS_WITH_AS(minibert::parse_kv_text(" = 5\n"), "config: line 1: empty key",
                       ConfigError);

  KvConfig config = minibert::parse_kv_text("n = 12x\nr = .\nb = yes\nf = 1.5\n");
  CHECK_THROWS_WITH_AS(config.get("absent"), "config: missing required key \"absent\"",
                       ConfigError);
  CHECK_THROWS_WITH_AS(config.get_int("n"), "config: key \"n\" is not an integer: \"12x\"",
                       ConfigError);
  CHECK_THROWS_WITH_AS(config.get_int("f"), "config: key \"f\" is not an integer: \"1.5\"",
                       ConfigError);
  CHECK_THROWS_WITH_AS(config.get_real("r"), "config: key \"r\" is not a number: \".\"",
                       ConfigError);
  CHECK_THROWS_WITH_AS(config.get_bool_or("b", false),
                       "config: key \"b\" is not a boolean: \"yes\"", ConfigError);
  CHECK(config.get_real("f") == 1.5);
}

TEST_CASE("kv overrides replace existing values") {
  KvConfig config = minibert::parse_kv_text("seed = 1\n");
  minibert::apply_kv_override(config, "seed=2");
  CHECK(config.get("seed") == "2");
  minibert::apply_kv_override(config, "new.key = spaced value ");
  CHECK(config.get("new.key") == "spaced value");
  CHECK_THROWS_WITH_AS(minibert::apply_kv_override(config, "broken"),
                       "config: --set \"broken\": expected key=value, got \"broken\"",
                       ConfigError);
}

TEST_CASE("content hashing matches the reference vectors") {
  CHECK(minibert::fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(minibert::fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(minibert::fnv1a64("hello world\n") == 0x782e1488cd5a68b7ull);
  CHECK(minibert::fnv1a64("minibert") == 0x4e6d1204a5d53eb1ull);

  // Independent restatement of the recurrence, over generated strings.
  minibert::Rng rng(2024);
  for (int i = 0; i < 50; ++i) {
    std::string bytes;
    int length = static_cast<int>(rng.below(64));
    for (int j = 0; j < length; ++j)
      bytes.push_back(static_cast<char>(rng.below(256)));
    std::uint64_t expected = 14695981039346656037ull;
    for (char c : bytes) {
      expected ^= static_cast<unsigned char>(c);
      expected *= 1099511628211ull;
    }
    CHECK(minibert::fnv1a64(bytes) == expected);
  }

  std::string dir = test_dir("digest");
  minibert::write_text_file(dir + "/f.txt", "hello world\n");
  CHECK(minibert::digest_file(dir + "/f.txt") == "782e1488cd5a68b7");
  minibert::write_text_file(dir + "/empty.txt", "");
  CHECK(minibert::digest_file(dir + "/empty.txt") == "cbf29ce484222325");
}

TEST_CASE("manifests round-trip through JSON") {
  RunManifest manifest;
  manifest.command = "pretrain";
  manifest.config = {{"seed", "7"}, {"model.hidden", "32"}};
  manifest.seed = 7;
  manifest.inputs = {{"corpus.txt", "782e1488cd5a68b7"}};
  manifest.outputs = {"out/checkpoint.ckpt", "out/trace.tsv"};
  manifest.wall_seconds = 1.25;
  manifest.metrics = {{"final_mlm_loss", 0.1 + 0.2}, {"delta", 84.3 - 79.5}};

  std::string json = minibert::serialize_manifest(manifest);
  CHECK(json.back() == '\n');
  RunManifest back = minibert::parse_manifest(json);
  CHECK(back.command == manifest.command);
  CHECK(back.config == manifest.config);
  CHECK(back.seed == manifest.seed);
  CHECK(back.inputs == manifest.inputs);
  CHECK(back.outputs == manifest.outputs);
  CHECK(back.wall_seconds == manifest.wall_seconds);
  REQUIRE(back.metrics.size() == 2);
  // Doubles survive serialization bitwise, including non-representable
  // decimal results.
  CHECK(back.metrics.at("final_mlm_loss") == 0.1 + 0.2);
  CHECK(back.metrics.at("delta") == 84.3 - 79.5);

  std::string dir = test_dir("manifest");
  minibert::write_manifest(dir + "/manifest.json", manifest);
  RunManifest from_file = minibert::read_manifest(dir + "/manifest.json");
  CHECK(from_file.metrics == manifest.metrics);
  CHECK(minibert::serialize_manifest(from_file) == json);

  CHECK_THROWS_WITH_AS(minibert::parse_manifest("not json"),
                       doctest::Contains("manifest: invalid JSON"), std::runtime_error);
  CHECK_THROWS_WITH_AS(minibert::parse_manifest("{\"command\": \"x\"}"),
                       doctest::Contains("manifest: missing or mistyped field"),
                       std::runtime_error);
}

TEST_CASE("comparing identical runs yields zero deltas") {
  RunManifest run;
  run.command = "evaluate";
  run.metrics = {{"f1", 0.875}, {"accuracy", 0.9375}};
  CompareReport report = minibert::compare_runs({run, run});
  CHECK(report.keys == std::vector<std::string>{"accuracy", "f1"});
  CHECK(report.shared == report.keys);
  CHECK(report.means[0] == report.means[1]);
  CHECK(report.mean_deltas == std::vector<double>{0.0, 0.0});
  CHECK(report.table.find("0.000000") != std::string::npos);
}

TEST_CASE("comparison reports mean deltas across shared metrics") {
  RunManifest base;
  base.metrics = {{"mean", 79.5}};
  RunManifest better;
  better.metrics = {{"mean", 84.3}};
  CompareReport report = minibert::compare_runs({base, better});
  CHECK(report.mean_deltas[1] == doctest::Approx(4.8).epsilon(1e-12));
  CHECK(report.table.find("4.800000") != std::string::npos);
  CHECK(report.table.find("delta2") != std::string::npos);

  RunManifest third;
  third.metrics = {{"mean", 80.0}, {"extra", 1.0}};
  CompareReport partial = minibert::compare_runs({base, better, third});
  CHECK(partial.keys == std::vector<std::string>{"extra", "mean"});
  CHECK(partial.shared == std::vector<std::string>{"mean"});
  // "extra" exists only in run 3; the other cells render as "-".
  CHECK(partial.table.find("-") != std::string::npos);
  CHECK(partial.means[2] == 80.0);

  CHECK_THROWS_WITH_AS(minibert::compare_runs({base}),
                       "compare_runs: need at least two manifests", std::runtime_error);
  RunManifest disjoint;
  disjoint.metrics = {{"other", 1.0}};
  CHECK_THROWS_WITH_AS(minibert::compare_runs({base, disjoint}),
                       "compare_runs: no shared metric keys", std::runtime_error);
}

TEST_CASE("the help flag exits zero") {
  CliResult help = run_cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("SUBCOMMAND") != std::string::npos);
  CHECK(help.err.empty());

  CliResult sub_help = run_cli({"pretrain", "--help"});
  CHECK(sub_help.code == 0);
  CHECK(sub_help.out.find("--seed") != std::string::npos);

  CliResult none = run_cli({});
  CHECK(none.code == 2);
  check_error_shape(none);
}

TEST_CASE("train-vocab produces a vocabulary and manifest") {
  std::string dir = test_dir("train_vocab");
  std::string corpus = dir + "/corpus.txt";
  minibert::write_text_file(corpus, letter_corpus_text());
  std::string out = dir + "/out";
  CliResult r = run_cli({"train-vocab",
                         "--set", "data.corpus=" + corpus,
                         "--set", "vocab.target_size=40",
                         "--out", out});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(out + "/vocab.txt"));
  CHECK(fs::exists(out + "/merges.txt"));
  Vocabulary vocab = minibert::load_vocab(out + "/vocab.txt", out + "/merges.txt");
  CHECK(vocab.size() > 0);

  RunManifest manifest = minibert::read_manifest(out + "/manifest.json");
  CHECK(manifest.command == "train-vocab");
  CHECK(manifest.seed == 0);
  CHECK(manifest.config.at("output.dir") == out);
  CHECK(manifest.config.at("vocab.target_size") == "40");
  REQUIRE(manifest.inputs.count(corpus) == 1);
  CHECK(manifest.inputs.at(corpus) == minibert::digest_file(corpus));
  CHECK(manifest.outputs ==
        std::vector<std::string>{out + "/vocab.txt", out + "/merges.txt"});
  CHECK(manifest.metrics.at("vocab_size") == static_cast<double>(vocab.size()));
  CHECK(manifest.wall_seconds >= 0.0);
  CHECK(r.out.find("manifest.json") != std::string::npos);
}

TEST_CASE("pretrain with zero steps writes the initialization") {
  const Pipeline& p = pipeline();
  std::string out = test_dir("pretrain_zero");
  CliResult r = run_cli({"pretrain", "--config", p.model_cfg,
                         "--set", "data.corpus=" + p.corpus,
                         "--set", "data.vocab=" + p.vocab,
                         "--set", "pretrain.total_steps=0",
                         "--set", "pretrain.eval_examples=0",
                         "--seed", "7", "--out", out});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);

  // Oracle: the checkpoint must be exactly the seeded initialization.
  minibert::ModelConfig mc;
  mc.vocab_size = letter_vocab().size();
  mc.hidden = 32;
  mc.layers = 1;
  mc.heads = 2;
  mc.intermediate = 64;
  mc.max_seq = 16;
  mc.dropout = 0.0;
  minibert::BertEncoder encoder(mc, minibert::mix_seed(7, 1), true);
  std::string oracle = test_dir("pretrain_zero_oracle") + "/init.ckpt";
  minibert::save_checkpoint(oracle, encoder.params());
  CHECK(minibert::read_text_file(out + "/checkpoint.ckpt") ==
        minibert::read_text_file(oracle));
  CHECK(minibert::read_text_file(out + "/trace.tsv").empty());

  RunManifest manifest = minibert::read_manifest(out + "/manifest.json");
  CHECK(manifest.seed == 7);
  CHECK(manifest.metrics.empty());
  CHECK(manifest.config.at("pretrain.total_steps") == "0");
}

TEST_CASE("pretraining through the command line records losses") {
  const Pipeline& p = pipeline();
  REQUIRE(fs::exists(p.checkpoint));
  std::vector<std::string> trace_lines = minibert::read_lines(p.pretrain_dir + "/trace.tsv");
  CHECK(trace_lines.size() == 30);
  CHECK(trace_lines[0].rfind("0\t", 0) == 0);  // steps are zero-based
  CHECK(trace_lines[29].rfind("29\t", 0) == 0);

  RunManifest manifest = minibert::read_manifest(p.pretrain_dir + "/manifest.json");
  CHECK(manifest.command == "pretrain");
  CHECK(manifest.seed == 7);
  CHECK(manifest.metrics.count("final_mlm_loss") == 1);
  CHECK(manifest.metrics.count("final_nsp_loss") == 1);
  CHECK(manifest.metrics.count("mlm_accuracy") == 1);
  CHECK(manifest.metrics.count("nsp_accuracy") == 1);
  CHECK(manifest.metrics.at("final_mlm_loss") > 0.0);
  CHECK(manifest.inputs.size() == 2);  // corpus + vocab
  // The snapshot keeps file-sourced and overridden keys alike.
  CHECK(manifest.config.at("model.hidden") == "32");
  CHECK(manifest.config.at("seed") == "7");
}

TEST_CASE("fine-tuning through the command line is reproducible") {
  const Pipeline& p = pipeline();
  auto finetune_args = [&](const std::string& out) {
    return std::vector<std::string>{"finetune", "--config", p.model_cfg,
                                    "--set", "data.vocab=" + p.vocab,
                                    "--set", "data.checkpoint=" + p.checkpoint,
                                    "--set", "data.train=" + p.train,
                                    "--set", "data.validation=" + p.val,
                                    "--set", "task.kind=token",
                                    "--set", "finetune.epochs=2",
                                    "--set", "finetune.max_seq=16",
                                    "--seed", "3", "--out", out};
  };
  std::string out_a = test_dir("finetune_a");
  CliResult a = run_cli(finetune_args(out_a));
  CAPTURE(a.err);
  REQUIRE(a.code == 0);
  CHECK(fs::exists(out_a + "/finetuned.ckpt"));
  CHECK(fs::exists(out_a + "/trace.tsv"));

  RunManifest manifest = minibert::read_manifest(out_a + "/manifest.json");
  CHECK(manifest.command == "finetune");
  CHECK(manifest.seed == 3);
  CHECK(manifest.metrics.count("f1") == 1);
  CHECK(manifest.metrics.count("word_accuracy") == 1);
  std::vector<std::string> trace_lines = minibert::read_lines(out_a + "/trace.tsv");
  CHECK(trace_lines.size() == 2);  // one validation entry per epoch

  // Same configuration and seed: artifacts must match byte for byte.
  std::string out_b = test_dir("finetune_b");
  CliResult b = run_cli(finetune_args(out_b));
  REQUIRE(b.code == 0);
  CHECK(minibert::read_text_file(out_a + "/finetuned.ckpt") ==
        minibert::read_text_file(out_b + "/finetuned.ckpt"));
  CHECK(minibert::read_text_file(out_a + "/trace.tsv") ==
        minibert::read_text_file(out_b + "/trace.tsv"));
  RunManifest other = minibert::read_manifest(out_b + "/manifest.json");
  CHECK(other.metrics == manifest.metrics);

  // The fine-tuned checkpoint carries the task head.
  std::map<std::string, Tensor> tensors =
      minibert::read_checkpoint(out_a + "/finetuned.ckpt");
  // Labels were derived from the training tag set (B-Chem, B-Dis, I-Dis, O).
  REQUIRE(tensors.count("head.weight") == 1);
  CHECK(tensors.at("head.weight").shape == std::vector<int64_t>{32, 4});
}

TEST_CASE("prediction and evaluation close the loop") {
  const Pipeline& p = pipeline();
  std::string ft_dir = test_dir("loop_finetune");
  CliResult ft = run_cli({"finetune", "--config", p.model_cfg,
                          "--set", "data.vocab=" + p.vocab,
                          "--set", "data.checkpoint=" + p.checkpoint,
                          "--set", "data.train=" + p.train,
                          "--set", "task.kind=token",
                          "--set", "task.labels=B-Chem,B-Dis,I-Dis,O",
                          "--set", "finetune.epochs=1",
                          "--set", "finetune.max_seq=16",
                          "--seed", "3", "--out", ft_dir});
  CAPTURE(ft.err);
  REQUIRE(ft.code == 0);
  std::string finetuned = ft_dir + "/finetuned.ckpt";

  std::string predict_dir = test_dir("loop_predict");
  CliResult pr = run_cli({"predict", "--config", p.model_cfg,
                          "--set", "data.vocab=" + p.vocab,
                          "--set", "data.checkpoint=" + finetuned,
                          "--set", "data.examples=" + p.val,
                          "--set", "task.kind=token",
                          "--set", "task.labels=B-Chem,B-Dis,I-Dis,O",
                          "--out", predict_dir});
  CAPTURE(pr.err);
  REQUIRE(pr.code == 0);
  std::string predictions = predict_dir + "/predictions.tsv";
  REQUIRE(fs::exists(predictions));
  RunManifest predict_manifest = minibert::read_manifest(predict_dir + "/manifest.json");
  CHECK(predict_manifest.metrics.at("truncated") == 0.0);
  // Three sentences, three tab-separated columns, gold carried through.
  std::vector<std::string> lines = minibert::read_lines(predictions);
  CHECK(lines[0].rfind("g\tB-Dis\t", 0) == 0);

  std::string eval_model_dir = test_dir("loop_eval_model");
  CliResult em = run_cli({"evaluate", "--config", p.model_cfg,
                          "--set", "data.vocab=" + p.vocab,
                          "--set", "data.checkpoint=" + finetuned,
                          "--set", "data.examples=" + p.val,
                          "--set", "task.kind=token",
                          "--set", "task.labels=B-Chem,B-Dis,I-Dis,O",
                          "--out", eval_model_dir});
  CAPTURE(em.err);
  REQUIRE(em.code == 0);
  CHECK(em.out.find("f1 ") != std::string::npos);
  CHECK(fs::exists(eval_model_dir + "/metrics.txt"));

  std::string eval_file_dir = test_dir("loop_eval_file");
  CliResult ef = run_cli({"evaluate",
                          "--set", "data.predictions=" + predictions,
                          "--set", "task.kind=token",
                          "--set", "task.labels=B-Chem,B-Dis,I-Dis,O",
                          "--out", eval_file_dir});
  CAPTURE(ef.err);
  REQUIRE(ef.code == 0);

  // Scoring the model directly and scoring its prediction file must
  // agree exactly, through the manifests and the rendered reports.
  RunManifest model_manifest = minibert::read_manifest(eval_model_dir + "/manifest.json");
  RunManifest file_manifest = minibert::read_manifest(eval_file_dir + "/manifest.json");
  CHECK(model_manifest.metrics == file_manifest.metrics);
  CHECK(minibert::read_text_file(eval_model_dir + "/metrics.txt") ==
        minibert::read_text_file(eval_file_dir + "/metrics.txt"));
  CHECK(model_manifest.metrics.count("word_f1") == 1);
}

TEST_CASE("evaluate scores prediction files without a model") {
  std::string dir = test_dir("eval_files");

  minibert::write_text_file(dir + "/scores.tsv",
                            "0\t1\t2\n1\t2\t2.5\n2\t3\t3.5\n3\t0.5\t1\n");
  CliResult sim = run_cli({"evaluate",
                           "--set", "data.predictions=" + dir + "/scores.tsv",
                           "--set", "task.kind=similarity",
                           "--out", dir + "/sim"});
  CAPTURE(sim.err);
  REQUIRE(sim.code == 0);
  CHECK(sim.out.find("mse ") != std::string::npos);
  CHECK(sim.out.find("pearson ") != std::string::npos);

  minibert::write_text_file(dir + "/qa.tsv", "0\tyes\tyes\n1\tno\tmaybe\n");
  CliResult qa = run_cli({"evaluate",
                          "--set", "data.predictions=" + dir + "/qa.tsv",
                          "--set", "task.kind=qa",
                          "--set", "task.labels=maybe,no,yes",
                          "--out", dir + "/qa"});
  CAPTURE(qa.err);
  REQUIRE(qa.code == 0);
  CHECK(qa.out.find("accuracy 0.500000") != std::string::npos);
  CHECK(qa.out.find("\nf1 ") == std::string::npos);  // accuracy averaging has no f1 alias

  minibert::write_text_file(dir + "/sets.tsv", "0\tgrowth,death\tgrowth\n1\t\t\n");
  CliResult ml = run_cli({"evaluate",
                          "--set", "data.predictions=" + dir + "/sets.tsv",
                          "--set", "task.kind=multilabel",
                          "--out", dir + "/ml"});
  CAPTURE(ml.err);
  REQUIRE(ml.code == 0);
  CHECK(ml.out.find("accuracy 0.500000") != std::string::npos);
  CHECK(ml.out.find("micro_f1") != std::string::npos);

  minibert::write_text_file(dir + "/rel.tsv", "0\tpositive\tpositive\n1\tnegative\tpositive\n");
  CliResult seq = run_cli({"evaluate",
                           "--set", "data.predictions=" + dir + "/rel.tsv",
                           "--set", "task.kind=sequence",
                           "--set", "task.averaging=macro",
                           "--out", dir + "/seq"});
  CAPTURE(seq.err);
  REQUIRE(seq.code == 0);
  CHECK(seq.out.find("macro_f1") != std::string::npos);
}

TEST_CASE("align-vocab remaps embeddings and the output bias") {
  std::string dir = test_dir("align");
  Vocabulary base;
  base.tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "b", "c"};
  base.finalize();
  minibert::save_vocab(dir + "/base_vocab.txt", base);
  Vocabulary extended;
  extended.tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "x", "b"};
  extended.finalize();
  minibert::save_vocab(dir + "/new_vocab.txt", extended);

  std::map<std::string, Tensor> base_tensors;
  Tensor embeddings = Tensor::zeros({8, 4});
  for (std::size_t i = 0; i < embeddings.data.size(); ++i)
    embeddings.data[i] = 0.0625 * static_cast<double>(i + 1);
  base_tensors["embeddings.token"] = embeddings;
  Tensor bias = Tensor::zeros({8});
  for (std::size_t i = 0; i < bias.data.size(); ++i)
    bias.data[i] = 0.125 * static_cast<double>(i);
  base_tensors["mlm.output.bias"] = bias;
  Tensor passthrough = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < passthrough.data.size(); ++i)
    passthrough.data[i] = 1.0 + 0.25 * static_cast<double>(i);
  base_tensors["encoder.layer0.attention.query.weight"] = passthrough;
  minibert::write_checkpoint(dir + "/base.ckpt", base_tensors);

  std::string out = dir + "/out";
  CliResult r = run_cli({"align-vocab",
                         "--set", "data.vocab=" + dir + "/new_vocab.txt",
                         "--set", "data.base_vocab=" + dir + "/base_vocab.txt",
                         "--set", "data.base_checkpoint=" + dir + "/base.ckpt",
                         "--seed", "9", "--out", out});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);

  std::map<std::string, Tensor> base_read = minibert::read_checkpoint(dir + "/base.ckpt");
  std::map<std::string, Tensor> aligned = minibert::read_checkpoint(out + "/aligned.ckpt");
  const Tensor& new_emb = aligned.at("embeddings.token");
  REQUIRE(new_emb.shape == std::vector<int64_t>{8, 4});
  const Tensor& old_emb = base_read.at("embeddings.token");
  // Tokens present in both vocabularies keep their rows; "b" moved ids.
  for (const std::string& token : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "b"}) {
    int64_t new_id = extended.id_of(token);
    int64_t old_id = base.id_of(token);
    for (int64_t d = 0; d < 4; ++d)
      CHECK(new_emb.data[static_cast<std::size_t>(new_id * 4 + d)] ==
            old_emb.data[static_cast<std::size_t>(old_id * 4 + d)]);
  }
  const Tensor& new_bias = aligned.at("mlm.output.bias");
  REQUIRE(new_bias.shape == std::vector<int64_t>{8});
  const Tensor& old_bias = base_read.at("mlm.output.bias");
  for (const std::string& token : {"a", "b", "[MASK]"}) {
    int64_t new_id = extended.id_of(token);
    int64_t old_id = base.id_of(token);
    CHECK(new_bias.data[static_cast<std::size_t>(new_id)] ==
          old_bias.data[static_cast<std::size_t>(old_id)]);
  }
  CHECK(aligned.at("encoder.layer0.attention.query.weight").data == passthrough.data);

  RunManifest manifest = minibert::read_manifest(out + "/manifest.json");
  CHECK(manifest.command == "align-vocab");
  CHECK(manifest.seed == 9);
  CHECK(manifest.metrics.at("vocab_size") == 8.0);
}

TEST_CASE("flag overrides outrank file and set assignments") {
  const Pipeline& p = pipeline();
  std::string dir = test_dir("precedence");
  minibert::write_text_file(dir + "/run.cfg",
                            "seed = 1\n"
                            "pretrain.total_steps = 0\n"
                            "pretrain.eval_examples = 0\n"
                            "model.hidden = 8\n"
                            "model.layers = 1\n"
                            "model.heads = 2\n"
                            "model.intermediate = 16\n"
                            "model.max_seq = 16\n"
                            "model.dropout = 0\n"
                            "data.corpus = " + p.corpus + "\n"
                            "data.vocab = " + p.vocab + "\n");
  CliResult r = run_cli({"pretrain", "--config", dir + "/run.cfg",
                         "--set", "seed=2",
                         "--set", "model.hidden=16",
                         "--set", "model.intermediate=32",
                         "--seed", "3", "--out", dir + "/out"});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  RunManifest manifest = minibert::read_manifest(dir + "/out/manifest.json");
  CHECK(manifest.seed == 3);             // --seed wins over --set and the file
  CHECK(manifest.config.at("seed") == "3");
  CHECK(manifest.config.at("model.hidden") == "16");  // --set wins over the file
  std::map<std::string, Tensor> tensors =
      minibert::read_checkpoint(dir + "/out/checkpoint.ckpt");
  CHECK(tensors.at("embeddings.token").shape == std::vector<int64_t>{31, 16});
}

TEST_CASE("configuration errors exit with the usage status") {
  const Pipeline& p = pipeline();
  struct Case {
    std::vector<std::string> args;
    std::string fragment;
  };
  std::vector<Case> cases = {
      {{"train-vocab", "--set", "bogus.key=1", "--out", "x"}, "unknown key \"bogus.key\""},
      {{"train-vocab", "--set", "data.corpus=/definitely/missing.txt", "--out",
        test_dir("err_missing")},
       "file not found"},
      {{"pretrain", "--config", p.model_cfg, "--set", "data.corpus=" + p.corpus, "--set",
        "data.vocab=" + p.vocab, "--set", "pretrain.total_steps=0", "--out",
        test_dir("err_seed")},
       "pretrain requires a seed"},
      {{"finetune", "--config", p.model_cfg, "--set", "data.vocab=" + p.vocab, "--set",
        "data.checkpoint=" + p.checkpoint, "--set", "data.train=" + p.train, "--set",
        "task.kind=token", "--set", "finetune.max_seq=16", "--set",
        "finetune.batch_size=20", "--seed", "3", "--out", test_dir("err_batch")},
       "batch_size must be 16 or 32"},
      {{"finetune", "--config", p.model_cfg, "--set", "data.vocab=" + p.vocab, "--set",
        "data.checkpoint=" + p.checkpoint, "--set", "data.train=" + p.train, "--set",
        "task.kind=token", "--seed", "3", "--out", test_dir("err_max_seq")},
       "finetune.max_seq 128 exceeds model.max_seq 16"},
      {{"evaluate", "--set", "task.preset=chemprot", "--set", "task.kind=qa", "--out",
        test_dir("err_both")},
       "mutually exclusive"},
      {{"evaluate", "--set", "task.preset=unheard-of", "--out", test_dir("err_preset")},
       "unknown task.preset"},
      {{"evaluate", "--set", "task.kind=spans", "--out", test_dir("err_kind")},
       "unknown task.kind"},
      {{"evaluate", "--set", "task.kind=qa", "--set", "task.averaging=mean", "--out",
        test_dir("err_avg")},
       "unknown task.averaging"},
      {{"evaluate", "--set", "task.kind=qa", "--out", test_dir("err_no_data")},
       "missing required key \"data.vocab\""},
      {{"evaluate", "--out", test_dir("err_no_task")}, "set task.preset or task.kind"},
      {{"train-vocab", "--set", "nonsense", "--out", "x"}, "expected key=value"},
      {{"train-vocab", "--config", "/definitely/missing.cfg", "--out", "x"},
       "config: file not found"},
      {{"pretrain", "--set", "model.hidden=abc", "--seed", "1", "--out", "x",
        "--set", "data.corpus=" + p.corpus, "--set", "data.vocab=" + p.vocab, "--set",
        "model.layers=1", "--set", "model.heads=2", "--set", "model.intermediate=8",
        "--set", "pretrain.total_steps=0"},
       "is not an integer"},
      {{"compare-runs", "just-one.json"}, "need at least two manifest"},
      {{"train-vocab", "--unknown-flag"}, ""},
  };
  for (const Case& c : cases) {
    CAPTURE(c.fragment);
    CliResult r = run_cli(c.args);
    CHECK(r.code == 2);
    check_error_shape(r);
    CHECK(r.err.find(c.fragment) != std::string::npos);
  }
}

TEST_CASE("runtime failures exit with the failure status") {
  const Pipeline& p = pipeline();
  std::string dir = test_dir("runtime_errors");

  // Data that parses as a file but violates the format.
  minibert::write_text_file(dir + "/bad.conll", "word\n");
  CliResult bad_data = run_cli({"finetune", "--config", p.model_cfg,
                                "--set", "data.vocab=" + p.vocab,
                                "--set", "data.checkpoint=" + p.checkpoint,
                                "--set", "data.train=" + dir + "/bad.conll",
                                "--set", "task.kind=token",
                                "--set", "finetune.max_seq=16",
                                "--seed", "3", "--out", dir + "/bad_data_out"});
  CHECK(bad_data.code == 1);
  check_error_shape(bad_data);

  // A checkpoint that is not a checkpoint.
  minibert::write_text_file(dir + "/junk.ckpt", "junk bytes\n");
  CliResult bad_ckpt = run_cli({"evaluate", "--config", p.model_cfg,
                                "--set", "data.vocab=" + p.vocab,
                                "--set", "data.checkpoint=" + dir + "/junk.ckpt",
                                "--set", "data.examples=" + p.val,
                                "--set", "task.kind=token",
                                "--out", dir + "/bad_ckpt_out"});
  CHECK(bad_ckpt.code == 1);
  check_error_shape(bad_ckpt);

  // Manifest comparison over a corrupt manifest.
  minibert::write_text_file(dir + "/a.json", "{broken");
  minibert::write_text_file(dir + "/b.json", "{broken");
  CliResult bad_manifest = run_cli({"compare-runs", dir + "/a.json", dir + "/b.json"});
  CHECK(bad_manifest.code == 1);
  check_error_shape(bad_manifest);
  CHECK(bad_manifest.err.find("manifest: invalid JSON") != std::string::npos);
}

TEST_CASE("compare-runs prints the comparison table") {
  std::string dir = test_dir("compare_cli");
  RunManifest base;
  base.command = "evaluate";
  base.metrics = {{"mean", 79.5}};
  RunManifest better = base;
  better.metrics = {{"mean", 84.3}};
  minibert::write_manifest(dir + "/a.json", base);
  minibert::write_manifest(dir + "/b.json", better);

  CliResult r = run_cli({"compare-runs", dir + "/a.json", dir + "/b.json",
                         "--out", dir + "/out"});
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("metric") != std::string::npos);
  CHECK(r.out.find("79.500000") != std::string::npos);
  CHECK(r.out.find("84.300000") != std::string::npos);
  CHECK(r.out.find("4.800000") != std::string::npos);
  CHECK(r.out.find("mean") != std::string::npos);
  // The written table matches what was printed, and no manifest is
  // produced for a comparison.
  CHECK(minibert::read_text_file(dir + "/out/compare.txt") == r.out);
  CHECK_FALSE(fs::exists(dir + "/out/manifest.json"));
}
