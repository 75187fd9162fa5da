#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "minibert/autograd.hpp"
#include "minibert/checkpoint.hpp"
#include "minibert/pretrain.hpp"
#include "minibert/rng.hpp"
#include "minibert/textio.hpp"

using minibert::MaskingPolicy;
using minibert::NspPair;
using minibert::PairEncoding;
using minibert::PretrainExample;
using minibert::PretrainOptions;
using minibert::Vocabulary;

namespace {

std::string test_dir() {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "minibert_pretrain_test";
  fs::create_directories(dir);
  return dir.string();
}

Vocabulary token_vocab(int n_nonspecial) {
  Vocabulary vocab;
  vocab.tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  for (int i = 0; i < n_nonspecial; ++i) vocab.tokens.push_back("t" + std::to_string(i));
  vocab.finalize();
  return vocab;
}

Vocabulary letter_vocab() {
  Vocabulary vocab;
  vocab.tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  for (char c = 'a'; c <= 'z'; ++c) vocab.tokens.push_back(std::string(1, c));
  vocab.finalize();
  return vocab;
}

// Four documents over disjoint letter ranges; each document is four
// rotations of its own letters, so sentence order and token identity are
// both learnable from a tiny corpus.
std::vector<std::vector<std::string>> letter_corpus() {
  std::vector<std::vector<std::string>> docs;
  for (int d = 0; d < 4; ++d) {
    std::vector<std::string> sentences;
    for (int r = 0; r < 4; ++r) {
      std::string sentence;
      for (int i = 0; i < 4; ++i) {
        if (i > 0) sentence += ' ';
        sentence += static_cast<char>('a' + 4 * d + (i + r) % 4);
      }
      sentences.push_back(sentence);
    }
    docs.push_back(sentences);
  }
  return docs;
}

// [CLS] t0..t(n-1) [SEP] framed directly, segments all zero.
PairEncoding framed_ids(const Vocabulary& vocab, int n_tokens) {
  PairEncoding enc;
  enc.ids.push_back(vocab.cls_id);
  for (int i = 0; i < n_tokens; ++i)
    enc.ids.push_back(vocab.id_of("t" + std::to_string(i % (vocab.size() - 5))));
  enc.ids.push_back(vocab.sep_id);
  enc.segment_ids.assign(enc.ids.size(), 0);
  return enc;
}

minibert::ModelConfig tiny_config(int64_t vocab_size, double dropout) {
  minibert::ModelConfig config;
  config.vocab_size = vocab_size;
  config.hidden = 16;
  config.layers = 1;
  config.heads = 2;
  config.intermediate = 32;
  config.max_seq = 16;
  config.dropout = dropout;
  return config;
}

bool same_pairs(const std::vector<NspPair>& a, const std::vector<NspPair>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].a != b[i].a || a[i].b != b[i].b || a[i].is_next != b[i].is_next)
      return false;
  return true;
}

}  // namespace

TEST_CASE("masking policy invariants are enforced") {
  Vocabulary vocab = token_vocab(10);
  PairEncoding enc = framed_ids(vocab, 8);
  MaskingPolicy policy;
  policy.p_select = 0.0;
  CHECK_THROWS_WITH_AS(minibert::apply_masking(enc, vocab, policy),
                       "masking policy: p_select must be in (0,1)", std::runtime_error);
  policy.p_select = 1.0;
  CHECK_THROWS_AS(minibert::apply_masking(enc, vocab, policy), std::runtime_error);
  policy = MaskingPolicy{};
  policy.p_keep = 0.3;  // sum now 1.2
  CHECK_THROWS_WITH_AS(minibert::apply_masking(enc, vocab, policy),
                       "masking policy: action probabilities must sum to 1",
                       std::runtime_error);
  policy = MaskingPolicy{};
  policy.p_mask = 1.1;
  policy.p_random = -0.1;
  policy.p_keep = 0.0;
  CHECK_THROWS_AS(minibert::apply_masking(enc, vocab, policy), std::runtime_error);
}

TEST_CASE("nsp pair construction") {
  SUBCASE("a single two-sentence document yields its one consecutive pair") {
    std::vector<std::vector<std::string>> docs = {{"first sentence", "second sentence"}};
    auto pairs = minibert::build_nsp_pairs(docs, 1, 3);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].a == "first sentence");
    CHECK(pairs[0].b == "second sentence");
    CHECK(pairs[0].is_next);
  }
  SUBCASE("labels split exactly half and half") {
    std::vector<std::vector<std::string>> docs = {
        {"d0 s0", "d0 s1", "d0 s2"}, {"d1 s0", "d1 s1"}, {"d2 s0", "d2 s1", "d2 s2"}};
    auto pairs = minibert::build_nsp_pairs(docs, 100, 7);
    REQUIRE(pairs.size() == 100);
    std::size_t positives = 0;
    std::map<std::string, std::pair<std::size_t, std::size_t>> where;  // sentence -> (doc, index)
    for (std::size_t d = 0; d < docs.size(); ++d)
      for (std::size_t s = 0; s < docs[d].size(); ++s) where[docs[d][s]] = {d, s};
    for (const NspPair& pair : pairs) {
      auto [da, ia] = where.at(pair.a);
      auto [db, ib] = where.at(pair.b);
      if (pair.is_next) {
        ++positives;
        CHECK(da == db);
        CHECK(ib == ia + 1);
      } else {
        CHECK(da != db);
      }
    }
    CHECK(positives == 50);
  }
  SUBCASE("an odd count rounds the positive half up") {
    std::vector<std::vector<std::string>> docs = {{"a1", "a2"}, {"b1", "b2"}};
    auto pairs = minibert::build_nsp_pairs(docs, 5, 11);
    std::size_t positives = 0;
    for (const NspPair& pair : pairs) positives += pair.is_next ? 1 : 0;
    CHECK(positives == 3);
  }
  SUBCASE("the same seed reproduces the pair list") {
    auto docs = letter_corpus();
    CHECK(same_pairs(minibert::build_nsp_pairs(docs, 40, 7),
                     minibert::build_nsp_pairs(docs, 40, 7)));
    CHECK_FALSE(same_pairs(minibert::build_nsp_pairs(docs, 40, 7),
                           minibert::build_nsp_pairs(docs, 40, 8)));
  }
  SUBCASE("corpus deficiencies are named") {
    std::vector<std::vector<std::string>> singles = {{"one"}, {"two"}};
    CHECK_THROWS_WITH_AS(minibert::build_nsp_pairs(singles, 2, 1),
                         "build_nsp_pairs: no document with two consecutive sentences",
                         std::runtime_error);
    std::vector<std::vector<std::string>> lone = {{"one", "two", "three"}};
    CHECK_THROWS_WITH_AS(minibert::build_nsp_pairs(lone, 2, 1),
                         "build_nsp_pairs: drawing NotNext pairs needs at least 2 documents",
                         std::runtime_error);
    CHECK(minibert::build_nsp_pairs(lone, 1, 1).size() == 1);  // positives only
    CHECK(minibert::build_nsp_pairs(singles, 0, 1).empty());
  }
}

TEST_CASE("masking selects the exact count and respects specials") {
  Vocabulary vocab = token_vocab(30);
  PairEncoding enc = framed_ids(vocab, 20);
  MaskingPolicy policy;
  policy.seed = 17;
  PretrainExample ex = minibert::apply_masking(enc, vocab, policy);
  REQUIRE(ex.ids.size() == enc.ids.size());
  CHECK(ex.segment_ids == enc.segment_ids);
  CHECK(ex.attention_mask == std::vector<uint8_t>(enc.ids.size(), 1));
  std::size_t selected = 0;
  for (std::size_t i = 0; i < ex.ids.size(); ++i) {
    if (ex.mlm_labels[i] >= 0) {
      ++selected;
      CHECK_FALSE(vocab.is_special(enc.ids[i]));
      CHECK(ex.mlm_labels[i] == enc.ids[i]);
    } else {
      CHECK(ex.ids[i] == enc.ids[i]);  // unselected positions are untouched
    }
  }
  CHECK(selected == 3);  // max(1, round(0.15 * 20))

  SUBCASE("degenerate action probabilities") {
    MaskingPolicy all_mask{0.15, 1.0, 0.0, 0.0, 5};
    PretrainExample masked = minibert::apply_masking(enc, vocab, all_mask);
    for (std::size_t i = 0; i < masked.ids.size(); ++i)
      if (masked.mlm_labels[i] >= 0) CHECK(masked.ids[i] == vocab.mask_id);

    MaskingPolicy all_random{0.15, 0.0, 1.0, 0.0, 5};
    PretrainExample randomized = minibert::apply_masking(enc, vocab, all_random);
    for (std::size_t i = 0; i < randomized.ids.size(); ++i)
      if (randomized.mlm_labels[i] >= 0) {
        CHECK_FALSE(vocab.is_special(randomized.ids[i]));
        CHECK(randomized.mlm_labels[i] == enc.ids[i]);
      }

    MaskingPolicy all_keep{0.15, 0.0, 0.0, 1.0, 5};
    PretrainExample kept = minibert::apply_masking(enc, vocab, all_keep);
    CHECK(kept.ids == enc.ids);
    std::size_t kept_selected = 0;
    for (int64_t label : kept.mlm_labels) kept_selected += label >= 0 ? 1 : 0;
    CHECK(kept_selected == 3);
  }
  SUBCASE("at least one position is always selected") {
    PairEncoding one = framed_ids(vocab, 1);
    PretrainExample ex_one = minibert::apply_masking(one, vocab, policy);
    std::size_t n = 0;
    for (int64_t label : ex_one.mlm_labels) n += label >= 0 ? 1 : 0;
    CHECK(n == 1);
  }
  SUBCASE("all-special sequences are rejected") {
    PairEncoding specials_only;
    specials_only.ids = {vocab.cls_id, vocab.sep_id};
    specials_only.segment_ids = {0, 0};
    CHECK_THROWS_WITH_AS(minibert::apply_masking(specials_only, vocab, policy),
                         "apply_masking: no maskable tokens", std::runtime_error);
  }
  SUBCASE("masking is a pure function of the seed") {
    PretrainExample again = minibert::apply_masking(enc, vocab, policy);
    CHECK(again.ids == ex.ids);
    CHECK(again.mlm_labels == ex.mlm_labels);
    MaskingPolicy other = policy;
    other.seed = 18;
    PretrainExample different = minibert::apply_masking(enc, vocab, other);
    CHECK((different.ids != ex.ids || different.mlm_labels != ex.mlm_labels));
  }
}

TEST_CASE("masking action frequencies match the policy over many draws") {
  Vocabulary vocab = token_vocab(100);
  PairEncoding enc = framed_ids(vocab, 100);
  std::size_t masked = 0, randomized = 0, kept = 0;
  for (int e = 0; e < 10000; ++e) {
    MaskingPolicy policy;
    policy.seed = minibert::mix_seed(99, static_cast<uint64_t>(e));
    PretrainExample ex = minibert::apply_masking(enc, vocab, policy);
    std::size_t selected = 0;
    for (std::size_t i = 0; i < ex.ids.size(); ++i) {
      if (ex.mlm_labels[i] < 0) continue;
      ++selected;
      if (ex.ids[i] == vocab.mask_id)
        ++masked;
      else if (ex.ids[i] != enc.ids[i])
        ++randomized;
      else
        ++kept;
    }
    REQUIRE(selected == 15);  // max(1, round(0.15 * 100)) for every example
  }
  double total = static_cast<double>(masked + randomized + kept);
  CHECK(total == 150000.0);
  CHECK(masked / total > 0.78);
  CHECK(masked / total < 0.82);
  CHECK(randomized / total > 0.08);
  CHECK(randomized / total < 0.12);
  CHECK(kept / total > 0.08);
  CHECK(kept / total < 0.12);
}

TEST_CASE("ignored label positions contribute exactly zero gradient") {
  minibert::Rng rng(4);
  minibert::Tensor logits({4, 6});
  for (double& v : logits.data) v = rng.gaussian();
  minibert::NodePtr leaf = minibert::make_leaf(logits, true, "logits");
  minibert::backward(minibert::cross_entropy(leaf, {2, -1, -1, 5}));
  for (int64_t row = 0; row < 4; ++row) {
    double row_norm = 0.0;
    for (int64_t col = 0; col < 6; ++col) row_norm += std::fabs(leaf->grad.at(row, col));
    if (row == 1 || row == 2)
      CHECK(row_norm == 0.0);
    else
      CHECK(row_norm > 0.0);
  }
}

TEST_CASE("pretraining is deterministic and checkpoints the final state") {
  Vocabulary vocab = letter_vocab();
  auto corpus = letter_corpus();
  minibert::ModelConfig config = tiny_config(vocab.size(), 0.1);
  PretrainOptions options;
  options.batch_size = 4;
  options.total_steps = 5;
  options.warmup_steps = 2;
  options.base_lr = 1e-3;
  options.seed = 9;
  options.policy.seed = 9;
  options.checkpoint_path = test_dir() + "/run_a.ckpt";
  options.checkpoint_every = 2;
  minibert::PretrainRun run_a = minibert::pretrain(config, corpus, vocab, options);
  PretrainOptions options_b = options;
  options_b.checkpoint_path = test_dir() + "/run_b.ckpt";
  minibert::PretrainRun run_b = minibert::pretrain(config, corpus, vocab, options_b);

  REQUIRE(run_a.trace.size() == 5);
  for (std::size_t i = 0; i < run_a.trace.size(); ++i) {
    CHECK(run_a.trace[i].step == i);
    CHECK(std::isfinite(run_a.trace[i].mlm));
    CHECK(std::isfinite(run_a.trace[i].nsp));
  }
  CHECK(minibert::serialize_trace(run_a.trace) == minibert::serialize_trace(run_b.trace));
  CHECK(minibert::read_text_file(options.checkpoint_path) ==
        minibert::read_text_file(options_b.checkpoint_path));

  SUBCASE("the serialized trace is one tab-separated line per step") {
    std::string text = minibert::serialize_trace(run_a.trace);
    std::size_t newlines = 0, tabs = 0;
    for (char c : text) {
      newlines += c == '\n' ? 1 : 0;
      tabs += c == '\t' ? 1 : 0;
    }
    CHECK(newlines == 5);
    CHECK(tabs == 10);
    CHECK(text.rfind("0\t", 0) == 0);
  }
}

TEST_CASE("zero steps leaves the initialization untouched") {
  Vocabulary vocab = letter_vocab();
  auto corpus = letter_corpus();
  minibert::ModelConfig config = tiny_config(vocab.size(), 0.1);
  PretrainOptions options;
  options.total_steps = 0;
  options.seed = 21;
  options.checkpoint_path = test_dir() + "/init_run.ckpt";
  minibert::PretrainRun run = minibert::pretrain(config, corpus, vocab, options);
  CHECK(run.trace.empty());
  minibert::BertEncoder fresh(config, minibert::mix_seed(21, 1), true);
  std::string fresh_path = test_dir() + "/init_fresh.ckpt";
  minibert::save_checkpoint(fresh_path, fresh.params());
  CHECK(minibert::read_text_file(options.checkpoint_path) ==
        minibert::read_text_file(fresh_path));
}

TEST_CASE("initial losses sit near the uniform-prediction bound") {
  Vocabulary vocab = letter_vocab();
  auto corpus = letter_corpus();
  minibert::ModelConfig config = tiny_config(vocab.size(), 0.0);
  PretrainOptions options;
  options.batch_size = 8;
  options.total_steps = 1;
  options.warmup_steps = 1;
  options.seed = 33;
  options.policy.seed = 33;
  minibert::PretrainRun run = minibert::pretrain(config, corpus, vocab, options);
  REQUIRE(run.trace.size() == 1);
  double ln_v = std::log(static_cast<double>(vocab.size()));
  double ln_2 = std::log(2.0);
  CHECK(std::fabs(run.trace[0].mlm - ln_v) / ln_v < 0.10);
  CHECK(std::fabs(run.trace[0].nsp - ln_2) / ln_2 < 0.10);
}

TEST_CASE("training reduces the loss on a tiny corpus") {
  Vocabulary vocab = letter_vocab();
  auto corpus = letter_corpus();
  minibert::ModelConfig config = tiny_config(vocab.size(), 0.0);
  PretrainOptions options;
  options.batch_size = 4;
  options.total_steps = 60;
  options.warmup_steps = 6;
  options.base_lr = 3e-3;
  options.seed = 5;
  options.policy.seed = 5;
  minibert::PretrainRun run = minibert::pretrain(config, corpus, vocab, options);
  auto window_mean = [&](std::size_t lo, std::size_t hi) {
    double total = 0.0;
    for (std::size_t i = lo; i < hi; ++i) total += run.trace[i].mlm + run.trace[i].nsp;
    return total / static_cast<double>(hi - lo);
  };
  double first = window_mean(0, 5);
  double last = window_mean(run.trace.size() - 5, run.trace.size());
  CHECK(last < first);

  SUBCASE("evaluation is deterministic and bounded") {
    minibert::PretrainEval eval_a =
        minibert::evaluate_pretrain(run.model, corpus, vocab, options, 32);
    minibert::PretrainEval eval_b =
        minibert::evaluate_pretrain(run.model, corpus, vocab, options, 32);
    CHECK(eval_a.mlm_accuracy == eval_b.mlm_accuracy);
    CHECK(eval_a.nsp_accuracy == eval_b.nsp_accuracy);
    CHECK(eval_a.mlm_accuracy >= 0.0);
    CHECK(eval_a.mlm_accuracy <= 1.0);
    CHECK(eval_a.nsp_accuracy >= 0.0);
    CHECK(eval_a.nsp_accuracy <= 1.0);
  }
}

TEST_CASE("a diverging run aborts with the step index") {
  Vocabulary vocab = letter_vocab();
  auto corpus = letter_corpus();
  minibert::ModelConfig config = tiny_config(vocab.size(), 0.0);
  PretrainOptions options;
  options.batch_size = 4;
  options.total_steps = 4;
  options.warmup_steps = 0;
  options.base_lr = 1e200;
  options.seed = 2;
  options.policy.seed = 2;
  CHECK_THROWS_WITH_AS(minibert::pretrain(config, corpus, vocab, options),
                       doctest::Contains("pretrain: non-finite loss at step"),
                       std::runtime_error);
}

TEST_CASE("corpus files split on blank lines into documents") {
  std::string path = test_dir() + "/corpus.txt";
  minibert::write_text_file(path, "a b\nc d\n\ne f\n\n\ng h\n");
  auto docs = minibert::load_pretrain_corpus(path);
  REQUIRE(docs.size() == 3);
  CHECK(docs[0] == std::vector<std::string>{"a b", "c d"});
  CHECK(docs[1] == std::vector<std::string>{"e f"});
  CHECK(docs[2] == std::vector<std::string>{"g h"});
}
