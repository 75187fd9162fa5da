#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "minibert/model.hpp"
#include "minibert/vocab.hpp"

namespace minibert {

struct MaskingPolicy {
  double p_select = 0.15;
  double p_mask = 0.8;
  double p_random = 0.1;
  double p_keep = 0.1;
  std::uint64_t seed = 0;
};

// NSP class ids for the two-way sentence-order head.
inline constexpr int64_t kNspIsNext = 0;
inline constexpr int64_t kNspNotNext = 1;

struct NspPair {
  std::string a;
  std::string b;
  bool is_next = false;
};

struct PretrainExample {
  std::vector<int64_t> ids;
  std::vector<int64_t> segment_ids;
  std::vector<uint8_t> attention_mask;
  std::vector<int64_t> mlm_labels;  // original id at selected positions, -1 elsewhere
  int64_t nsp_label = kNspNotNext;
};

// Pretraining corpus file: one sentence per line, a blank line closes a
// document.
std::vector<std::vector<std::string>> load_pretrain_corpus(const std::string& path);

// Exactly `count` pairs: ceil(count/2) consecutive-sentence pairs labeled
// IsNext and the rest cross-document pairs labeled NotNext, emitted in a
// seed-shuffled label order. Deterministic given the seed.
std::vector<NspPair> build_nsp_pairs(const std::vector<std::vector<std::string>>& documents,
                                     std::size_t count, std::uint64_t seed);

// Masks a framed pair encoding: selects max(1, round(p_select * maskable))
// non-special positions uniformly without replacement, then per selected
// position (in ascending order) replaces the token with [MASK] (p_mask), a
// uniform random non-special token (p_random), or keeps it (p_keep).
// Labels record the original id at selected positions only.
PretrainExample apply_masking(const PairEncoding& encoded, const Vocabulary& vocab,
                              const MaskingPolicy& policy);

struct StepLoss {
  std::size_t step = 0;
  double mlm = 0.0;
  double nsp = 0.0;
};

// "step<TAB>mlm<TAB>nsp" per line, full double precision.
std::string serialize_trace(const std::vector<StepLoss>& trace);

struct PretrainOptions {
  MaskingPolicy policy;
  std::size_t batch_size = 8;
  std::size_t total_steps = 0;
  std::size_t warmup_steps = 2000;
  double base_lr = 3e-4;
  double weight_decay = 0.01;
  std::uint64_t seed = 42;
  std::string checkpoint_path;       // empty: no checkpoint files written
  std::size_t checkpoint_every = 0;  // 0: only the final write
};

struct PretrainRun {
  BertEncoder model;
  std::vector<StepLoss> trace;
};

// Initializes the model from the config and trains the summed MLM + NSP
// cross-entropy with Adam under the warmup/linear-decay schedule. Every
// random stream is derived from the seeds, so a run is bitwise
// reproducible: model init uses mix_seed(seed, 1), the dropout stream of
// step s uses mix_seed(mix_seed(seed, 2), s), the pair pool (batch_size *
// total_steps examples) is built with mix_seed(seed, 3), and example e is
// masked with mix_seed(policy.seed, e). With total_steps = 0 the returned
// model (and any written checkpoint) is the initialization itself.
PretrainRun pretrain(const ModelConfig& config,
                     const std::vector<std::vector<std::string>>& corpus,
                     const Vocabulary& vocab, const PretrainOptions& options);

struct PretrainEval {
  double mlm_accuracy = 0.0;
  double nsp_accuracy = 0.0;
};

// Scores masked-token prediction (argmax over the vocabulary at selected
// positions) and sentence-order prediction on `count` freshly drawn
// examples: pairs from mix_seed(options.seed, 4), masking for example e
// from mix_seed(mix_seed(options.policy.seed, 5), e). Dropout is off.
PretrainEval evaluate_pretrain(const BertEncoder& model,
                               const std::vector<std::vector<std::string>>& corpus,
                               const Vocabulary& vocab, const PretrainOptions& options,
                               std::size_t count);

}  // namespace minibert
