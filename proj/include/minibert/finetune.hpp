#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "minibert/datasets.hpp"
#include "minibert/metrics.hpp"
#include "minibert/model.hpp"
#include "minibert/vocab.hpp"

namespace minibert {

enum class TaskKind {
  token_classification,
  sequence_classification,
  multi_label,
  similarity,
  qa_classification,
};

// A downstream task: what the head predicts and how it is scored.
struct TaskSpec {
  TaskKind kind = TaskKind::sequence_classification;
  std::vector<std::string> labels;  // tag/label inventory; empty for similarity
  Averaging averaging = Averaging::micro;  // sequence-classification reporting

  static TaskSpec token_classification(std::vector<std::string> tags);
  static TaskSpec sequence_classification(std::vector<std::string> labels,
                                          Averaging averaging = Averaging::micro);
  static TaskSpec multi_label(std::vector<std::string> labels);
  static TaskSpec similarity();
  static TaskSpec qa_classification(std::vector<std::string> labels);

  // Labels must be non-empty and duplicate-free (absent for similarity).
  void validate() const;
  int64_t label_id(const std::string& label) const;  // -1 when absent
  int64_t head_outputs() const;  // label count; 0 for similarity (no head)
};

struct FinetuneConfig {
  std::size_t batch_size = 16;  // 16 or 32
  double learning_rate = 5e-5;
  std::size_t epochs = 10;  // <= 100; 0 skips training
  int64_t max_seq = 128;
  std::uint64_t seed = 42;
  double weight_decay = 0.01;
  // Skip all parameter updates; metrics are computed once from the
  // checkpoint as loaded. The similarity task defaults to trained cosine,
  // so this flag recovers pure inference-time scoring.
  bool inference_only = false;

  void validate() const;
};

struct DatasetPreset {
  const char* name;
  TaskKind kind;
  double learning_rate;
  std::size_t batch_size;
  std::size_t epochs;
};

// Per-dataset hyperparameters (sequence labeling 5e-5/16/25 with the
// JNLPBA exception at 1e-5, classification-style tasks 32/10 at 2e-5 or
// 3e-5, similarity 2e-5/16/10). Lookup is case-insensitive; nullptr when
// the name is unknown.
const DatasetPreset* find_dataset_preset(const std::string& name);

// One example, task-typed by which fields are set: token classification
// uses words/word_tags, sequence classification text_a/label, question
// answering text_a (question) + text_b (context) + label, similarity
// text_a/text_b/score, multilabel text_a/labels.
struct TaskExample {
  std::vector<std::string> words;
  std::vector<std::string> word_tags;
  std::string text_a;
  std::string text_b;
  std::string label;
  std::vector<std::string> labels;
  double score = 0.0;
};

std::vector<TaskExample> examples_from_ner(const NerCorpus& corpus);
std::vector<TaskExample> examples_from_relations(const std::vector<RelationExample>& relations);
std::vector<TaskExample> examples_from_qa(const std::vector<QaExample>& questions);
std::vector<TaskExample> examples_from_pairs(const std::vector<SentencePair>& pairs);
std::vector<TaskExample> examples_from_multilabel(const MultiLabelCorpus& corpus);

// Spreads word-level label ids over a tokenization of the same words: the
// first subword of each word carries the word's label, continuation
// subwords carry -1 (ignored by the loss). Counts must agree.
std::vector<int64_t> align_labels(const std::vector<int64_t>& word_label_ids,
                                  const TokenizedText& tokenized);

// Maximal B-X (I-X)* runs become spans; an I-X that does not continue an
// X entity opens a new span (mirroring the loader repair). Tags that are
// not B-/I- prefixed are treated as outside.
std::vector<Span> decode_bio(const std::vector<std::string>& tags);

// Inverse of decode_bio: spans rendered as B-X/I-X over n_words tags,
// everything else O. Spans must fit and must not overlap.
std::vector<std::string> encode_bio(const std::vector<Span>& spans, std::size_t n_words);

struct TaskModel {
  BertEncoder encoder;
  TaskSpec task;
};

// Builds the encoder without pretraining heads, adds a zero-initialized
// task head ("head.weight" [H, outputs], "head.bias"; similarity has no
// head), then loads the checkpoint non-strictly: pretrained tensors fill
// the intersection and the head keeps its zeros, so initial logits are
// uniform. The init seed only matters for tensors the checkpoint lacks.
TaskModel make_task_model(const ModelConfig& config, const TaskSpec& task,
                          const std::string& checkpoint_path, std::uint64_t init_seed);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based; 0 = before any update
  MetricReport metrics;
};

// One line per entry: epoch, then each metric as key=value (6 decimals),
// tab separated, keys sorted.
std::string serialize_epoch_trace(const std::vector<EpochMetrics>& trace);

struct FinetuneResult {
  TaskModel model;
  std::vector<EpochMetrics> trace;  // per-epoch validation metrics
  std::size_t truncated = 0;        // training examples clipped to max_seq
};

// Fine-tunes a pretrained checkpoint on the task with Adam at a constant
// learning rate. Losses: token/sequence/QA classification use
// cross-entropy (continuation subwords ignored), multilabel uses
// per-label binary cross-entropy, similarity regresses the rescaled
// per-row cosine of the two sentence embeddings onto the target score
// with mean-squared error. Every random stream derives from the seed
// (epoch e shuffles with mix_seed(seed, 100 + e); the dropout stream of
// global step s is mix_seed(mix_seed(seed, 200), s)), so runs are
// bitwise reproducible. Validation metrics are recorded after every
// epoch when `validation` is non-empty; with epochs = 0 or
// inference_only they are recorded once as epoch 0.
FinetuneResult finetune(const ModelConfig& config, const std::string& checkpoint_path,
                        const Vocabulary& vocab, const TaskSpec& task,
                        const std::vector<TaskExample>& train,
                        const std::vector<TaskExample>& validation, const FinetuneConfig& fc);

struct TaskPredictions {
  std::vector<std::vector<std::string>> word_tags;   // token classification
  std::vector<std::string> labels;                   // sequence/QA
  std::vector<std::vector<std::string>> label_sets;  // multilabel
  std::vector<double> scores;                        // similarity, 0-4 scale
  std::size_t truncated = 0;  // examples clipped to max_seq
};

// Inference with dropout off. Class predictions take the argmax (ties go
// to the lowest label id), multilabel emits labels with sigmoid strictly
// above 0.5, similarity reports (cosine + 1) * 2 clamped to [0, 4].
// Words truncated away by max_seq are predicted O.
TaskPredictions predict(const TaskModel& model, const Vocabulary& vocab,
                        const std::vector<TaskExample>& examples, int64_t max_seq);

// Scores predictions against the gold in `examples`. Token
// classification reports exact-span entity f1/precision/recall plus
// word-level scores under a "word_" prefix; sequence classification uses
// the task's averaging; QA reports accuracy; multilabel reports the
// label-set scores; similarity reports mse, adding pearson when both
// sides have variance.
MetricReport evaluate_task(const TaskModel& model, const Vocabulary& vocab,
                           const std::vector<TaskExample>& examples, int64_t max_seq);

// Scoring over raw gold/predicted structures. evaluate_task and the
// scoring of emitted prediction files both go through these, so the two
// paths produce bitwise-identical reports. Tokens: exact-span entity
// f1/precision/recall plus word-level classification scores merged under
// a "word_" prefix. Similarity: mse, plus pearson when defined.
MetricReport score_token_tags(const std::vector<std::vector<std::string>>& gold_tags,
                              const std::vector<std::vector<std::string>>& predicted_tags,
                              const std::vector<std::string>& labels);
MetricReport score_similarity(const std::vector<double>& gold,
                              const std::vector<double>& predicted);

// Prediction files. NER: "word<TAB>gold<TAB>pred" lines, blank line after
// each sentence. Classification: "id<TAB>gold<TAB>pred". Similarity:
// "id<TAB>gold<TAB>score" with round-trip precision. Multilabel:
// "id<TAB>gold<TAB>pred" with comma-joined label lists.
void write_ner_predictions(const std::string& path, const std::vector<TaskExample>& examples,
                           const TaskPredictions& predictions);
void write_label_predictions(const std::string& path, const std::vector<TaskExample>& examples,
                             const TaskPredictions& predictions);
void write_score_predictions(const std::string& path, const std::vector<TaskExample>& examples,
                             const TaskPredictions& predictions);
void write_multilabel_predictions(const std::string& path,
                                  const std::vector<TaskExample>& examples,
                                  const TaskPredictions& predictions);

// Readers for those formats, returning the gold and predicted columns.
struct NerPredictionFile {
  std::vector<std::vector<std::string>> words;
  std::vector<std::vector<std::string>> gold;
  std::vector<std::vector<std::string>> predicted;
};
struct LabelPredictionFile {
  std::vector<std::string> gold;
  std::vector<std::string> predicted;
};
struct ScorePredictionFile {
  std::vector<double> gold;
  std::vector<double> predicted;
};
struct SetPredictionFile {
  std::vector<std::vector<std::string>> gold;
  std::vector<std::vector<std::string>> predicted;
};
NerPredictionFile read_ner_predictions(const std::string& path);
LabelPredictionFile read_label_predictions(const std::string& path);
ScorePredictionFile read_score_predictions(const std::string& path);
SetPredictionFile read_multilabel_predictions(const std::string& path);

}  // namespace minibert
