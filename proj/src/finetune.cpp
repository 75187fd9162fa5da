#include "minibert/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <set>
#include <stdexcept>
#include <utility>

#include "minibert/checkpoint.hpp"
#include "minibert/rng.hpp"
#include "minibert/textio.hpp"

namespace minibert {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

constexpr DatasetPreset kPresets[] = {
    {"ncbi-disease", TaskKind::token_classification, 5e-5, 16, 25},
    {"bc2gm", TaskKind::token_classification, 5e-5, 16, 25},
    {"bc5cdr-disease", TaskKind::token_classification, 5e-5, 16, 25},
    {"bc5cdr-chemical", TaskKind::token_classification, 5e-5, 16, 25},
    {"bc4chemd", TaskKind::token_classification, 5e-5, 16, 25},
    {"linnaeus", TaskKind::token_classification, 5e-5, 16, 25},
    {"species-800", TaskKind::token_classification, 5e-5, 16, 25},
    {"jnlpba", TaskKind::token_classification, 1e-5, 16, 25},
    {"gad", TaskKind::sequence_classification, 2e-5, 32, 10},
    {"eu-adr", TaskKind::sequence_classification, 2e-5, 32, 10},
    {"chemprot", TaskKind::sequence_classification, 2e-5, 32, 10},
    {"ddi-2013", TaskKind::sequence_classification, 2e-5, 32, 10},
    {"pubmedqa", TaskKind::qa_classification, 2e-5, 32, 10},
    {"bioasq", TaskKind::qa_classification, 2e-5, 32, 10},
    {"hoc", TaskKind::multi_label, 3e-5, 32, 10},
    {"biosses", TaskKind::similarity, 2e-5, 16, 10},
};

// A framed single example: [CLS]/[SEP] in place, not yet padded. labels
// run parallel to ids with -1 at ignored positions; starts marks word
// starts for mapping token predictions back to words.
struct Framed {
  std::vector<int64_t> ids;
  std::vector<int64_t> segments;
  std::vector<int64_t> labels;
  std::vector<uint8_t> starts;
  bool truncated = false;
};

struct Assembled {
  std::vector<int64_t> ids;
  std::vector<int64_t> segments;
  std::vector<uint8_t> attention;
  std::vector<int64_t> flat_labels;  // [batch * seq]
  int64_t batch = 0;
  int64_t seq = 0;
};

Assembled assemble(const std::vector<Framed>& framed, int64_t pad_id) {
  Assembled batch;
  batch.batch = static_cast<int64_t>(framed.size());
  for (const Framed& ex : framed)
    batch.seq = std::max(batch.seq, static_cast<int64_t>(ex.ids.size()));
  std::size_t total = static_cast<std::size_t>(batch.batch * batch.seq);
  batch.ids.assign(total, pad_id);
  batch.segments.assign(total, 0);
  batch.attention.assign(total, 0);
  batch.flat_labels.assign(total, -1);
  for (std::size_t b = 0; b < framed.size(); ++b) {
    std::size_t base = b * static_cast<std::size_t>(batch.seq);
    for (std::size_t t = 0; t < framed[b].ids.size(); ++t) {
      batch.ids[base + t] = framed[b].ids[t];
      batch.segments[base + t] = framed[b].segments[t];
      batch.attention[base + t] = 1;
      batch.flat_labels[base + t] = framed[b].labels[t];
    }
  }
  return batch;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string text;
  for (const std::string& word : words) {
    if (!text.empty()) text += ' ';
    text += word;
  }
  return text;
}

// Tokenizes a labeled sentence into [CLS] tokens [SEP]; words whose first
// subword falls past max_seq are cut (reported via `truncated`).
Framed frame_tokens(const TaskExample& ex, const TaskSpec& task, const Vocabulary& vocab,
                    int64_t max_seq, bool with_labels) {
  TokenizedText tok = encode(join_words(ex.words), vocab);
  std::vector<int64_t> aligned;
  if (with_labels) {
    std::vector<int64_t> word_ids;
    word_ids.reserve(ex.word_tags.size());
    for (const std::string& tag : ex.word_tags) word_ids.push_back(task.label_id(tag));
    aligned = align_labels(word_ids, tok);
  }
  std::size_t limit = static_cast<std::size_t>(max_seq - 2);
  std::size_t keep = std::min(tok.ids.size(), limit);
  Framed framed;
  framed.truncated = tok.ids.size() > limit;
  framed.ids.reserve(keep + 2);
  framed.ids.push_back(vocab.cls_id);
  framed.labels.push_back(-1);
  framed.starts.push_back(0);
  for (std::size_t i = 0; i < keep; ++i) {
    framed.ids.push_back(tok.ids[i]);
    framed.labels.push_back(with_labels ? aligned[i] : -1);
    framed.starts.push_back(tok.word_starts[i]);
  }
  framed.ids.push_back(vocab.sep_id);
  framed.labels.push_back(-1);
  framed.starts.push_back(0);
  framed.segments.assign(framed.ids.size(), 0);
  return framed;
}

Framed frame_pair(const std::string& a, const std::string& b, const Vocabulary& vocab,
                  int64_t max_seq) {
  PairEncoding enc = encode_pair(a, b, vocab, max_seq);
  std::size_t full = encode(a, vocab).ids.size() + 2;
  if (!b.empty()) full += encode(b, vocab).ids.size() + 1;
  Framed framed;
  framed.ids = enc.ids;
  framed.segments = enc.segment_ids;
  framed.labels.assign(framed.ids.size(), -1);
  framed.starts.assign(framed.ids.size(), 0);
  framed.truncated = framed.ids.size() < full;
  return framed;
}

NodePtr head_logits(const BertEncoder& encoder, const NodePtr& x) {
  return add(matmul(x, encoder.params().get("head.weight")),
             encoder.params().get("head.bias"));
}

// Sentence embeddings for one side of a similarity batch: mean pooling
// over real non-special positions.
NodePtr side_embeddings(const BertEncoder& encoder, const Assembled& batch,
                        const Vocabulary& vocab, bool train, std::uint64_t dropout_seed) {
  std::vector<uint8_t> include(batch.ids.size(), 0);
  for (int64_t b = 0; b < batch.batch; ++b) {
    bool any = false;
    for (int64_t t = 0; t < batch.seq; ++t) {
      std::size_t i = static_cast<std::size_t>(b * batch.seq + t);
      if (batch.attention[i] && !vocab.is_special(batch.ids[i])) {
        include[i] = 1;
        any = true;
      }
    }
    if (!any) fail("similarity: sentence has no content tokens");
  }
  BertEncoder::Output out = encoder.forward(batch.ids, batch.segments, batch.attention,
                                            batch.batch, batch.seq, train, dropout_seed);
  return encoder.sentence_embedding(out.hidden, include);
}

// Rescaled per-row cosine of the two sides: [-1,1] -> the 0-4 score scale.
NodePtr similarity_scores(const TaskModel& model, const Vocabulary& vocab,
                          const std::vector<const TaskExample*>& batch, int64_t max_seq,
                          bool train, std::uint64_t dropout_seed, std::size_t& truncated) {
  std::vector<Framed> side_a, side_b;
  side_a.reserve(batch.size());
  side_b.reserve(batch.size());
  for (const TaskExample* ex : batch) {
    side_a.push_back(frame_pair(ex->text_a, "", vocab, max_seq));
    side_b.push_back(frame_pair(ex->text_b, "", vocab, max_seq));
    if (side_a.back().truncated || side_b.back().truncated) ++truncated;
  }
  NodePtr emb_a = side_embeddings(model.encoder, assemble(side_a, vocab.pad_id), vocab,
                                  train, mix_seed(dropout_seed, 0));
  NodePtr emb_b = side_embeddings(model.encoder, assemble(side_b, vocab.pad_id), vocab,
                                  train, mix_seed(dropout_seed, 1));
  int64_t n = static_cast<int64_t>(batch.size());
  NodePtr ones = make_leaf(Tensor::full({n}, 1.0));
  return scale(add(cosine_rows(emb_a, emb_b), ones), 2.0);
}

NodePtr batch_loss(const TaskModel& model, const Vocabulary& vocab,
                   const std::vector<const TaskExample*>& batch, int64_t max_seq,
                   std::uint64_t dropout_seed, std::size_t& truncated) {
  const TaskSpec& task = model.task;
  const int64_t hidden = model.encoder.config().hidden;
  switch (task.kind) {
    case TaskKind::token_classification: {
      std::vector<Framed> framed;
      framed.reserve(batch.size());
      for (const TaskExample* ex : batch) {
        framed.push_back(frame_tokens(*ex, task, vocab, max_seq, true));
        if (framed.back().truncated) ++truncated;
      }
      Assembled asm_batch = assemble(framed, vocab.pad_id);
      BertEncoder::Output out =
          model.encoder.forward(asm_batch.ids, asm_batch.segments, asm_batch.attention,
                                asm_batch.batch, asm_batch.seq, true, dropout_seed);
      NodePtr logits = head_logits(
          model.encoder, reshape(out.hidden, {asm_batch.batch * asm_batch.seq, hidden}));
      return cross_entropy(logits, asm_batch.flat_labels);
    }
    case TaskKind::sequence_classification:
    case TaskKind::qa_classification:
    case TaskKind::multi_label: {
      std::vector<Framed> framed;
      framed.reserve(batch.size());
      for (const TaskExample* ex : batch) {
        framed.push_back(frame_pair(ex->text_a, ex->text_b, vocab, max_seq));
        if (framed.back().truncated) ++truncated;
      }
      Assembled asm_batch = assemble(framed, vocab.pad_id);
      BertEncoder::Output out =
          model.encoder.forward(asm_batch.ids, asm_batch.segments, asm_batch.attention,
                                asm_batch.batch, asm_batch.seq, true, dropout_seed);
      NodePtr logits = head_logits(model.encoder, out.pooled);
      if (task.kind == TaskKind::multi_label) {
        Tensor targets = Tensor::zeros({asm_batch.batch, task.head_outputs()});
        for (std::size_t b = 0; b < batch.size(); ++b)
          for (const std::string& label : batch[b]->labels)
            targets.at(static_cast<int64_t>(b), task.label_id(label)) = 1.0;
        return binary_cross_entropy(sigmoid(logits), targets);
      }
      std::vector<int64_t> targets;
      targets.reserve(batch.size());
      for (const TaskExample* ex : batch) targets.push_back(task.label_id(ex->label));
      return cross_entropy(logits, targets);
    }
    case TaskKind::similarity: {
      NodePtr pred =
          similarity_scores(model, vocab, batch, max_seq, true, dropout_seed, truncated);
      int64_t n = static_cast<int64_t>(batch.size());
      Tensor neg_targets({n});
      for (std::size_t b = 0; b < batch.size(); ++b)
        neg_targets.at(static_cast<int64_t>(b)) = -batch[b]->score;
      NodePtr diff = add(pred, make_leaf(std::move(neg_targets)));
      return scale(sum_all(mul(diff, diff)), 1.0 / static_cast<double>(n));
    }
  }
  fail("finetune: unknown task kind");
}

void check_example(const TaskSpec& task, const TaskExample& ex, std::size_t index,
                   const std::string& split) {
  auto where = [&] { return split + " example " + std::to_string(index); };
  switch (task.kind) {
    case TaskKind::token_classification:
      if (ex.words.empty()) fail("finetune: " + where() + " has no words");
      if (ex.words.size() != ex.word_tags.size())
        fail("finetune: " + where() + " has " + std::to_string(ex.words.size()) +
             " words but " + std::to_string(ex.word_tags.size()) + " tags");
      for (const std::string& tag : ex.word_tags)
        if (task.label_id(tag) < 0)
          fail("finetune: label \"" + tag + "\" outside task label set (" + where() + ")");
      break;
    case TaskKind::sequence_classification:
    case TaskKind::qa_classification:
      if (task.label_id(ex.label) < 0)
        fail("finetune: label \"" + ex.label + "\" outside task label set (" + where() + ")");
      break;
    case TaskKind::multi_label:
      for (const std::string& label : ex.labels)
        if (task.label_id(label) < 0)
          fail("finetune: label \"" + label + "\" outside task label set (" + where() + ")");
      break;
    case TaskKind::similarity:
      if (!std::isfinite(ex.score))
        fail("finetune: " + where() + " has a non-finite score");
      break;
  }
}

void check_examples(const TaskSpec& task, const std::vector<TaskExample>& examples,
                    const std::string& split) {
  for (std::size_t i = 0; i < examples.size(); ++i) check_example(task, examples[i], i, split);
}

std::size_t count_truncated(const TaskSpec& task, const std::vector<TaskExample>& examples,
                            const Vocabulary& vocab, int64_t max_seq) {
  std::size_t truncated = 0;
  for (const TaskExample& ex : examples) {
    bool clipped = false;
    switch (task.kind) {
      case TaskKind::token_classification:
        clipped = frame_tokens(ex, task, vocab, max_seq, false).truncated;
        break;
      case TaskKind::similarity:
        clipped = frame_pair(ex.text_a, "", vocab, max_seq).truncated ||
                  frame_pair(ex.text_b, "", vocab, max_seq).truncated;
        break;
      default:
        clipped = frame_pair(ex.text_a, ex.text_b, vocab, max_seq).truncated;
        break;
    }
    if (clipped) ++truncated;
  }
  return truncated;
}

}  // namespace

TaskSpec TaskSpec::token_classification(std::vector<std::string> tags) {
  TaskSpec task;
  task.kind = TaskKind::token_classification;
  task.labels = std::move(tags);
  task.validate();
  return task;
}

TaskSpec TaskSpec::sequence_classification(std::vector<std::string> labels,
                                           Averaging averaging) {
  TaskSpec task;
  task.kind = TaskKind::sequence_classification;
  task.labels = std::move(labels);
  task.averaging = averaging;
  task.validate();
  return task;
}

TaskSpec TaskSpec::multi_label(std::vector<std::string> labels) {
  TaskSpec task;
  task.kind = TaskKind::multi_label;
  task.labels = std::move(labels);
  task.validate();
  return task;
}

TaskSpec TaskSpec::similarity() {
  TaskSpec task;
  task.kind = TaskKind::similarity;
  task.validate();
  return task;
}

TaskSpec TaskSpec::qa_classification(std::vector<std::string> labels) {
  TaskSpec task;
  task.kind = TaskKind::qa_classification;
  task.labels = std::move(labels);
  task.averaging = Averaging::accuracy;
  task.validate();
  return task;
}

void TaskSpec::validate() const {
  if (kind == TaskKind::similarity) {
    if (!labels.empty()) fail("task: similarity takes no label set");
    return;
  }
  if (labels.empty()) fail("task: label set must be non-empty");
  std::set<std::string> seen;
  for (const std::string& label : labels) {
    if (label.empty()) fail("task: empty label");
    if (!seen.insert(label).second) fail("task: duplicate label \"" + label + "\"");
  }
}

int64_t TaskSpec::label_id(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return static_cast<int64_t>(i);
  return -1;
}

int64_t TaskSpec::head_outputs() const { return static_cast<int64_t>(labels.size()); }

void FinetuneConfig::validate() const {
  if (batch_size != 16 && batch_size != 32)
    fail("finetune config: batch_size must be 16 or 32, got " + std::to_string(batch_size));
  if (!std::isfinite(learning_rate) || learning_rate <= 0.0)
    fail("finetune config: learning_rate must be positive");
  if (epochs > 100)
    fail("finetune config: epochs must be at most 100, got " + std::to_string(epochs));
  if (max_seq < 4 || max_seq > 512)
    fail("finetune config: max_seq must be in [4, 512], got " + std::to_string(max_seq));
  if (!std::isfinite(weight_decay) || weight_decay < 0.0)
    fail("finetune config: weight_decay must be non-negative");
}

const DatasetPreset* find_dataset_preset(const std::string& name) {
  std::string key = to_lower_ascii(name);
  for (const DatasetPreset& preset : kPresets)
    if (key == preset.name) return &preset;
  return nullptr;
}

std::vector<TaskExample> examples_from_ner(const NerCorpus& corpus) {
  std::vector<TaskExample> examples;
  for (const NerDocument& doc : corpus.documents)
    for (const NerSentence& sentence : doc.sentences) {
      TaskExample ex;
      ex.words = sentence.words;
      ex.word_tags = sentence.tags;
      examples.push_back(std::move(ex));
    }
  return examples;
}

std::vector<TaskExample> examples_from_relations(
    const std::vector<RelationExample>& relations) {
  std::vector<TaskExample> examples;
  examples.reserve(relations.size());
  for (const RelationExample& rel : relations) {
    TaskExample ex;
    ex.text_a = rel.sentence;
    ex.label = rel.label;
    examples.push_back(std::move(ex));
  }
  return examples;
}

std::vector<TaskExample> examples_from_qa(const std::vector<QaExample>& questions) {
  std::vector<TaskExample> examples;
  examples.reserve(questions.size());
  for (const QaExample& qa : questions) {
    TaskExample ex;
    ex.text_a = qa.question;
    ex.text_b = qa.context;
    ex.label = qa.label;
    examples.push_back(std::move(ex));
  }
  return examples;
}

std::vector<TaskExample> examples_from_pairs(const std::vector<SentencePair>& pairs) {
  std::vector<TaskExample> examples;
  examples.reserve(pairs.size());
  for (const SentencePair& pair : pairs) {
    TaskExample ex;
    ex.text_a = pair.a;
    ex.text_b = pair.b;
    ex.score = pair.score;
    examples.push_back(std::move(ex));
  }
  return examples;
}

std::vector<TaskExample> examples_from_multilabel(const MultiLabelCorpus& corpus) {
  std::vector<TaskExample> examples;
  examples.reserve(corpus.docs.size());
  for (const MultiLabelDoc& doc : corpus.docs) {
    TaskExample ex;
    ex.text_a = doc.text;
    ex.labels = doc.labels;
    examples.push_back(std::move(ex));
  }
  return examples;
}

std::vector<int64_t> align_labels(const std::vector<int64_t>& word_label_ids,
                                  const TokenizedText& tokenized) {
  std::vector<int64_t> out(tokenized.ids.size(), -1);
  std::size_t next_word = 0;
  for (std::size_t i = 0; i < tokenized.ids.size(); ++i) {
    if (!tokenized.word_starts[i]) continue;
    if (next_word >= word_label_ids.size())
      fail("align_labels: tokenization has more words than labels");
    out[i] = word_label_ids[next_word++];
  }
  if (next_word != word_label_ids.size())
    fail("align_labels: " + std::to_string(word_label_ids.size()) + " labels for " +
         std::to_string(next_word) + " tokenized words");
  return out;
}

std::vector<Span> decode_bio(const std::vector<std::string>& tags) {
  std::vector<Span> spans;
  bool open = false;
  Span current;
  auto close = [&] {
    if (open) spans.push_back(current);
    open = false;
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& tag = tags[i];
    bool is_b = tag.size() > 2 && tag[0] == 'B' && tag[1] == '-';
    bool is_i = tag.size() > 2 && tag[0] == 'I' && tag[1] == '-';
    if (is_i && open && current.type == tag.substr(2)) {
      current.end = i;
    } else if (is_b || is_i) {
      close();
      current = {i, i, tag.substr(2)};
      open = true;
    } else {
      close();
    }
  }
  close();
  return spans;
}

std::vector<std::string> encode_bio(const std::vector<Span>& spans, std::size_t n_words) {
  std::vector<Span> ordered = spans;
  std::sort(ordered.begin(), ordered.end());
  std::vector<std::string> tags(n_words, "O");
  bool any = false;
  std::size_t prev_end = 0;
  for (const Span& span : ordered) {
    if (span.type.empty()) fail("encode_bio: span with empty type");
    if (span.start > span.end || span.end >= n_words)
      fail("encode_bio: span does not fit in " + std::to_string(n_words) + " words");
    if (any && span.start <= prev_end) fail("encode_bio: overlapping spans");
    tags[span.start] = "B-" + span.type;
    for (std::size_t i = span.start + 1; i <= span.end; ++i) tags[i] = "I-" + span.type;
    prev_end = span.end;
    any = true;
  }
  return tags;
}

TaskModel make_task_model(const ModelConfig& config, const TaskSpec& task,
                          const std::string& checkpoint_path, std::uint64_t init_seed) {
  config.validate();
  task.validate();
  TaskModel model{BertEncoder(config, init_seed, false), task};
  if (task.head_outputs() > 0) {
    model.encoder.params().create("head.weight", {config.hidden, task.head_outputs()});
    model.encoder.params().create("head.bias", {task.head_outputs()});
  }
  if (!checkpoint_path.empty())
    load_checkpoint(checkpoint_path, model.encoder.params(), /*strict=*/false);
  return model;
}

std::string serialize_epoch_trace(const std::vector<EpochMetrics>& trace) {
  std::string out;
  char buf[64];
  for (const EpochMetrics& entry : trace) {
    out += std::to_string(entry.epoch);
    for (const auto& [key, value] : entry.metrics.values) {
      std::snprintf(buf, sizeof buf, "%.6f", value);
      out += '\t';
      out += key;
      out += '=';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

FinetuneResult finetune(const ModelConfig& config, const std::string& checkpoint_path,
                        const Vocabulary& vocab, const TaskSpec& task,
                        const std::vector<TaskExample>& train,
                        const std::vector<TaskExample>& validation, const FinetuneConfig& fc) {
  config.validate();
  task.validate();
  fc.validate();
  if (config.vocab_size != vocab.size())
    fail("finetune: config vocab_size does not match vocabulary");
  if (fc.max_seq > config.max_seq)
    fail("finetune: max_seq " + std::to_string(fc.max_seq) + " exceeds the model limit " +
         std::to_string(config.max_seq));
  if (train.empty()) fail("finetune: no training examples");
  check_examples(task, train, "train");
  check_examples(task, validation, "validation");

  FinetuneResult result{make_task_model(config, task, checkpoint_path, mix_seed(fc.seed, 1)),
                        {},
                        count_truncated(task, train, vocab, fc.max_seq)};
  if (fc.epochs == 0 || fc.inference_only) {
    if (!validation.empty())
      result.trace.push_back({0, evaluate_task(result.model, vocab, validation, fc.max_seq)});
    return result;
  }

  AdamOptions adam_opts;
  adam_opts.lr = fc.learning_rate;
  adam_opts.weight_decay = fc.weight_decay;
  Adam optimizer(result.model.encoder.params(), adam_opts);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t dropout_base = mix_seed(fc.seed, 200);
  std::size_t global_step = 0;
  for (std::size_t epoch = 1; epoch <= fc.epochs; ++epoch) {
    Rng rng(mix_seed(fc.seed, 100 + epoch));
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[rng.below(i + 1)]);
    for (std::size_t lo = 0; lo < order.size(); lo += fc.batch_size) {
      std::size_t hi = std::min(order.size(), lo + fc.batch_size);
      std::vector<const TaskExample*> batch;
      batch.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(&train[order[i]]);
      std::size_t reframed = 0;  // already counted once upfront
      NodePtr loss = batch_loss(result.model, vocab, batch, fc.max_seq,
                                mix_seed(dropout_base, global_step), reframed);
      if (!std::isfinite(loss->value.data[0]))
        fail("finetune: non-finite loss at epoch " + std::to_string(epoch) + " step " +
             std::to_string(global_step));
      backward(loss);
      optimizer.step(1.0);
      ++global_step;
    }
    if (!validation.empty())
      result.trace.push_back(
          {epoch, evaluate_task(result.model, vocab, validation, fc.max_seq)});
  }
  return result;
}

TaskPredictions predict(const TaskModel& model, const Vocabulary& vocab,
                        const std::vector<TaskExample>& examples, int64_t max_seq) {
  model.task.validate();
  const ModelConfig& config = model.encoder.config();
  if (config.vocab_size != vocab.size())
    fail("predict: config vocab_size does not match vocabulary");
  if (max_seq < 4 || max_seq > config.max_seq)
    fail("predict: max_seq " + std::to_string(max_seq) + " outside [4, " +
         std::to_string(config.max_seq) + "]");
  const TaskSpec& task = model.task;
  TaskPredictions out;
  const std::size_t chunk = 16;
  for (std::size_t lo = 0; lo < examples.size(); lo += chunk) {
    std::size_t hi = std::min(examples.size(), lo + chunk);
    std::vector<const TaskExample*> batch;
    batch.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) batch.push_back(&examples[i]);
    switch (task.kind) {
      case TaskKind::token_classification: {
        std::vector<Framed> framed;
        framed.reserve(batch.size());
        for (const TaskExample* ex : batch) {
          framed.push_back(frame_tokens(*ex, task, vocab, max_seq, false));
          if (framed.back().truncated) ++out.truncated;
        }
        Assembled asm_batch = assemble(framed, vocab.pad_id);
        BertEncoder::Output fwd =
            model.encoder.forward(asm_batch.ids, asm_batch.segments, asm_batch.attention,
                                  asm_batch.batch, asm_batch.seq, false, 0);
        NodePtr logits = head_logits(
            model.encoder,
            reshape(fwd.hidden, {asm_batch.batch * asm_batch.seq, config.hidden}));
        const Tensor& lv = logits->value;
        int64_t n_labels = task.head_outputs();
        for (std::size_t b = 0; b < batch.size(); ++b) {
          std::vector<std::string> tags;
          tags.reserve(batch[b]->words.size());
          for (std::size_t t = 0; t < framed[b].ids.size(); ++t) {
            if (!framed[b].starts[t]) continue;
            int64_t row = static_cast<int64_t>(b) * asm_batch.seq + static_cast<int64_t>(t);
            int64_t best = 0;
            for (int64_t j = 1; j < n_labels; ++j)
              if (lv.at(row, j) > lv.at(row, best)) best = j;
            tags.push_back(task.labels[static_cast<std::size_t>(best)]);
          }
          while (tags.size() < batch[b]->words.size()) tags.push_back("O");
          out.word_tags.push_back(std::move(tags));
        }
        break;
      }
      case TaskKind::sequence_classification:
      case TaskKind::qa_classification:
      case TaskKind::multi_label: {
        std::vector<Framed> framed;
        framed.reserve(batch.size());
        for (const TaskExample* ex : batch) {
          framed.push_back(frame_pair(ex->text_a, ex->text_b, vocab, max_seq));
          if (framed.back().truncated) ++out.truncated;
        }
        Assembled asm_batch = assemble(framed, vocab.pad_id);
        BertEncoder::Output fwd =
            model.encoder.forward(asm_batch.ids, asm_batch.segments, asm_batch.attention,
                                  asm_batch.batch, asm_batch.seq, false, 0);
        NodePtr logits = head_logits(model.encoder, fwd.pooled);
        int64_t n_labels = task.head_outputs();
        if (task.kind == TaskKind::multi_label) {
          NodePtr probs = sigmoid(logits);
          const Tensor& pv = probs->value;
          for (std::size_t b = 0; b < batch.size(); ++b) {
            std::vector<std::string> chosen;
            for (int64_t j = 0; j < n_labels; ++j)
              if (pv.at(static_cast<int64_t>(b), j) > 0.5)
                chosen.push_back(task.labels[static_cast<std::size_t>(j)]);
            out.label_sets.push_back(std::move(chosen));
          }
        } else {
          const Tensor& lv = logits->value;
          for (std::size_t b = 0; b < batch.size(); ++b) {
            int64_t best = 0;
            for (int64_t j = 1; j < n_labels; ++j)
              if (lv.at(static_cast<int64_t>(b), j) > lv.at(static_cast<int64_t>(b), best))
                best = j;
            out.labels.push_back(task.labels[static_cast<std::size_t>(best)]);
          }
        }
        break;
      }
      case TaskKind::similarity: {
        NodePtr pred =
            similarity_scores(model, vocab, batch, max_seq, false, 0, out.truncated);
        for (std::size_t b = 0; b < batch.size(); ++b) {
          double score = pred->value.at(static_cast<int64_t>(b));
          out.scores.push_back(std::clamp(score, 0.0, 4.0));
        }
        break;
      }
    }
  }
  return out;
}

MetricReport evaluate_task(const TaskModel& model, const Vocabulary& vocab,
                           const std::vector<TaskExample>& examples, int64_t max_seq) {
  TaskPredictions pred = predict(model, vocab, examples, max_seq);
  const TaskSpec& task = model.task;
  switch (task.kind) {
    case TaskKind::token_classification: {
      std::vector<std::vector<std::string>> gold;
      gold.reserve(examples.size());
      for (const TaskExample& ex : examples) gold.push_back(ex.word_tags);
      return score_token_tags(gold, pred.word_tags, task.labels);
    }
    case TaskKind::sequence_classification: {
      std::vector<std::string> gold;
      gold.reserve(examples.size());
      for (const TaskExample& ex : examples) gold.push_back(ex.label);
      return classification_scores(gold, pred.labels, task.averaging, task.labels);
    }
    case TaskKind::qa_classification: {
      std::vector<std::string> gold;
      gold.reserve(examples.size());
      for (const TaskExample& ex : examples) gold.push_back(ex.label);
      return classification_scores(gold, pred.labels, Averaging::accuracy, task.labels);
    }
    case TaskKind::multi_label: {
      std::vector<std::vector<std::string>> gold;
      gold.reserve(examples.size());
      for (const TaskExample& ex : examples) gold.push_back(ex.labels);
      return multilabel_scores(gold, pred.label_sets, task.labels);
    }
    case TaskKind::similarity: {
      std::vector<double> gold;
      gold.reserve(examples.size());
      for (const TaskExample& ex : examples) gold.push_back(ex.score);
      return score_similarity(gold, pred.scores);
    }
  }
  fail("evaluate_task: unknown task kind");
}

MetricReport score_token_tags(const std::vector<std::vector<std::string>>& gold_tags,
                              const std::vector<std::vector<std::string>>& predicted_tags,
                              const std::vector<std::string>& labels) {
  if (gold_tags.size() != predicted_tags.size())
    fail("score_token_tags: " + std::to_string(gold_tags.size()) + " gold sentences for " +
         std::to_string(predicted_tags.size()) + " predicted");
  std::vector<std::vector<Span>> gold, predicted;
  std::vector<std::string> flat_gold, flat_pred;
  gold.reserve(gold_tags.size());
  predicted.reserve(gold_tags.size());
  for (std::size_t i = 0; i < gold_tags.size(); ++i) {
    if (gold_tags[i].size() != predicted_tags[i].size())
      fail("score_token_tags: sentence " + std::to_string(i) + " word count mismatch");
    gold.push_back(decode_bio(gold_tags[i]));
    predicted.push_back(decode_bio(predicted_tags[i]));
    flat_gold.insert(flat_gold.end(), gold_tags[i].begin(), gold_tags[i].end());
    flat_pred.insert(flat_pred.end(), predicted_tags[i].begin(), predicted_tags[i].end());
  }
  MetricReport report = entity_f1(gold, predicted);
  MetricReport words = classification_scores(flat_gold, flat_pred, Averaging::micro, labels);
  for (const auto& [key, value] : words.values) report.values["word_" + key] = value;
  return report;
}

MetricReport score_similarity(const std::vector<double>& gold,
                              const std::vector<double>& predicted) {
  if (gold.empty()) fail("score_similarity: no examples");
  if (gold.size() != predicted.size())
    fail("score_similarity: " + std::to_string(gold.size()) + " gold scores for " +
         std::to_string(predicted.size()) + " predicted");
  MetricReport report;
  report.n_examples = gold.size();
  double mse = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    double diff = predicted[i] - gold[i];
    mse += diff * diff;
  }
  report.values["mse"] = mse / static_cast<double>(gold.size());
  // Pearson is undefined for constant predictions or targets (single
  // example, untrained zero-cosine head, degenerate gold); skip it then.
  try {
    report.values["pearson"] = pearson(gold, predicted);
  } catch (const std::runtime_error&) {
  }
  return report;
}

void write_ner_predictions(const std::string& path, const std::vector<TaskExample>& examples,
                           const TaskPredictions& predictions) {
  if (predictions.word_tags.size() != examples.size())
    fail("ner predictions: " + std::to_string(predictions.word_tags.size()) +
         " predictions for " + std::to_string(examples.size()) + " examples");
  std::string out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const TaskExample& ex = examples[i];
    if (ex.words.size() != ex.word_tags.size() ||
        ex.words.size() != predictions.word_tags[i].size())
      fail("ner predictions: example " + std::to_string(i) + " word/tag count mismatch");
    for (std::size_t j = 0; j < ex.words.size(); ++j) {
      out += ex.words[j];
      out += '\t';
      out += ex.word_tags[j];
      out += '\t';
      out += predictions.word_tags[i][j];
      out += '\n';
    }
    out += '\n';
  }
  write_text_file(path, out);
}

void write_label_predictions(const std::string& path, const std::vector<TaskExample>& examples,
                             const TaskPredictions& predictions) {
  if (predictions.labels.size() != examples.size())
    fail("label predictions: " + std::to_string(predictions.labels.size()) +
         " predictions for " + std::to_string(examples.size()) + " examples");
  std::string out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    out += std::to_string(i);
    out += '\t';
    out += examples[i].label;
    out += '\t';
    out += predictions.labels[i];
    out += '\n';
  }
  write_text_file(path, out);
}

void write_score_predictions(const std::string& path, const std::vector<TaskExample>& examples,
                             const TaskPredictions& predictions) {
  if (predictions.scores.size() != examples.size())
    fail("score predictions: " + std::to_string(predictions.scores.size()) +
         " predictions for " + std::to_string(examples.size()) + " examples");
  std::string out;
  char buf[96];
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\n", i, examples[i].score,
                  predictions.scores[i]);
    out += buf;
  }
  write_text_file(path, out);
}

void write_multilabel_predictions(const std::string& path,
                                  const std::vector<TaskExample>& examples,
                                  const TaskPredictions& predictions) {
  if (predictions.label_sets.size() != examples.size())
    fail("multilabel predictions: " + std::to_string(predictions.label_sets.size()) +
         " predictions for " + std::to_string(examples.size()) + " examples");
  auto join = [](const std::vector<std::string>& labels) {
    std::string joined;
    for (const std::string& label : labels) {
      if (!joined.empty()) joined += ',';
      joined += label;
    }
    return joined;
  };
  std::string out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    out += std::to_string(i);
    out += '\t';
    out += join(examples[i].labels);
    out += '\t';
    out += join(predictions.label_sets[i]);
    out += '\n';
  }
  write_text_file(path, out);
}

namespace {

// Shared row shape for the three "id<TAB>gold<TAB>pred" formats: returns
// the gold/pred fields, validating the leading index.
std::vector<std::pair<std::string, std::string>> read_indexed_rows(const std::string& path,
                                                                   const char* what) {
  std::vector<std::pair<std::string, std::string>> rows;
  std::vector<std::string> lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<std::string> fields = split_fields(lines[i], '\t');
    if (fields.size() != 3)
      fail(std::string(what) + ": line " + std::to_string(i + 1) +
           ": expected id<TAB>gold<TAB>pred");
    if (fields[0] != std::to_string(rows.size()))
      fail(std::string(what) + ": line " + std::to_string(i + 1) + ": expected index " +
           std::to_string(rows.size()) + ", got \"" + fields[0] + "\"");
    rows.emplace_back(fields[1], fields[2]);
  }
  return rows;
}

double parse_score(const std::string& text, const char* what, std::size_t line) {
  char* end = nullptr;
  double value = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size())
    fail(std::string(what) + ": line " + std::to_string(line) + ": bad score \"" + text + "\"");
  return value;
}

std::vector<std::string> split_label_set(const std::string& joined) {
  if (joined.empty()) return {};
  return split_fields(joined, ',');
}

}  // namespace

NerPredictionFile read_ner_predictions(const std::string& path) {
  NerPredictionFile file;
  std::vector<std::string> words, gold, pred;
  auto close_sentence = [&] {
    if (words.empty()) return;
    file.words.push_back(std::move(words));
    file.gold.push_back(std::move(gold));
    file.predicted.push_back(std::move(pred));
    words.clear();
    gold.clear();
    pred.clear();
  };
  std::vector<std::string> lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) {
      close_sentence();
      continue;
    }
    std::vector<std::string> fields = split_fields(lines[i], '\t');
    if (fields.size() != 3)
      fail("ner predictions: line " + std::to_string(i + 1) +
           ": expected word<TAB>gold<TAB>pred");
    words.push_back(fields[0]);
    gold.push_back(fields[1]);
    pred.push_back(fields[2]);
  }
  close_sentence();
  if (file.words.empty()) fail("ner predictions: no sentences in " + path);
  return file;
}

LabelPredictionFile read_label_predictions(const std::string& path) {
  LabelPredictionFile file;
  for (auto& [gold, pred] : read_indexed_rows(path, "label predictions")) {
    file.gold.push_back(std::move(gold));
    file.predicted.push_back(std::move(pred));
  }
  return file;
}

ScorePredictionFile read_score_predictions(const std::string& path) {
  ScorePredictionFile file;
  std::size_t line = 0;
  for (const auto& [gold, pred] : read_indexed_rows(path, "score predictions")) {
    ++line;
    file.gold.push_back(parse_score(gold, "score predictions", line));
    file.predicted.push_back(parse_score(pred, "score predictions", line));
  }
  return file;
}

SetPredictionFile read_multilabel_predictions(const std::string& path) {
  SetPredictionFile file;
  for (const auto& [gold, pred] : read_indexed_rows(path, "multilabel predictions")) {
    file.gold.push_back(split_label_set(gold));
    file.predicted.push_back(split_label_set(pred));
  }
  return file;
}

}  // namespace minibert
