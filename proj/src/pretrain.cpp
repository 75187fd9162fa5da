#include "minibert/pretrain.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "minibert/checkpoint.hpp"
#include "minibert/rng.hpp"
#include "minibert/textio.hpp"

namespace minibert {

namespace {

void validate_policy(const MaskingPolicy& policy) {
  if (!(policy.p_select > 0.0 && policy.p_select < 1.0))
    throw std::runtime_error("masking policy: p_select must be in (0,1)");
  if (policy.p_mask < 0.0 || policy.p_random < 0.0 || policy.p_keep < 0.0 ||
      std::fabs(policy.p_mask + policy.p_random + policy.p_keep - 1.0) > 1e-12)
    throw std::runtime_error("masking policy: action probabilities must sum to 1");
}

// Uniform draw over non-special ids: draw from the complement's size, then
// shift past every special id at or below the candidate.
int64_t random_nonspecial(Rng& rng, const Vocabulary& vocab) {
  std::array<int64_t, 5> specials{vocab.pad_id, vocab.unk_id, vocab.cls_id,
                                  vocab.sep_id, vocab.mask_id};
  std::sort(specials.begin(), specials.end());
  int64_t candidate = static_cast<int64_t>(
      rng.below(static_cast<uint64_t>(vocab.size() - 5)));
  for (int64_t s : specials)
    if (candidate >= s) ++candidate;
  return candidate;
}

struct Batch {
  std::vector<int64_t> ids;
  std::vector<int64_t> segments;
  std::vector<int64_t> labels;
  std::vector<int64_t> nsp;
  std::vector<uint8_t> attention;
  int64_t batch = 0;
  int64_t seq = 0;
};

Batch assemble(const std::vector<PretrainExample>& examples, int64_t pad_id) {
  Batch batch;
  batch.batch = static_cast<int64_t>(examples.size());
  for (const PretrainExample& ex : examples)
    batch.seq = std::max(batch.seq, static_cast<int64_t>(ex.ids.size()));
  std::size_t total = static_cast<std::size_t>(batch.batch * batch.seq);
  batch.ids.assign(total, pad_id);
  batch.segments.assign(total, 0);
  batch.labels.assign(total, -1);
  batch.attention.assign(total, 0);
  for (std::size_t b = 0; b < examples.size(); ++b) {
    const PretrainExample& ex = examples[b];
    std::size_t base = b * static_cast<std::size_t>(batch.seq);
    for (std::size_t t = 0; t < ex.ids.size(); ++t) {
      batch.ids[base + t] = ex.ids[t];
      batch.segments[base + t] = ex.segment_ids[t];
      batch.labels[base + t] = ex.mlm_labels[t];
      batch.attention[base + t] = ex.attention_mask[t];
    }
    batch.nsp.push_back(ex.nsp_label);
  }
  return batch;
}

PretrainExample masked_example(const NspPair& pair, const Vocabulary& vocab,
                               const ModelConfig& config, const MaskingPolicy& base,
                               std::uint64_t example_seed) {
  PairEncoding encoded = encode_pair(pair.a, pair.b, vocab, config.max_seq);
  MaskingPolicy policy = base;
  policy.seed = example_seed;
  PretrainExample ex = apply_masking(encoded, vocab, policy);
  ex.nsp_label = pair.is_next ? kNspIsNext : kNspNotNext;
  return ex;
}

}  // namespace

std::vector<std::vector<std::string>> load_pretrain_corpus(const std::string& path) {
  std::vector<std::vector<std::string>> documents;
  std::vector<std::string> current;
  for (const std::string& line : read_lines(path)) {
    if (line.empty()) {
      if (!current.empty()) documents.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(line);
    }
  }
  if (!current.empty()) documents.push_back(std::move(current));
  return documents;
}

std::vector<NspPair> build_nsp_pairs(const std::vector<std::vector<std::string>>& documents,
                                     std::size_t count, std::uint64_t seed) {
  std::size_t positives = (count + 1) / 2;
  std::size_t negatives = count - positives;
  std::vector<std::size_t> multi, nonempty;
  for (std::size_t d = 0; d < documents.size(); ++d) {
    if (!documents[d].empty()) nonempty.push_back(d);
    if (documents[d].size() >= 2) multi.push_back(d);
  }
  if (positives > 0 && multi.empty())
    throw std::runtime_error(
        "build_nsp_pairs: no document with two consecutive sentences");
  if (negatives > 0 && nonempty.size() < 2)
    throw std::runtime_error(
        "build_nsp_pairs: drawing NotNext pairs needs at least 2 documents");
  Rng rng(seed);
  std::vector<uint8_t> labels(count, 0);
  for (std::size_t i = 0; i < positives; ++i) labels[i] = 1;
  if (count > 1)
    for (std::size_t i = count - 1; i > 0; --i)
      std::swap(labels[i], labels[rng.below(i + 1)]);
  std::vector<NspPair> pairs;
  pairs.reserve(count);
  for (uint8_t label : labels) {
    if (label) {
      const std::vector<std::string>& doc = documents[multi[rng.below(multi.size())]];
      std::size_t i = static_cast<std::size_t>(rng.below(doc.size() - 1));
      pairs.push_back({doc[i], doc[i + 1], true});
    } else {
      std::size_t ia = static_cast<std::size_t>(rng.below(nonempty.size()));
      std::size_t ib = static_cast<std::size_t>(rng.below(nonempty.size() - 1));
      if (ib >= ia) ++ib;
      const std::vector<std::string>& doc_a = documents[nonempty[ia]];
      const std::vector<std::string>& doc_b = documents[nonempty[ib]];
      pairs.push_back({doc_a[rng.below(doc_a.size())], doc_b[rng.below(doc_b.size())],
                       false});
    }
  }
  return pairs;
}

PretrainExample apply_masking(const PairEncoding& encoded, const Vocabulary& vocab,
                              const MaskingPolicy& policy) {
  validate_policy(policy);
  PretrainExample ex;
  ex.ids = encoded.ids;
  ex.segment_ids = encoded.segment_ids;
  ex.attention_mask.assign(ex.ids.size(), 1);
  ex.mlm_labels.assign(ex.ids.size(), -1);
  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < ex.ids.size(); ++i)
    if (!vocab.is_special(ex.ids[i])) maskable.push_back(i);
  if (maskable.empty()) throw std::runtime_error("apply_masking: no maskable tokens");
  std::size_t k = static_cast<std::size_t>(std::max<long long>(
      1, std::llround(policy.p_select * static_cast<double>(maskable.size()))));
  k = std::min(k, maskable.size());
  Rng rng(policy.seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.below(maskable.size() - i));
    std::swap(maskable[i], maskable[j]);
  }
  std::sort(maskable.begin(), maskable.begin() + static_cast<std::ptrdiff_t>(k));
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t pos = maskable[i];
    ex.mlm_labels[pos] = ex.ids[pos];
    double roll = rng.uniform();
    if (roll < policy.p_mask)
      ex.ids[pos] = vocab.mask_id;
    else if (roll < policy.p_mask + policy.p_random)
      ex.ids[pos] = random_nonspecial(rng, vocab);
    // else: keep the original token
  }
  return ex;
}

std::string serialize_trace(const std::vector<StepLoss>& trace) {
  std::string out;
  char buf[128];
  for (const StepLoss& entry : trace) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\n", entry.step, entry.mlm,
                  entry.nsp);
    out += buf;
  }
  return out;
}

PretrainRun pretrain(const ModelConfig& config,
                     const std::vector<std::vector<std::string>>& corpus,
                     const Vocabulary& vocab, const PretrainOptions& options) {
  config.validate();
  validate_policy(options.policy);
  if (options.batch_size == 0)
    throw std::runtime_error("pretrain: batch_size must be positive");
  if (config.vocab_size != vocab.size())
    throw std::runtime_error("pretrain: config vocab_size does not match vocabulary");
  BertEncoder model(config, mix_seed(options.seed, 1), true);
  std::vector<NspPair> pairs = build_nsp_pairs(
      corpus, options.batch_size * options.total_steps, mix_seed(options.seed, 3));
  AdamOptions adam_opts;
  adam_opts.lr = 1.0;  // the schedule provides the absolute rate via lr_scale
  adam_opts.weight_decay = options.weight_decay;
  Adam optimizer(model.params(), adam_opts);
  std::vector<StepLoss> trace;
  trace.reserve(options.total_steps);
  for (std::size_t step = 0; step < options.total_steps; ++step) {
    std::size_t lo = step * options.batch_size;
    std::vector<PretrainExample> examples;
    examples.reserve(options.batch_size);
    for (std::size_t b = 0; b < options.batch_size; ++b) {
      std::size_t e = lo + b;
      examples.push_back(masked_example(pairs[e], vocab, config, options.policy,
                                        mix_seed(options.policy.seed, e)));
    }
    Batch batch = assemble(examples, vocab.pad_id);
    BertEncoder::Output out =
        model.forward(batch.ids, batch.segments, batch.attention, batch.batch,
                      batch.seq, true, mix_seed(mix_seed(options.seed, 2), step));
    NodePtr mlm_loss = cross_entropy(
        reshape(model.mlm_logits(out.hidden), {batch.batch * batch.seq, config.vocab_size}),
        batch.labels);
    NodePtr nsp_loss = cross_entropy(model.nsp_logits(out.pooled), batch.nsp);
    double mlm_value = mlm_loss->value.data[0];
    double nsp_value = nsp_loss->value.data[0];
    if (!std::isfinite(mlm_value) || !std::isfinite(nsp_value))
      throw std::runtime_error("pretrain: non-finite loss at step " +
                               std::to_string(step) + " (examples " +
                               std::to_string(lo) + ".." +
                               std::to_string(lo + options.batch_size - 1) + ")");
    backward(add(mlm_loss, nsp_loss));
    optimizer.step(
        lr_schedule(static_cast<int64_t>(step), static_cast<int64_t>(options.warmup_steps),
                    static_cast<int64_t>(options.total_steps), options.base_lr));
    trace.push_back({step, mlm_value, nsp_value});
    if (!options.checkpoint_path.empty() && options.checkpoint_every > 0 &&
        (step + 1) % options.checkpoint_every == 0)
      save_checkpoint(options.checkpoint_path, model.params());
  }
  if (!options.checkpoint_path.empty())
    save_checkpoint(options.checkpoint_path, model.params());
  return {std::move(model), std::move(trace)};
}

PretrainEval evaluate_pretrain(const BertEncoder& model,
                               const std::vector<std::vector<std::string>>& corpus,
                               const Vocabulary& vocab, const PretrainOptions& options,
                               std::size_t count) {
  if (count == 0) throw std::runtime_error("evaluate_pretrain: count must be positive");
  const ModelConfig& config = model.config();
  std::vector<NspPair> pairs = build_nsp_pairs(corpus, count, mix_seed(options.seed, 4));
  std::size_t mlm_hits = 0, mlm_total = 0, nsp_hits = 0;
  std::uint64_t mask_base = mix_seed(options.policy.seed, 5);
  for (std::size_t lo = 0; lo < count; lo += options.batch_size) {
    std::size_t hi = std::min(count, lo + options.batch_size);
    std::vector<PretrainExample> examples;
    for (std::size_t e = lo; e < hi; ++e)
      examples.push_back(masked_example(pairs[e], vocab, config, options.policy,
                                        mix_seed(mask_base, e)));
    Batch batch = assemble(examples, vocab.pad_id);
    BertEncoder::Output out = model.forward(batch.ids, batch.segments, batch.attention,
                                            batch.batch, batch.seq, false, 0);
    NodePtr mlm_node = model.mlm_logits(out.hidden);
    NodePtr nsp_node = model.nsp_logits(out.pooled);
    const Tensor& mlm = mlm_node->value;
    const Tensor& nsp = nsp_node->value;
    for (int64_t b = 0; b < batch.batch; ++b) {
      for (int64_t t = 0; t < batch.seq; ++t) {
        int64_t label = batch.labels[static_cast<std::size_t>(b * batch.seq + t)];
        if (label < 0) continue;
        int64_t best = 0;
        for (int64_t v = 1; v < config.vocab_size; ++v)
          if (mlm.at(b, t, v) > mlm.at(b, t, best)) best = v;
        mlm_hits += best == label ? 1 : 0;
        ++mlm_total;
      }
      int64_t best = nsp.at(b, 0) >= nsp.at(b, 1) ? 0 : 1;
      nsp_hits += best == batch.nsp[static_cast<std::size_t>(b)] ? 1 : 0;
    }
  }
  PretrainEval eval;
  eval.mlm_accuracy =
      mlm_total ? static_cast<double>(mlm_hits) / static_cast<double>(mlm_total) : 0.0;
  eval.nsp_accuracy = static_cast<double>(nsp_hits) / static_cast<double>(count);
  return eval;
}

}  // namespace minibert
