#include "minibert/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <stdexcept>

#include "minibert/rng.hpp"
#include "minibert/textio.hpp"

namespace minibert {

namespace {

std::string at_line(const std::string& path, std::size_t lineno) {
  return path + ":" + std::to_string(lineno) + ": ";
}

std::vector<std::string> whitespace_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ' ' || c == '\t') {
      if (!current.empty()) {
        fields.push_back(current);
        current.clear();
      }
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) fields.push_back(current);
  return fields;
}

bool valid_bio_tag(const std::string& tag) {
  if (tag == "O") return true;
  if (tag.size() < 3) return false;
  if (tag[0] != 'B' && tag[0] != 'I') return false;
  return tag[1] == '-';
}

std::size_t count_occurrences(const std::string& text, const std::string& needle) {
  std::size_t count = 0;
  std::size_t pos = text.find(needle);
  while (pos != std::string::npos) {
    ++count;
    pos = text.find(needle, pos + needle.size());
  }
  return count;
}

std::vector<std::string> tab_fields(const std::string& path, std::size_t lineno,
                                    const std::string& line, std::size_t expected) {
  std::vector<std::string> fields = split_fields(line, '\t');
  if (fields.size() != expected)
    throw std::runtime_error(at_line(path, lineno) + "expected " +
                             std::to_string(expected) + " tab-separated fields");
  return fields;
}

void check_label(const std::string& path, std::size_t lineno,
                 const std::string& label,
                 const std::vector<std::string>& allowed) {
  if (label.empty()) throw std::runtime_error(at_line(path, lineno) + "empty label");
  if (!allowed.empty() &&
      std::find(allowed.begin(), allowed.end(), label) == allowed.end())
    throw std::runtime_error(at_line(path, lineno) + "unknown label \"" + label + "\"");
}

std::string format_score(double score) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", score);
  return buf;
}

}  // namespace

NerCorpus load_conll(const std::string& path) {
  NerCorpus corpus;
  std::set<std::string> tags_seen;
  NerDocument doc;
  NerSentence sentence;
  std::string prev_type;  // entity type continuing from the previous token
  auto flush_sentence = [&] {
    if (!sentence.words.empty()) {
      doc.sentences.push_back(std::move(sentence));
      sentence = NerSentence{};
    }
    prev_type.clear();
  };
  auto flush_document = [&] {
    flush_sentence();
    if (!doc.sentences.empty()) {
      corpus.documents.push_back(std::move(doc));
      doc = NerDocument{};
    }
  };
  std::vector<std::string> lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) {
      if (sentence.words.empty())
        flush_document();
      else
        flush_sentence();
      continue;
    }
    std::vector<std::string> fields = whitespace_fields(lines[i]);
    if (fields.size() != 2)
      throw std::runtime_error(at_line(path, i + 1) + "expected \"word tag\"");
    std::string word = fields[0];
    std::string tag = fields[1];
    if (!valid_bio_tag(tag))
      throw std::runtime_error(at_line(path, i + 1) + "invalid BIO tag \"" + tag + "\"");
    if (tag[0] == 'I') {
      std::string type = tag.substr(2);
      if (type != prev_type) {
        tag = "B-" + type;
        ++corpus.repaired;
      }
    }
    prev_type = tag == "O" ? std::string() : tag.substr(2);
    tags_seen.insert(tag);
    sentence.words.push_back(std::move(word));
    sentence.tags.push_back(std::move(tag));
  }
  flush_document();
  corpus.tag_set.assign(tags_seen.begin(), tags_seen.end());
  return corpus;
}

void write_conll(const std::string& path, const std::vector<NerDocument>& documents) {
  std::string out;
  bool first_doc = true;
  for (const NerDocument& doc : documents) {
    if (!first_doc) out += "\n";  // empty sentence marks the document break
    first_doc = false;
    for (const NerSentence& sentence : doc.sentences) {
      for (std::size_t i = 0; i < sentence.words.size(); ++i)
        out += sentence.words[i] + "\t" + sentence.tags[i] + "\n";
      out += "\n";
    }
  }
  write_text_file(path, out);
}

std::vector<RelationExample> load_relation(
    const std::string& path, const std::string& placeholder_a,
    const std::string& placeholder_b,
    const std::vector<std::string>& allowed_labels) {
  std::vector<RelationExample> examples;
  std::vector<std::string> lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<std::string> fields = tab_fields(path, i + 1, lines[i], 2);
    const std::string& sentence = fields[0];
    const std::string& label = fields[1];
    if (placeholder_a == placeholder_b) {
      if (count_occurrences(sentence, placeholder_a) < 2)
        throw std::runtime_error(at_line(path, i + 1) + "expected 2 " +
                                 placeholder_a + " placeholders");
    } else if (count_occurrences(sentence, placeholder_a) == 0 ||
               count_occurrences(sentence, placeholder_b) == 0) {
      throw std::runtime_error(at_line(path, i + 1) + "expected " + placeholder_a +
                               " and " + placeholder_b + " placeholders");
    }
    check_label(path, i + 1, label, allowed_labels);
    examples.push_back({sentence, label});
  }
  return examples;
}

void write_relation(const std::string& path, const std::vector<RelationExample>& examples) {
  std::string out;
  for (const RelationExample& ex : examples)
    out += ex.sentence + "\t" + ex.label + "\n";
  write_text_file(path, out);
}

std::vector<QaExample> load_qa(const std::string& path,
                               const std::vector<std::string>& allowed_labels) {
  std::vector<QaExample> examples;
  std::vector<std::string> lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<std::string> fields = tab_fields(path, i + 1, lines[i], 3);
    check_label(path, i + 1, fields[2], allowed_labels);
    examples.push_back({fields[0], fields[1], fields[2]});
  }
  return examples;
}

void write_qa(const std::string& path, const std::vector<QaExample>& examples) {
  std::string out;
  for (const QaExample& ex : examples)
    out += ex.question + "\t" + ex.context + "\t" + ex.label + "\n";
  write_text_file(path, out);
}

std::vector<SentencePair> load_sentence_pairs(const std::string& path) {
  std::vector<SentencePair> pairs;
  std::vector<std::string> lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<std::string> fields = tab_fields(path, i + 1, lines[i], 3);
    double score = 0.0;
    std::size_t consumed = 0;
    try {
      score = std::stod(fields[2], &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed != fields[2].size() || fields[2].empty())
      throw std::runtime_error(at_line(path, i + 1) + "invalid score \"" + fields[2] + "\"");
    if (!std::isfinite(score))
      throw std::runtime_error(at_line(path, i + 1) + "score not finite");
    pairs.push_back({fields[0], fields[1], score});
  }
  return pairs;
}

void write_sentence_pairs(const std::string& path, const std::vector<SentencePair>& pairs) {
  std::string out;
  for (const SentencePair& pair : pairs)
    out += pair.a + "\t" + pair.b + "\t" + format_score(pair.score) + "\n";
  write_text_file(path, out);
}

MultiLabelCorpus load_multilabel(const std::string& path,
                                 const std::vector<std::string>& declared) {
  MultiLabelCorpus corpus;
  std::set<std::string> label_set(declared.begin(), declared.end());
  std::vector<std::string> lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<std::string> fields = tab_fields(path, i + 1, lines[i], 2);
    MultiLabelDoc doc;
    doc.text = fields[0];
    if (!fields[1].empty()) {
      std::set<std::string> seen;
      for (const std::string& label : split_fields(fields[1], ',')) {
        check_label(path, i + 1, label, declared);
        if (!seen.insert(label).second)
          throw std::runtime_error(at_line(path, i + 1) + "duplicate label \"" + label + "\"");
        doc.labels.push_back(label);
      }
    }
    if (declared.empty())
      for (const std::string& label : doc.labels) label_set.insert(label);
    corpus.docs.push_back(std::move(doc));
  }
  corpus.label_set.assign(label_set.begin(), label_set.end());
  return corpus;
}

void write_multilabel(const std::string& path, const std::vector<MultiLabelDoc>& docs) {
  std::string out;
  for (const MultiLabelDoc& doc : docs) {
    out += doc.text + "\t";
    for (std::size_t i = 0; i < doc.labels.size(); ++i) {
      if (i > 0) out += ",";
      out += doc.labels[i];
    }
    out += "\n";
  }
  write_text_file(path, out);
}

SplitPolicy policy_for_size(std::size_t n) {
  if (n >= 5000) return SplitPolicy::large;
  if (n <= 1000) return SplitPolicy::small;
  return SplitPolicy::medium;
}

DatasetSplit split_dataset(std::size_t n, SplitPolicy policy, std::uint64_t seed) {
  if (n < 5) throw std::runtime_error("split_dataset: needs at least 5 examples");
  std::size_t val_pct = 0, test_pct = 0;
  switch (policy) {
    case SplitPolicy::large: val_pct = 10; test_pct = 10; break;
    case SplitPolicy::medium: val_pct = 15; test_pct = 10; break;
    case SplitPolicy::small: val_pct = 20; test_pct = 20; break;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(order[i], order[j]);
  }
  std::size_t n_val = n * val_pct / 100;
  std::size_t n_test = n * test_pct / 100;
  std::size_t n_train = n - n_val - n_test;
  DatasetSplit split;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.validation.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  split.test.assign(order.begin() + n_train + n_val, order.end());
  return split;
}

}  // namespace minibert
