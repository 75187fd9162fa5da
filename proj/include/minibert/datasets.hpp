#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace minibert {

struct NerSentence {
  std::vector<std::string> words;
  std::vector<std::string> tags;
};

struct NerDocument {
  std::vector<NerSentence> sentences;
};

struct NerCorpus {
  std::vector<NerDocument> documents;
  std::vector<std::string> tag_set;  // distinct post-repair tags, sorted
  std::size_t repaired = 0;          // illegal I-X transitions rewritten to B-X
};

struct RelationExample {
  std::string sentence;
  std::string label;
};

struct QaExample {
  std::string question;
  std::string context;
  std::string label;
};

struct SentencePair {
  std::string a;
  std::string b;
  double score = 0.0;
};

struct MultiLabelDoc {
  std::string text;
  std::vector<std::string> labels;
};

struct MultiLabelCorpus {
  std::vector<MultiLabelDoc> docs;
  std::vector<std::string> label_set;  // union of observed labels, sorted
};

// CoNLL-style token classification data: one "word tag" pair per line
// (whitespace separated), a blank line ends a sentence, and an extra
// blank line (an empty sentence) ends a document. Tags must be O, B-X,
// or I-X; an I-X that does not continue an X entity is repaired to B-X
// and counted in `repaired`.
NerCorpus load_conll(const std::string& path);
void write_conll(const std::string& path, const std::vector<NerDocument>& documents);

// Relation extraction TSV: "sentence<TAB>label". Each sentence must
// contain the dataset's placeholder pair — both placeholders when they
// differ, two occurrences when they coincide. A non-empty allowed_labels
// set rejects unknown labels.
std::vector<RelationExample> load_relation(
    const std::string& path, const std::string& placeholder_a,
    const std::string& placeholder_b,
    const std::vector<std::string>& allowed_labels = {});
void write_relation(const std::string& path, const std::vector<RelationExample>& examples);

// Question answering TSV: "question<TAB>context<TAB>label". A non-empty
// allowed_labels set rejects unknown labels.
std::vector<QaExample> load_qa(const std::string& path,
                               const std::vector<std::string>& allowed_labels = {});
void write_qa(const std::string& path, const std::vector<QaExample>& examples);

// Sentence similarity TSV: "sentence_a<TAB>sentence_b<TAB>score" with a
// finite numeric score.
std::vector<SentencePair> load_sentence_pairs(const std::string& path);
void write_sentence_pairs(const std::string& path, const std::vector<SentencePair>& pairs);

// Document classification TSV: "text<TAB>label,label,...". An empty
// second field means the empty label set. A non-empty declared set
// rejects unknown labels; otherwise the label set is collected from the
// file.
MultiLabelCorpus load_multilabel(const std::string& path,
                                 const std::vector<std::string>& declared = {});
void write_multilabel(const std::string& path, const std::vector<MultiLabelDoc>& docs);

enum class SplitPolicy { large, medium, small };

// large >= 5000 examples, small <= 1000, medium otherwise.
SplitPolicy policy_for_size(std::size_t n);

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

// Shuffles indices 0..n-1 with the seed, then partitions: 80/10/10
// (large), 75/15/10 (medium), 60/20/20 (small). Validation and test take
// the floor of their share; the remainder goes to train. Needs n >= 5.
DatasetSplit split_dataset(std::size_t n, SplitPolicy policy, std::uint64_t seed);

}  // namespace minibert
