#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace minibert {

// Typed entity span over word positions, inclusive on both ends.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string type;

  bool operator==(const Span& other) const {
    return start == other.start && end == other.end && type == other.type;
  }
  bool operator<(const Span& other) const {
    if (start != other.start) return start < other.start;
    if (end != other.end) return end < other.end;
    return type < other.type;
  }
};

struct ClassCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct MetricReport {
  std::map<std::string, double> values;
  std::map<std::string, ClassCounts> counts;
  std::size_t n_examples = 0;
};

// Exact-match span F1, micro-averaged by pooling TP/FP/FN over all
// documents. Duplicate spans within a document count once. When both
// pooled span sets are empty, precision/recall/F1 are 1; a bare zero
// denominator otherwise scores 0. Report keys: f1, precision, recall.
MetricReport entity_f1(const std::vector<std::vector<Span>>& gold,
                       const std::vector<std::vector<Span>>& predicted);

enum class Averaging { micro, macro, accuracy };

// Single-label classification scores. Always reports accuracy, micro_f1,
// macro_f1, and pooled precision/recall; micro and macro averaging
// additionally mirror their F1 into the "f1" key. The class set is the
// union of `labels` (may be empty) and every label observed in gold or
// predicted; macro-averaging spans that whole set, so declared classes
// with no instances pull the mean down with an F1 of 0.
MetricReport classification_scores(const std::vector<std::string>& gold,
                                   const std::vector<std::string>& predicted,
                                   Averaging averaging,
                                   const std::vector<std::string>& labels = {});

// Label-set classification scores: each (example, label) assignment is a
// binary decision pooled into per-label TP/FP/FN. Reports accuracy
// (exact set match), micro_f1 (mirrored into "f1"), macro_f1, and pooled
// precision/recall. Both-empty pools score 1, as for entity_f1.
MetricReport multilabel_scores(const std::vector<std::vector<std::string>>& gold,
                               const std::vector<std::vector<std::string>>& predicted,
                               const std::vector<std::string>& labels = {});

// Sample Pearson correlation. Requires at least two observations and
// nonzero variance on both sides.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// dot(u,v) / (|u||v|); rejects zero vectors.
double cosine(const std::vector<double>& u, const std::vector<double>& v);

// One "key value" line per metric, keys in sorted order, 6 decimals.
std::string serialize_report(const MetricReport& report);

}  // namespace minibert
