#include "minibert/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <stdexcept>

namespace minibert {

namespace {

double ratio_or(std::size_t num, std::size_t den, double when_zero) {
  return den != 0 ? static_cast<double>(num) / static_cast<double>(den)
                  : when_zero;
}

double f1_of(double precision, double recall, double when_zero) {
  double sum = precision + recall;
  return sum > 0.0 ? 2.0 * precision * recall / sum : when_zero;
}

// Pooled precision/recall/F1 with the empty-pool convention: if neither
// side contains anything the score is perfect, otherwise a bare zero
// denominator scores 0.
void pooled_scores(const std::map<std::string, ClassCounts>& counts,
                   double* precision, double* recall, double* f1) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& [cls, c] : counts) {
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
  }
  bool both_empty = tp == 0 && fp == 0 && fn == 0;
  *precision = both_empty ? 1.0 : ratio_or(tp, tp + fp, 0.0);
  *recall = both_empty ? 1.0 : ratio_or(tp, tp + fn, 0.0);
  *f1 = both_empty ? 1.0 : f1_of(*precision, *recall, 0.0);
}

double macro_f1_of(const std::map<std::string, ClassCounts>& counts) {
  if (counts.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [cls, c] : counts) {
    double p = ratio_or(c.tp, c.tp + c.fp, 0.0);
    double r = ratio_or(c.tp, c.tp + c.fn, 0.0);
    total += f1_of(p, r, 0.0);
  }
  return total / static_cast<double>(counts.size());
}

// True when every centered value is within rounding noise of zero, i.e.
// the sequence is constant up to floating-point representation.
bool no_variation(const std::vector<double>& v, double mean) {
  double scale = std::fabs(mean);
  double spread = 0.0;
  for (double value : v) {
    scale = std::max(scale, std::fabs(value));
    spread = std::max(spread, std::fabs(value - mean));
  }
  return spread <= 16.0 * std::numeric_limits<double>::epsilon() * scale;
}

}  // namespace

MetricReport entity_f1(const std::vector<std::vector<Span>>& gold,
                       const std::vector<std::vector<Span>>& predicted) {
  if (gold.size() != predicted.size())
    throw std::runtime_error("entity_f1: document count mismatch");
  MetricReport report;
  report.n_examples = gold.size();
  for (std::size_t d = 0; d < gold.size(); ++d) {
    for (const std::vector<Span>* side : {&gold[d], &predicted[d]}) {
      for (const Span& span : *side) {
        if (span.start > span.end)
          throw std::runtime_error("entity_f1: malformed span (start > end)");
      }
    }
    std::set<Span> g(gold[d].begin(), gold[d].end());
    std::set<Span> p(predicted[d].begin(), predicted[d].end());
    for (const Span& span : p) {
      if (g.count(span))
        report.counts[span.type].tp += 1;
      else
        report.counts[span.type].fp += 1;
    }
    for (const Span& span : g) {
      if (!p.count(span)) report.counts[span.type].fn += 1;
    }
  }
  double precision, recall, f1;
  pooled_scores(report.counts, &precision, &recall, &f1);
  report.values["precision"] = precision;
  report.values["recall"] = recall;
  report.values["f1"] = f1;
  return report;
}

MetricReport classification_scores(const std::vector<std::string>& gold,
                                   const std::vector<std::string>& predicted,
                                   Averaging averaging,
                                   const std::vector<std::string>& labels) {
  if (gold.size() != predicted.size())
    throw std::runtime_error("classification_scores: length mismatch");
  if (gold.empty()) throw std::runtime_error("classification_scores: no examples");
  MetricReport report;
  report.n_examples = gold.size();
  for (const std::string& label : labels) report.counts[label];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    report.counts[gold[i]];
    report.counts[predicted[i]];
    if (gold[i] == predicted[i]) {
      report.counts[gold[i]].tp += 1;
      ++correct;
    } else {
      report.counts[predicted[i]].fp += 1;
      report.counts[gold[i]].fn += 1;
    }
  }
  double precision, recall, micro;
  pooled_scores(report.counts, &precision, &recall, &micro);
  report.values["accuracy"] =
      static_cast<double>(correct) / static_cast<double>(gold.size());
  report.values["precision"] = precision;
  report.values["recall"] = recall;
  report.values["micro_f1"] = micro;
  report.values["macro_f1"] = macro_f1_of(report.counts);
  if (averaging == Averaging::micro) report.values["f1"] = micro;
  if (averaging == Averaging::macro) report.values["f1"] = report.values["macro_f1"];
  return report;
}

MetricReport multilabel_scores(const std::vector<std::vector<std::string>>& gold,
                               const std::vector<std::vector<std::string>>& predicted,
                               const std::vector<std::string>& labels) {
  if (gold.size() != predicted.size())
    throw std::runtime_error("multilabel_scores: length mismatch");
  if (gold.empty()) throw std::runtime_error("multilabel_scores: no examples");
  MetricReport report;
  report.n_examples = gold.size();
  for (const std::string& label : labels) report.counts[label];
  std::size_t exact = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    std::set<std::string> g(gold[i].begin(), gold[i].end());
    std::set<std::string> p(predicted[i].begin(), predicted[i].end());
    if (g == p) ++exact;
    for (const std::string& label : p) {
      if (g.count(label))
        report.counts[label].tp += 1;
      else
        report.counts[label].fp += 1;
    }
    for (const std::string& label : g) {
      if (!p.count(label)) report.counts[label].fn += 1;
    }
  }
  double precision, recall, micro;
  pooled_scores(report.counts, &precision, &recall, &micro);
  report.values["accuracy"] =
      static_cast<double>(exact) / static_cast<double>(gold.size());
  report.values["precision"] = precision;
  report.values["recall"] = recall;
  report.values["micro_f1"] = micro;
  report.values["macro_f1"] = macro_f1_of(report.counts);
  report.values["f1"] = micro;
  return report;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::runtime_error("pearson: length mismatch");
  if (x.size() < 2)
    throw std::runtime_error("pearson: needs at least two observations");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  if (no_variation(x, mx) || no_variation(y, my))
    throw std::runtime_error("pearson: undefined correlation (zero variance)");
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx;
    double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double cosine(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw std::runtime_error("cosine: length mismatch");
  if (u.empty()) throw std::runtime_error("cosine: empty vector");
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw std::runtime_error("cosine: zero vector");
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

std::string serialize_report(const MetricReport& report) {
  std::string out;
  char buf[64];
  for (const auto& [key, value] : report.values) {
    std::snprintf(buf, sizeof buf, "%.6f", value);
    out += key;
    out += ' ';
    out += buf;
    out += '\n';
  }
  return out;
}

}  // namespace minibert
