#include "hscal/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace hscal {

std::size_t ReliabilityBins::total() const {
  std::size_t t = 0;
  for (const auto& c : cells) t += c.count;
  return t;
}

std::size_t bin_index(double conf, std::size_t m) {
  const double scaled = std::ceil(conf * static_cast<double>(m));
  if (!(scaled >= 1.0)) return 0;
  return std::min(m, static_cast<std::size_t>(scaled)) - 1;
}

ReliabilityBins bin_predictions(const ProbBatch& batch, std::size_t m, BinGrouping grouping) {
  if (m < 1) throw ConfigError("bin count must be >= 1");
  const std::size_t k = batch.num_labels();
  ReliabilityBins bins{m, k, std::vector<BinCell>(k * m)};
  std::vector<double> correct(k * m, 0.0);
  std::vector<double> conf_sum(k * m, 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto p = batch.probs.row(i);
    const double conf = p[batch.pred[i]];
    const std::size_t label = grouping == BinGrouping::predicted ? batch.pred[i] : batch.gold[i];
    const std::size_t cell = label * m + bin_index(conf, m);
    bins.cells[cell].count += 1;
    conf_sum[cell] += conf;
    if (batch.pred[i] == batch.gold[i]) correct[cell] += 1.0;
  }
  for (std::size_t c = 0; c < bins.cells.size(); ++c) {
    auto& cell = bins.cells[c];
    if (cell.count == 0) continue;
    const double cnt = static_cast<double>(cell.count);
    cell.accuracy = correct[c] / cnt;
    cell.confidence = conf_sum[c] / cnt;
  }
  return bins;
}

double label_ece(const ReliabilityBins& bins, std::size_t label, std::size_t n) {
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t j = 0; j < bins.m; ++j) {
    const auto& c = bins.at(label, j);
    s += static_cast<double>(c.count) / static_cast<double>(n) * std::abs(c.accuracy - c.confidence);
  }
  return s;
}

double ece_classwise(const ReliabilityBins& bins, std::size_t n, std::size_t k) {
  if (k == 0 || n == 0) return 0.0;
  if (k != bins.k) throw ShapeError("ece_classwise: label count differs from bins");
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += label_ece(bins, i, n);
  return s / static_cast<double>(k);
}

double ece_standard(const ProbBatch& batch, std::size_t m) {
  if (m < 1) throw ConfigError("bin count must be >= 1");
  const std::size_t n = batch.size();
  if (n == 0) return 0.0;
  std::vector<double> count(m, 0.0), correct(m, 0.0), conf_sum(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double conf = batch.probs(i, batch.pred[i]);
    const std::size_t b = bin_index(conf, m);
    count[b] += 1.0;
    conf_sum[b] += conf;
    if (batch.pred[i] == batch.gold[i]) correct[b] += 1.0;
  }
  double e = 0.0;
  for (std::size_t b = 0; b < m; ++b) {
    if (count[b] == 0.0) continue;
    e += count[b] / static_cast<double>(n) * std::abs(correct[b] / count[b] - conf_sum[b] / count[b]);
  }
  return e;
}

ClassificationMetrics classification_report(const ProbBatch& batch, std::size_t k) {
  ClassificationMetrics r;
  std::vector<std::size_t> tp(k, 0), pred_count(k, 0), gold_count(k, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto g = batch.gold[i];
    const auto p = batch.pred[i];
    if (g >= k || p >= k) throw DataError("classification_report: label outside [0, K)");
    ++gold_count[g];
    ++pred_count[p];
    if (g == p) {
      ++tp[g];
      ++correct;
    }
  }
  r.accuracy = batch.size() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(batch.size());
  r.per_label_precision.assign(k, 0.0);
  r.per_label_recall.assign(k, 0.0);
  r.per_label_f1.assign(k, 0.0);
  r.support = gold_count;
  for (std::size_t c = 0; c < k; ++c) {
    const double prec = pred_count[c] ? static_cast<double>(tp[c]) / static_cast<double>(pred_count[c]) : 0.0;
    const double rec = gold_count[c] ? static_cast<double>(tp[c]) / static_cast<double>(gold_count[c]) : 0.0;
    r.per_label_precision[c] = prec;
    r.per_label_recall[c] = rec;
    r.per_label_f1[c] = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
  }
  if (k > 0) {
    const double inv_k = 1.0 / static_cast<double>(k);
    r.precision = std::accumulate(r.per_label_precision.begin(), r.per_label_precision.end(), 0.0) * inv_k;
    r.recall = std::accumulate(r.per_label_recall.begin(), r.per_label_recall.end(), 0.0) * inv_k;
    r.f1 = std::accumulate(r.per_label_f1.begin(), r.per_label_f1.end(), 0.0) * inv_k;
  }
  return r;
}

CalibrationReport calibration_report(const ProbBatch& batch, std::size_t m, BinGrouping grouping) {
  CalibrationReport r;
  const std::size_t k = batch.num_labels();
  r.n = batch.size();
  r.bins = bin_predictions(batch, m, grouping);
  r.ece_classwise = ece_classwise(r.bins, r.n, k);
  r.ece_standard = ece_standard(batch, m);
  r.metrics = classification_report(batch, k);
  r.per_label_ece.resize(k);
  for (std::size_t i = 0; i < k; ++i) r.per_label_ece[i] = label_ece(r.bins, i, r.n);
  return r;
}

nlohmann::json to_json(const TemperatureFit& t) {
  return {{"t", t.t}, {"dev_nll_before", t.dev_nll_before}, {"dev_nll_after", t.dev_nll_after}};
}

nlohmann::json to_json(const CalibrationReport& r, std::span<const std::string> labels) {
  nlohmann::json per_label = nlohmann::json::array();
  for (std::size_t i = 0; i < r.per_label_ece.size(); ++i) {
    nlohmann::json row = {
        {"label", i},
        {"precision", r.metrics.per_label_precision[i]},
        {"recall", r.metrics.per_label_recall[i]},
        {"f1", r.metrics.per_label_f1[i]},
        {"ece", r.per_label_ece[i]},
        {"support", r.metrics.support[i]},
    };
    if (i < labels.size()) row["name"] = labels[i];
    per_label.push_back(std::move(row));
  }
  return {
      {"n", r.n},
      {"bins", r.bins.m},
      {"ece_classwise", r.ece_classwise},
      {"ece_standard", r.ece_standard},
      {"accuracy", r.metrics.accuracy},
      {"precision", r.metrics.precision},
      {"recall", r.metrics.recall},
      {"f1", r.metrics.f1},
      {"per_label", std::move(per_label)},
      {"temperature", r.temperature ? to_json(*r.temperature) : nlohmann::json(nullptr)},
  };
}

LowFrequencyReport low_frequency_report(const ProbBatch& batch, std::span<const std::size_t> train_label_counts,
                                        std::size_t worst_n, std::size_t m) {
  const std::size_t k = batch.num_labels();
  if (train_label_counts.size() != k) throw ShapeError("low_frequency_report: need one training count per label");
  if (worst_n > k) throw ConfigError("low_frequency_report: worst_n exceeds label count");
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return train_label_counts[a] < train_label_counts[b];
  });
  const auto metrics = classification_report(batch, k);
  const auto bins = bin_predictions(batch, m);
  LowFrequencyReport r;
  for (std::size_t t = 0; t < worst_n; ++t) {
    const std::size_t label = order[t];
    r.rows.push_back({label, train_label_counts[label], metrics.per_label_f1[label],
                      label_ece(bins, label, batch.size())});
    r.mean_f1 += r.rows.back().f1;
    r.mean_ece += r.rows.back().ece;
  }
  if (worst_n > 0) {
    r.mean_f1 /= static_cast<double>(worst_n);
    r.mean_ece /= static_cast<double>(worst_n);
  }
  return r;
}

nlohmann::json to_json(const LowFrequencyReport& r, std::span<const std::string> labels) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json j = {{"label", row.label}, {"train_count", row.train_count}, {"f1", row.f1}, {"ece", row.ece}};
    if (row.label < labels.size()) j["name"] = labels[row.label];
    rows.push_back(std::move(j));
  }
  return {{"rows", std::move(rows)}, {"mean_f1", r.mean_f1}, {"mean_ece", r.mean_ece}};
}

Matrix apply_temperature(const Matrix& logits, double t) {
  if (!(t > 0.0)) throw ConfigError("temperature must be > 0");
  Matrix out = logits;
  for (double& v : out.data()) v /= t;
  return out;
}

double mean_nll(const Matrix& logits, std::span<const std::size_t> gold, double t) {
  if (gold.size() != logits.rows()) throw ShapeError("mean_nll: label count mismatch");
  if (logits.rows() == 0) return 0.0;
  std::vector<double> scaled(logits.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    for (std::size_t j = 0; j < z.size(); ++j) scaled[j] = z[j] / t;
    total += log_sum_exp(scaled) - scaled[gold[i]];
  }
  return total / static_cast<double>(logits.rows());
}

TemperatureFit fit_temperature(const Matrix& dev_logits, std::span<const std::size_t> gold) {
  if (dev_logits.rows() == 0) throw DataError("fit_temperature: empty dev set");
  if (gold.size() != dev_logits.rows()) throw ShapeError("fit_temperature: label count mismatch");
  for (auto g : gold)
    if (g >= dev_logits.cols()) throw DataError("fit_temperature: label out of range");

  auto nll = [&](double t) { return mean_nll(dev_logits, gold, t); };
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 0.05, hi = 20.0;
  double x1 = hi - phi * (hi - lo);
  double x2 = lo + phi * (hi - lo);
  double f1 = nll(x1), f2 = nll(x2);
  while (hi - lo > 1e-4) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = nll(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = nll(x2);
    }
  }
  TemperatureFit fit;
  fit.dev_nll_before = nll(1.0);
  fit.t = 0.5 * (lo + hi);
  fit.dev_nll_after = nll(fit.t);
  if (fit.dev_nll_after > fit.dev_nll_before) {
    fit.t = 1.0;
    fit.dev_nll_after = fit.dev_nll_before;
  }
  return fit;
}

void emit_reliability_csv(const ReliabilityBins& bins, std::ostream& out) {
  out << "label,bin_lo,bin_hi,count,accuracy,avg_confidence,gap\n";
  char buf[256];
  const double m = static_cast<double>(bins.m);
  for (std::size_t i = 0; i < bins.k; ++i) {
    for (std::size_t j = 0; j < bins.m; ++j) {
      const auto& c = bins.at(i, j);
      if (c.count == 0) continue;
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%zu,%.17g,%.17g,%.17g\n", i, static_cast<double>(j) / m,
                    static_cast<double>(j + 1) / m, c.count, c.accuracy, c.confidence,
                    std::abs(c.accuracy - c.confidence));
      out << buf;
    }
  }
}

void emit_reliability_csv(const ReliabilityBins& bins, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  emit_reliability_csv(bins, out);
  if (!out) throw IoError("write failed: " + path.string());
}

ReliabilityBins read_reliability_csv(std::istream& in, std::size_t m, std::size_t k) {
  ReliabilityBins bins{m, k, std::vector<BinCell>(k * m)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    std::size_t label = 0, count = 0;
    double lo = 0, hi = 0, acc = 0, conf = 0, gap = 0;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%zu,%lf,%lf,%lf", &label, &lo, &hi, &count, &acc, &conf, &gap) != 7) {
      throw ParseError("malformed reliability row", lineno);
    }
    const auto bin = static_cast<std::size_t>(std::lround(hi * static_cast<double>(m))) - 1;
    if (label >= k || bin >= m) throw ParseError("cell outside the declared grid", lineno);
    bins.at(label, bin) = {count, acc, conf};
  }
  return bins;
}

}  // namespace hscal
