#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hscal/losses.hpp"

namespace hscal {

// Which label a sample is filed under when binning per label.
enum class BinGrouping { predicted, gold };

struct BinCell {
  std::size_t count = 0;
  double accuracy = 0.0;    // fraction with gold == predicted
  double confidence = 0.0;  // mean max probability
  bool operator==(const BinCell&) const = default;
};

// Per-(label, bin) reliability statistics. Bin j (1-based) covers the
// confidence interval ((j-1)/m, j/m]; confidence 0 falls in bin 1.
struct ReliabilityBins {
  std::size_t m = 10;
  std::size_t k = 0;
  std::vector<BinCell> cells;  // label-major, k * m

  const BinCell& at(std::size_t label, std::size_t bin) const { return cells[label * m + bin]; }
  BinCell& at(std::size_t label, std::size_t bin) { return cells[label * m + bin]; }
  std::size_t total() const;
  bool operator==(const ReliabilityBins&) const = default;
};

// 0-based bin for a confidence: ceil(conf * m) - 1, clamped to [0, m).
std::size_t bin_index(double conf, std::size_t m);

ReliabilityBins bin_predictions(const ProbBatch& batch, std::size_t m,
                                BinGrouping grouping = BinGrouping::predicted);

// Inner sum of the classwise ECE for one label: sum_j |B_ij|/N |Acc_ij - Con_ij|.
double label_ece(const ReliabilityBins& bins, std::size_t label, std::size_t n);

// (1/K) sum_i sum_j |B_ij|/N |Acc_ij - Con_ij|.
double ece_classwise(const ReliabilityBins& bins, std::size_t n, std::size_t k);

// Confidence-binned ECE without the per-label split.
double ece_standard(const ProbBatch& batch, std::size_t m);

struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;  // macro
  double recall = 0.0;     // macro
  double f1 = 0.0;         // macro
  std::vector<double> per_label_precision;
  std::vector<double> per_label_recall;
  std::vector<double> per_label_f1;
  std::vector<std::size_t> support;  // gold count per label
};

// Macro averages over all k labels; a label with no gold or no predicted
// samples scores 0 on the affected quantities.
ClassificationMetrics classification_report(const ProbBatch& batch, std::size_t k);

struct TemperatureFit {
  double t = 1.0;
  double dev_nll_before = 0.0;
  double dev_nll_after = 0.0;
};

struct CalibrationReport {
  double ece_classwise = 0.0;
  double ece_standard = 0.0;
  ClassificationMetrics metrics;
  std::vector<double> per_label_ece;
  ReliabilityBins bins;
  std::size_t n = 0;
  std::optional<TemperatureFit> temperature;
};

CalibrationReport calibration_report(const ProbBatch& batch, std::size_t m,
                                     BinGrouping grouping = BinGrouping::predicted);

// Fractions, not percentages. `labels` names the per-label rows when given.
nlohmann::json to_json(const CalibrationReport& r, std::span<const std::string> labels = {});
nlohmann::json to_json(const TemperatureFit& t);

struct LowFrequencyRow {
  std::size_t label = 0;
  std::size_t train_count = 0;
  double f1 = 0.0;
  double ece = 0.0;
};

struct LowFrequencyReport {
  std::vector<LowFrequencyRow> rows;  // ascending training frequency, label id breaks ties
  double mean_f1 = 0.0;
  double mean_ece = 0.0;
};

LowFrequencyReport low_frequency_report(const ProbBatch& batch, std::span<const std::size_t> train_label_counts,
                                        std::size_t worst_n, std::size_t m = 10);

nlohmann::json to_json(const LowFrequencyReport& r, std::span<const std::string> labels = {});

Matrix apply_temperature(const Matrix& logits, double t);
double mean_nll(const Matrix& logits, std::span<const std::size_t> gold, double t = 1.0);

// Golden-section search for T in [0.05, 20] minimizing the NLL of
// softmax(logits / T). Falls back to T = 1 if the search ends worse.
TemperatureFit fit_temperature(const Matrix& dev_logits, std::span<const std::size_t> gold);

// Header label,bin_lo,bin_hi,count,accuracy,avg_confidence,gap; one row per
// nonempty cell sorted by (label, bin).
void emit_reliability_csv(const ReliabilityBins& bins, std::ostream& out);
void emit_reliability_csv(const ReliabilityBins& bins, const std::filesystem::path& path);
ReliabilityBins read_reliability_csv(std::istream& in, std::size_t m, std::size_t k);

}  // namespace hscal
