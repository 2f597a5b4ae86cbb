#pragma once

#include <span>
#include <string>
#include <vector>

#include "hscal/numerics.hpp"

namespace hscal {

using Labels = std::vector<std::size_t>;

// Predicted probabilities with gold labels and argmax predictions.
struct ProbBatch {
  Matrix probs;  // N x K, rows sum to 1
  Labels gold;
  Labels pred;   // first index on ties

  std::size_t size() const noexcept { return probs.rows(); }
  std::size_t num_labels() const noexcept { return probs.cols(); }

  static ProbBatch from_logits(const Matrix& logits, Labels gold);
  // Validates every row as a probability vector (sum 1 +- 1e-9, entries >= 0).
  static ProbBatch from_probs(Matrix probs, Labels gold);
};

// max(p) when the prediction is right, 1 - max(p) otherwise.
double confidence(std::span<const double> p_row, std::size_t gold, std::size_t pred);

// Shannon entropy divided by ln K, clamped to [0, 1]. K = 1 gives 0.
double uncertainty(std::span<const double> p_row);

// Soft accurate/inaccurate x certain/uncertain masses. A sample is certain
// when u <= u_theta. Certain contributions a(1 - tan u) are floored at 0 so
// every mass stays nonnegative.
struct AvuPartition {
  double n_ac = 0.0;
  double n_au = 0.0;
  double n_ic = 0.0;
  double n_iu = 0.0;
  double u_theta = 0.0;
};

AvuPartition partition_avu(const ProbBatch& batch, double u_theta);

struct LossValue {
  double value = 0.0;
  Matrix grad_logits;  // N x K
};

inline constexpr double kRatioEpsilon = 1e-8;

// ln(1 + n_AU/(n_AC + n_AU + eps) + n_IC/(n_IC + n_IU + eps)). The gradient
// holds set membership fixed and flows through a_i and tan(u_i).
LossValue rau_loss(const ProbBatch& batch, double u_theta);

// ln(1 + (n_AU + n_IC)/(n_AC + n_IU + eps)), same gradient convention.
LossValue avuc_loss(const ProbBatch& batch, double u_theta);

// Mean negative log-likelihood of the gold label.
LossValue cross_entropy(const Matrix& logits, std::span<const std::size_t> gold);

// Cross-entropy against (1 - eps) * onehot + eps / K. eps = 0 is cross_entropy.
LossValue label_smoothing_loss(const Matrix& logits, std::span<const std::size_t> gold, double eps);

// Mean over rows of KL(empirical || probs); the gradient is taken with
// respect to the logits that produced `probs`.
LossValue poscal_kl(const Matrix& probs, const Matrix& empirical);

// Per-class reliability table: for class k and bin b over p_k, the fraction
// of samples whose gold label is k.
struct EmpiricalTable {
  std::size_t bins = 0;
  std::size_t num_labels = 0;
  std::vector<double> freq;   // num_labels x bins, -1 where the cell is empty
};

EmpiricalTable build_empirical_table(const ProbBatch& batch, std::size_t bins);

// Row-normalized empirical targets for `probs`. Empty cells fall back to the
// predicted probability itself.
Matrix empirical_targets(const EmpiricalTable& table, const Matrix& probs);

enum class BaseLoss { cross_entropy, label_smoothing };

std::string to_string(BaseLoss b);
BaseLoss base_loss_from_string(const std::string& s);

struct LossPlan {
  BaseLoss base = BaseLoss::cross_entropy;
  double smoothing = 0.1;
  double rau_weight = 0.0;
  double avuc_weight = 0.0;
  double kl_weight = 0.0;

  // Rejects negative weights and RAU together with AVUC.
  void validate() const;
};

struct LossTerms {
  double base = 0.0;
  double rau = 0.0;
  double avuc = 0.0;
  double kl = 0.0;
};

struct TotalLoss {
  double value = 0.0;
  Matrix grad_logits;
  LossTerms terms;  // unweighted component values
};

// Weighted sum of the selected components. `empirical` is required when
// kl_weight > 0. Auxiliary terms with zero weight are not evaluated.
TotalLoss total_loss(const Matrix& logits, std::span<const std::size_t> gold, const LossPlan& plan,
                     double u_theta, const Matrix* empirical = nullptr);

}  // namespace hscal
