#include "hscal/losses.hpp"

#include <algorithm>
#include <cmath>

namespace hscal {

namespace {

void check_labels(std::span<const std::size_t> gold, std::size_t n, std::size_t k) {
  if (gold.size() != n) throw ShapeError("label count " + std::to_string(gold.size()) + " != rows " + std::to_string(n));
  for (auto g : gold)
    if (g >= k) throw DataError("label id " + std::to_string(g) + " out of range for K=" + std::to_string(k));
}

void check_stochastic(const Matrix& m, const char* what) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (double v : m.row(i)) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw NumericError(std::string(what) + ": invalid probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw NumericError(std::string(what) + ": row does not sum to 1");
  }
}

// d u / d z_j for softmax probabilities p (before clamping).
void uncertainty_logit_grad(std::span<const double> p, std::span<double> out) {
  const std::size_t k = p.size();
  if (k < 2) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  double h = 0.0;
  for (double v : p) h -= xlogx(v);
  const double inv_log_k = 1.0 / std::log(static_cast<double>(k));
  for (std::size_t j = 0; j < k; ++j) out[j] = (-xlogx(p[j]) - p[j] * h) * inv_log_k;
}

enum Cell { kAC = 0, kAU = 1, kIC = 2, kIU = 3 };

struct SampleMass {
  Cell cell;
  double mass;
  // Partial derivatives of the mass with respect to a_i and u_i.
  double d_a;
  double d_u;
};

SampleMass sample_mass(std::span<const double> p, std::size_t gold, std::size_t pred, double u_theta) {
  const bool accurate = gold == pred;
  const double a = confidence(p, gold, pred);
  const double u = uncertainty(p);
  const double t = std::tan(u);
  const double sec2 = 1.0 + t * t;
  if (u <= u_theta) {
    const double m = a * (1.0 - t);
    if (m <= 0.0) return {accurate ? kAC : kIC, 0.0, 0.0, 0.0};
    return {accurate ? kAC : kIC, m, 1.0 - t, -a * sec2};
  }
  return {accurate ? kAU : kIU, a * t, t, a * sec2};
}

// Shared driver for the two AVU-based losses. `value_and_partials` maps the
// four masses to the loss value and d(loss)/d(mass).
template <typename F>
LossValue avu_loss(const ProbBatch& batch, double u_theta, F value_and_partials) {
  if (!(u_theta >= 0.0 && u_theta <= 1.0)) throw ConfigError("u_theta must lie in [0, 1]");
  const std::size_t n = batch.size();
  const std::size_t k = batch.num_labels();
  std::vector<SampleMass> per(n);
  double masses[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    per[i] = sample_mass(batch.probs.row(i), batch.gold[i], batch.pred[i], u_theta);
    masses[per[i].cell] += per[i].mass;
  }
  double partials[4] = {0, 0, 0, 0};
  LossValue out;
  out.value = value_and_partials(masses, partials);
  out.grad_logits = Matrix(n, k);
  std::vector<double> du(k);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = partials[per[i].cell];
    if (w == 0.0 || (per[i].d_a == 0.0 && per[i].d_u == 0.0)) continue;
    auto p = batch.probs.row(i);
    auto g = out.grad_logits.row(i);
    // a = +-max(p) (+ const): d a / d z_j = sign * p_pred (delta_{j,pred} - p_j)
    const std::size_t pred = batch.pred[i];
    const double sign = batch.gold[i] == pred ? 1.0 : -1.0;
    const double pp = p[pred];
    uncertainty_logit_grad(p, du);
    for (std::size_t j = 0; j < k; ++j) {
      const double da = sign * pp * ((j == pred ? 1.0 : 0.0) - p[j]);
      g[j] = w * (per[i].d_a * da + per[i].d_u * du[j]);
    }
  }
  return out;
}

}  // namespace

ProbBatch ProbBatch::from_logits(const Matrix& logits, Labels gold) {
  check_labels(gold, logits.rows(), logits.cols());
  ProbBatch b{softmax_rows(logits), std::move(gold), {}};
  b.pred.resize(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) b.pred[i] = argmax(b.probs.row(i));
  return b;
}

ProbBatch ProbBatch::from_probs(Matrix probs, Labels gold) {
  check_labels(gold, probs.rows(), probs.cols());
  check_stochastic(probs, "ProbBatch");
  ProbBatch b{std::move(probs), std::move(gold), {}};
  b.pred.resize(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) b.pred[i] = argmax(b.probs.row(i));
  return b;
}

double confidence(std::span<const double> p_row, std::size_t gold, std::size_t pred) {
  const double mx = *std::max_element(p_row.begin(), p_row.end());
  return gold == pred ? mx : 1.0 - mx;
}

double uncertainty(std::span<const double> p_row) {
  if (p_row.size() < 2) return 0.0;
  double h = 0.0;
  for (double v : p_row) h -= xlogx(v);
  return std::clamp(h / std::log(static_cast<double>(p_row.size())), 0.0, 1.0);
}

AvuPartition partition_avu(const ProbBatch& batch, double u_theta) {
  if (!(u_theta >= 0.0 && u_theta <= 1.0)) throw ConfigError("u_theta must lie in [0, 1]");
  double masses[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto s = sample_mass(batch.probs.row(i), batch.gold[i], batch.pred[i], u_theta);
    masses[s.cell] += s.mass;
  }
  return {masses[kAC], masses[kAU], masses[kIC], masses[kIU], u_theta};
}

LossValue rau_loss(const ProbBatch& batch, double u_theta) {
  return avu_loss(batch, u_theta, [](const double* m, double* d) {
    const double d1 = m[kAC] + m[kAU] + kRatioEpsilon;
    const double d2 = m[kIC] + m[kIU] + kRatioEpsilon;
    const double s = 1.0 + m[kAU] / d1 + m[kIC] / d2;
    d[kAU] = (m[kAC] + kRatioEpsilon) / (d1 * d1) / s;
    d[kAC] = -m[kAU] / (d1 * d1) / s;
    d[kIC] = (m[kIU] + kRatioEpsilon) / (d2 * d2) / s;
    d[kIU] = -m[kIC] / (d2 * d2) / s;
    return std::log(s);
  });
}

LossValue avuc_loss(const ProbBatch& batch, double u_theta) {
  return avu_loss(batch, u_theta, [](const double* m, double* d) {
    const double num = m[kAU] + m[kIC];
    const double den = m[kAC] + m[kIU] + kRatioEpsilon;
    const double s = 1.0 + num / den;
    d[kAU] = d[kIC] = 1.0 / den / s;
    d[kAC] = d[kIU] = -num / (den * den) / s;
    return std::log(s);
  });
}

LossValue label_smoothing_loss(const Matrix& logits, std::span<const std::size_t> gold, double eps) {
  if (!(eps >= 0.0 && eps <= 1.0)) throw ConfigError("smoothing must lie in [0, 1]");
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  check_labels(gold, n, k);
  LossValue out{0.0, Matrix(n, k)};
  if (n == 0) return out;
  const double off = eps / static_cast<double>(k);
  const double on = 1.0 - eps + off;
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto z = logits.row(i);
    const double lse = log_sum_exp(z);
    auto g = out.grad_logits.row(i);
    double row_loss = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double q = j == gold[i] ? on : off;
      row_loss += q * (lse - z[j]);
      g[j] = (std::exp(z[j] - lse) - q) * inv_n;
    }
    total += row_loss;
  }
  out.value = total * inv_n;
  return out;
}

LossValue cross_entropy(const Matrix& logits, std::span<const std::size_t> gold) {
  return label_smoothing_loss(logits, gold, 0.0);
}

LossValue poscal_kl(const Matrix& probs, const Matrix& empirical) {
  if (probs.rows() != empirical.rows() || probs.cols() != empirical.cols()) {
    throw ShapeError("poscal_kl: probs and empirical shapes differ");
  }
  check_stochastic(probs, "poscal_kl probs");
  check_stochastic(empirical, "poscal_kl empirical");
  const std::size_t n = probs.rows();
  LossValue out{0.0, Matrix(n, probs.cols())};
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto p = probs.row(i);
    auto q = empirical.row(i);
    auto g = out.grad_logits.row(i);
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (q[j] > 0.0) total += q[j] * (std::log(q[j]) - std::log(p[j]));
      g[j] = (p[j] - q[j]) * inv_n;
    }
  }
  out.value = total * inv_n;
  return out;
}

EmpiricalTable build_empirical_table(const ProbBatch& batch, std::size_t bins) {
  if (bins < 1) throw ConfigError("empirical table needs at least one bin");
  const std::size_t k = batch.num_labels();
  EmpiricalTable t{bins, k, std::vector<double>(k * bins, -1.0)};
  std::vector<double> hits(k * bins, 0.0);
  std::vector<double> total(k * bins, 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto p = batch.probs.row(i);
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t b = std::min(bins - 1, static_cast<std::size_t>(p[c] * static_cast<double>(bins)));
      total[c * bins + b] += 1.0;
      if (batch.gold[i] == c) hits[c * bins + b] += 1.0;
    }
  }
  for (std::size_t cell = 0; cell < t.freq.size(); ++cell)
    if (total[cell] > 0.0) t.freq[cell] = hits[cell] / total[cell];
  return t;
}

Matrix empirical_targets(const EmpiricalTable& table, const Matrix& probs) {
  if (probs.cols() != table.num_labels) throw ShapeError("empirical_targets: label count mismatch");
  Matrix q(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto p = probs.row(i);
    auto qi = q.row(i);
    double s = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
      const std::size_t b =
          std::min(table.bins - 1, static_cast<std::size_t>(p[c] * static_cast<double>(table.bins)));
      const double f = table.freq[c * table.bins + b];
      qi[c] = f >= 0.0 ? f : p[c];
      s += qi[c];
    }
    if (s > 0.0) {
      for (double& v : qi) v /= s;
    } else {
      std::copy(p.begin(), p.end(), qi.begin());
    }
  }
  return q;
}

std::string to_string(BaseLoss b) { return b == BaseLoss::cross_entropy ? "ce" : "ls"; }

BaseLoss base_loss_from_string(const std::string& s) {
  if (s == "ce" || s == "cross_entropy") return BaseLoss::cross_entropy;
  if (s == "ls" || s == "label_smoothing") return BaseLoss::label_smoothing;
  throw ConfigError("unknown base loss '" + s + "'");
}

void LossPlan::validate() const {
  if (rau_weight < 0.0 || avuc_weight < 0.0 || kl_weight < 0.0) throw ConfigError("loss weights must be >= 0");
  if (rau_weight > 0.0 && avuc_weight > 0.0) throw ConfigError("RAU and AVUC cannot be combined");
  if (base == BaseLoss::label_smoothing && !(smoothing >= 0.0 && smoothing < 1.0)) {
    throw ConfigError("label smoothing must lie in [0, 1)");
  }
}

TotalLoss total_loss(const Matrix& logits, std::span<const std::size_t> gold, const LossPlan& plan,
                     double u_theta, const Matrix* empirical) {
  plan.validate();
  TotalLoss out;
  const double eps = plan.base == BaseLoss::label_smoothing ? plan.smoothing : 0.0;
  LossValue base = label_smoothing_loss(logits, gold, eps);
  out.terms.base = base.value;
  out.value = base.value;
  out.grad_logits = std::move(base.grad_logits);

  auto accumulate = [&out](double weight, const LossValue& lv) {
    out.value += weight * lv.value;
    auto g = out.grad_logits.data();
    auto h = lv.grad_logits.data();
    for (std::size_t t = 0; t < g.size(); ++t) g[t] += weight * h[t];
  };

  if (plan.rau_weight > 0.0 || plan.avuc_weight > 0.0 || plan.kl_weight > 0.0) {
    const ProbBatch batch = ProbBatch::from_logits(logits, Labels(gold.begin(), gold.end()));
    if (plan.rau_weight > 0.0) {
      const LossValue lv = rau_loss(batch, u_theta);
      out.terms.rau = lv.value;
      accumulate(plan.rau_weight, lv);
    }
    if (plan.avuc_weight > 0.0) {
      const LossValue lv = avuc_loss(batch, u_theta);
      out.terms.avuc = lv.value;
      accumulate(plan.avuc_weight, lv);
    }
    if (plan.kl_weight > 0.0) {
      if (empirical == nullptr) throw ConfigError("KL term requested without empirical targets");
      const LossValue lv = poscal_kl(batch.probs, *empirical);
      out.terms.kl = lv.value;
      accumulate(plan.kl_weight, lv);
    }
  }
  return out;
}

}  // namespace hscal
