#include "hscal/sphere.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

namespace hscal {

namespace {

constexpr std::size_t kMaxLabels = 512;
constexpr std::size_t kMaxDim = 1024;

void normalize_rows(Matrix& x) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    const double n = std::sqrt(dot(r, r));
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("frame row " + std::to_string(i) + " has zero norm");
    for (double& v : r) v /= n;
  }
}

Matrix gram_minus_2i(const Matrix& x) {
  Matrix z = matmul_transposed(x, x);
  for (std::size_t i = 0; i < z.rows(); ++i) z(i, i) -= 2.0;
  return z;
}

Matrix random_unit_rows(std::size_t k, std::size_t h, Rng& rng) {
  Matrix x(k, h);
  for (double& v : x.data()) v = rng.normal();
  normalize_rows(x);
  return x;
}

}  // namespace

FrameMatrix::FrameMatrix(Matrix x) : x_(std::move(x)) {
  if (x_.rows() < 2 || x_.cols() < 2) {
    throw ConfigError("frame needs k >= 2 and h >= 2, got " + std::to_string(x_.rows()) + "x" +
                      std::to_string(x_.cols()));
  }
  if (!x_.all_finite()) throw NumericError("frame contains non-finite entries");
  for (std::size_t i = 0; i < x_.rows(); ++i) {
    const double n = std::sqrt(dot(x_.row(i), x_.row(i)));
    if (std::abs(n - 1.0) > 1e-9) {
      throw NumericError("frame row " + std::to_string(i) + " is not unit norm");
    }
  }
}

FrameMatrix FrameMatrix::normalized(Matrix x) {
  normalize_rows(x);
  return FrameMatrix(std::move(x));
}

void FrameOptConfig::validate() const {
  if (max_iters < 1) throw ConfigError("frame optimizer: max_iters must be >= 1");
  if (!(step_size > 0.0)) throw ConfigError("frame optimizer: step_size must be > 0");
  if (!(tolerance >= 0.0)) throw ConfigError("frame optimizer: tolerance must be >= 0");
  if (!(final_step_ratio > 0.0 && final_step_ratio <= 1.0)) {
    throw ConfigError("frame optimizer: final_step_ratio must lie in (0, 1]");
  }
  if (restarts < 1) throw ConfigError("frame optimizer: restarts must be >= 1");
}

double gram_penalty(const Matrix& x) {
  const Matrix z = gram_minus_2i(x);
  double sum = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = z.row(i);
    sum += *std::max_element(r.begin(), r.end());
  }
  return sum / static_cast<double>(z.rows());
}

double gram_penalty(const FrameMatrix& frame) { return gram_penalty(frame.x()); }

Matrix gram_penalty_grad(const Matrix& x) {
  const std::size_t k = x.rows();
  const Matrix z = gram_minus_2i(x);
  const double w = 1.0 / static_cast<double>(k);
  Matrix g(k, x.cols());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = argmax(z.row(i));
    auto gi = g.row(i);
    if (j == i) {
      // d(|h_i|^2 - 2) / dh_i
      auto xi = x.row(i);
      for (std::size_t c = 0; c < gi.size(); ++c) gi[c] += 2.0 * w * xi[c];
      continue;
    }
    auto gj = g.row(j);
    auto xi = x.row(i);
    auto xj = x.row(j);
    for (std::size_t c = 0; c < gi.size(); ++c) {
      gi[c] += w * xj[c];
      gj[c] += w * xi[c];
    }
  }
  return g;
}

Matrix project_to_tangent(const Matrix& grad, const Matrix& x) {
  if (grad.rows() != x.rows() || grad.cols() != x.cols()) {
    throw ShapeError("project_to_tangent: shape mismatch");
  }
  Matrix out = grad;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    const double nn = dot(xi, xi);
    if (nn == 0.0) continue;
    const double radial = dot(out.row(i), xi) / nn;
    auto oi = out.row(i);
    for (std::size_t c = 0; c < oi.size(); ++c) oi[c] -= radial * xi[c];
  }
  return out;
}

double max_pairwise_cosine(const FrameMatrix& frame) {
  const Matrix& x = frame.x();
  double best = -1.0;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = i + 1; j < x.rows(); ++j) best = std::max(best, dot(x.row(i), x.row(j)));
  return best;
}

FrameMatrix optimize_frame(std::size_t k, std::size_t h, const FrameOptConfig& cfg) {
  if (k < 2 || h < 2) throw ConfigError("optimize_frame: need k >= 2 and h >= 2");
  if (k > kMaxLabels || h > kMaxDim) throw ConfigError("optimize_frame: k <= 512 and h <= 1024 supported");
  cfg.validate();

  const double decay =
      cfg.max_iters > 1 ? std::pow(cfg.final_step_ratio, 1.0 / static_cast<double>(cfg.max_iters - 1)) : 1.0;

  Matrix best;
  double best_obj = 0.0;
  // Restarts run in index order; a later restart replaces the incumbent only
  // on strict improvement.
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Rng rng(Rng::derive(cfg.seed, r));
    Matrix x = random_unit_rows(k, h, rng);
    double obj = gram_penalty(x);
    Matrix run_best = x;
    double run_best_obj = obj;
    double step = cfg.step_size;
    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
      const Matrix g = project_to_tangent(gram_penalty_grad(x), x);
      auto xd = x.data();
      auto gd = g.data();
      for (std::size_t n = 0; n < xd.size(); ++n) xd[n] -= step * gd[n];
      normalize_rows(x);
      const double next = gram_penalty(x);
      if (next < run_best_obj) {
        run_best_obj = next;
        run_best = x;
      }
      const bool converged = std::abs(next - obj) < cfg.tolerance;
      obj = next;
      step *= decay;
      if (converged) break;
    }
    if (r == 0 || run_best_obj < best_obj) {
      best_obj = run_best_obj;
      best = std::move(run_best);
    }
  }
  // Exact renormalization so the returned rows satisfy the frame invariant.
  normalize_rows(best);
  return FrameMatrix(std::move(best));
}

void write_frame_csv(const FrameMatrix& frame, std::ostream& out) {
  char buf[32];
  const Matrix& x = frame.x();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", x(i, c));
      if (c > 0) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

void write_frame_csv(const FrameMatrix& frame, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_frame_csv(frame, out);
  if (!out) throw IoError("write failed: " + path.string());
}

FrameMatrix read_frame_csv(std::istream& in) {
  std::vector<double> data;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t count = 0;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      const char* first = cell.data();
      const char* last = cell.data() + cell.size();
      while (first < last && *first == ' ') ++first;
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || ptr != last) throw ParseError("bad number '" + cell + "'", lineno);
      data.push_back(v);
      ++count;
    }
    if (rows == 0) cols = count;
    if (count != cols) throw ParseError("expected " + std::to_string(cols) + " columns", lineno);
    ++rows;
  }
  try {
    return FrameMatrix(Matrix(rows, cols, std::move(data)));
  } catch (const Error& e) {
    throw ParseError(std::string("invalid frame: ") + e.what(), 0);
  }
}

FrameMatrix read_frame_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_frame_csv(in);
}

}  // namespace hscal
