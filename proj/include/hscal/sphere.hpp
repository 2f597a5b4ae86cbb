#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "hscal/numerics.hpp"

namespace hscal {

// K unit-norm label vectors in H dimensions, one per row.
class FrameMatrix {
 public:
  FrameMatrix() = default;
  // Validates k >= 2, h >= 2 and unit rows (1e-9).
  explicit FrameMatrix(Matrix x);
  // Rescales every row to unit norm first. Zero rows are rejected.
  static FrameMatrix normalized(Matrix x);

  std::size_t k() const noexcept { return x_.rows(); }
  std::size_t h() const noexcept { return x_.cols(); }
  const Matrix& x() const noexcept { return x_; }

  bool operator==(const FrameMatrix&) const = default;

 private:
  Matrix x_;
};

struct FrameOptConfig {
  std::size_t max_iters = 2000;
  double step_size = 0.1;
  // Ratio of the last step size to the first; steps decay geometrically.
  double final_step_ratio = 1e-3;
  // Stop once the objective changes by less than this between iterations.
  double tolerance = 1e-10;
  std::size_t restarts = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Mean over rows of max_j Z_ij with Z = X X^T - 2I.
double gram_penalty(const FrameMatrix& frame);
// Same objective on an arbitrary matrix (rows need not be unit).
double gram_penalty(const Matrix& x);

// Subgradient of gram_penalty with respect to X; ties in the row maximum
// resolve to the first index.
Matrix gram_penalty_grad(const Matrix& x);
inline Matrix gram_penalty_grad(const FrameMatrix& frame) { return gram_penalty_grad(frame.x()); }

// Removes the radial component of each gradient row relative to x's rows.
Matrix project_to_tangent(const Matrix& grad, const Matrix& x);

// Largest cosine between two distinct rows.
double max_pairwise_cosine(const FrameMatrix& frame);

// Projected subgradient descent on gram_penalty with random restarts.
// Returns the best frame seen across all restarts and iterations.
FrameMatrix optimize_frame(std::size_t k, std::size_t h, const FrameOptConfig& cfg);

// One label vector per line, H comma-separated values with 17 significant
// digits.
void write_frame_csv(const FrameMatrix& frame, std::ostream& out);
void write_frame_csv(const FrameMatrix& frame, const std::filesystem::path& path);
FrameMatrix read_frame_csv(std::istream& in);
FrameMatrix read_frame_csv(const std::filesystem::path& path);

}  // namespace hscal
