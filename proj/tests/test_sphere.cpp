#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "hscal/sphere.hpp"
#include "oracles.hpp"

using namespace hscal;

namespace {

FrameMatrix planar(std::initializer_list<double> degrees) {
  Matrix x(degrees.size(), 2);
  std::size_t i = 0;
  for (double d : degrees) {
    const double r = d * std::numbers::pi / 180.0;
    x(i, 0) = std::cos(r);
    x(i, 1) = std::sin(r);
    ++i;
  }
  return FrameMatrix::normalized(x);
}

// Random orthogonal matrix via Gram-Schmidt on Gaussian columns.
Matrix random_rotation(std::size_t h, Rng& rng) {
  Matrix q = oracle::random_matrix(h, h, rng);
  for (std::size_t c = 0; c < h; ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double d = 0.0;
      for (std::size_t r = 0; r < h; ++r) d += q(r, c) * q(r, p);
      for (std::size_t r = 0; r < h; ++r) q(r, c) -= d * q(r, p);
    }
    double n = 0.0;
    for (std::size_t r = 0; r < h; ++r) n += q(r, c) * q(r, c);
    n = std::sqrt(n);
    for (std::size_t r = 0; r < h; ++r) q(r, c) /= n;
  }
  return q;
}

double unique_max_margin(const Matrix& x) {
  Matrix z = matmul_transposed(x, x);
  double margin = 1e9;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    z(i, i) -= 2.0;
    std::vector<double> row(z.row(i).begin(), z.row(i).end());
    std::sort(row.rbegin(), row.rend());
    margin = std::min(margin, row[0] - row[1]);
  }
  return margin;
}

}  // namespace

TEST_CASE("FrameMatrix validation") {
  CHECK_THROWS_AS(FrameMatrix(Matrix::from_rows({{1, 0}})), ConfigError);
  CHECK_THROWS_AS(FrameMatrix(Matrix::from_rows({{1}, {1}})), ConfigError);
  CHECK_THROWS_AS(FrameMatrix(Matrix::from_rows({{1, 0}, {0.5, 0}})), NumericError);
  CHECK_THROWS_AS(FrameMatrix::normalized(Matrix::from_rows({{1, 0}, {0, 0}})), NumericError);
  CHECK_NOTHROW(FrameMatrix(Matrix::from_rows({{1, 0}, {0, 1}})));
}

TEST_CASE("gram_penalty examples") {
  CHECK(gram_penalty(planar({0, 180})) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(std::abs(gram_penalty(planar({0, 90}))) < 1e-15);
  CHECK(std::abs(gram_penalty(planar({0, 120, 240})) + 0.5) < 1e-9);
}

TEST_CASE("gram_penalty is rotation invariant") {
  Rng rng(12);
  for (int t = 0; t < 10; ++t) {
    const std::size_t k = 2 + rng.uniform_index(6), h = 2 + rng.uniform_index(6);
    const FrameMatrix f = FrameMatrix::normalized(oracle::random_matrix(k, h, rng));
    const FrameMatrix rotated(matmul(f.x(), random_rotation(h, rng)));
    CHECK(std::abs(gram_penalty(f) - gram_penalty(rotated)) < 1e-9);
  }
}

TEST_CASE("gram_penalty_grad") {
  SUBCASE("antipodal pair is stationary on the sphere") {
    const FrameMatrix f = planar({0, 180});
    const Matrix g = project_to_tangent(gram_penalty_grad(f), f.x());
    CHECK(g.all_finite());
    CHECK(frobenius_norm(g) < 1e-9);
  }
  SUBCASE("duplicated rows give a finite gradient") {
    const FrameMatrix f(Matrix::from_rows({{1, 0}, {1, 0}, {0, 1}}));
    CHECK(gram_penalty_grad(f).all_finite());
  }
  SUBCASE("matches finite differences where the row max is unique") {
    Rng rng(13);
    int checked = 0;
    while (checked < 20) {
      const Matrix x = FrameMatrix::normalized(oracle::random_matrix(5, 4, rng)).x();
      if (unique_max_margin(x) < 1e-3) continue;
      auto f = [](const Matrix& m) { return gram_penalty(m); };
      CHECK(finite_diff_check(f, gram_penalty_grad(x), x).max_relative_error < 1e-4);
      ++checked;
    }
  }
}

TEST_CASE("optimize_frame reaches the simplex optimum") {
  FrameOptConfig cfg;
  cfg.seed = 3;
  CHECK(gram_penalty(optimize_frame(2, 5, cfg)) <= -1.0 + 1e-3);
  CHECK(gram_penalty(optimize_frame(3, 2, cfg)) <= -0.5 + 1e-3);
  CHECK(gram_penalty(optimize_frame(4, 3, cfg)) <= -1.0 / 3.0 + 1e-3);
  for (std::size_t h = 2; h <= 8; ++h) {
    for (std::size_t k = 2; k <= h + 1; ++k) {
      const FrameMatrix f = optimize_frame(k, h, cfg);
      CHECK(max_pairwise_cosine(f) <= -1.0 / static_cast<double>(k - 1) + 1e-3);
      for (std::size_t i = 0; i < k; ++i) CHECK(std::abs(std::sqrt(dot(f.x().row(i), f.x().row(i))) - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("optimize_frame never ends above its starting objective") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    FrameOptConfig start;
    start.seed = seed;
    start.max_iters = 1;
    start.restarts = 1;
    FrameOptConfig full = start;
    full.max_iters = 300;
    CHECK(gram_penalty(optimize_frame(20, 4, full)) <= gram_penalty(optimize_frame(20, 4, start)));
  }
}

TEST_CASE("optimize_frame is reproducible and validates its inputs") {
  FrameOptConfig cfg;
  cfg.seed = 99;
  CHECK(optimize_frame(6, 5, cfg) == optimize_frame(6, 5, cfg));
  cfg.seed = 100;
  CHECK_FALSE(optimize_frame(6, 5, cfg) == optimize_frame(6, 5, FrameOptConfig{}));
  CHECK_THROWS_AS(optimize_frame(1, 4, cfg), ConfigError);
  CHECK_THROWS_AS(optimize_frame(4, 1, cfg), ConfigError);
  CHECK_THROWS_AS(optimize_frame(513, 4, cfg), ConfigError);
  FrameOptConfig bad;
  bad.step_size = 0.0;
  CHECK_THROWS_AS(optimize_frame(3, 3, bad), ConfigError);
  bad = FrameOptConfig{};
  bad.max_iters = 0;
  CHECK_THROWS_AS(optimize_frame(3, 3, bad), ConfigError);
}

TEST_CASE("frame CSV round-trip is exact") {
  FrameOptConfig cfg;
  cfg.seed = 5;
  const FrameMatrix f = optimize_frame(7, 5, cfg);
  std::stringstream ss;
  write_frame_csv(f, ss);
  CHECK(read_frame_csv(ss) == f);

  const auto path = std::filesystem::temp_directory_path() / "hscal_test_frame.csv";
  write_frame_csv(f, path);
  CHECK(read_frame_csv(path) == f);
  std::filesystem::remove(path);

  std::stringstream ragged("1,0\n0,1,0\n");
  CHECK_THROWS_AS(read_frame_csv(ragged), ParseError);
  std::stringstream junk("1,zero\n0,1\n");
  CHECK_THROWS_AS(read_frame_csv(junk), ParseError);
  std::stringstream not_unit("1,0\n0,2\n");
  CHECK_THROWS(read_frame_csv(not_unit));
  CHECK_THROWS_AS(read_frame_csv(std::filesystem::path("/nonexistent/frame.csv")), IoError);
}
