#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hscal/losses.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace hscal;

namespace {

ProbBatch one_hot_batch(std::size_t n, std::size_t k, bool correct) {
  Matrix p(n, k);
  Labels gold(n);
  for (std::size_t i = 0; i < n; ++i) {
    p(i, i % k) = 1.0;
    gold[i] = correct ? i % k : (i + 1) % k;
  }
  return ProbBatch::from_probs(p, gold);
}

}  // namespace

TEST_CASE("confidence follows the accurate/inaccurate branches") {
  const std::vector<double> one_hot = {0.0, 1.0, 0.0};
  CHECK(confidence(one_hot, 1, 1) == 1.0);
  const std::vector<double> p9 = {0.9, 0.1};
  CHECK(confidence(p9, 1, 0) == doctest::Approx(0.1).epsilon(1e-12));
  const std::vector<double> p6 = {0.6, 0.4};
  CHECK(confidence(p6, 0, 0) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("uncertainty is entropy normalized by ln K") {
  CHECK(uncertainty(std::vector<double>{0.0, 1.0, 0.0, 0.0}) == 0.0);
  CHECK(uncertainty(std::vector<double>(5, 0.2)) == doctest::Approx(1.0).epsilon(1e-12));
  const double direct = (-0.9 * std::log(0.9) - 0.1 * std::log(0.1)) / std::log(2.0);
  CHECK(std::abs(uncertainty(std::vector<double>{0.9, 0.1}) - 0.469) < 1e-3);
  CHECK(uncertainty(std::vector<double>{0.9, 0.1}) == doctest::Approx(direct).epsilon(1e-14));
}

TEST_CASE("partition_avu masses") {
  SUBCASE("all one-hot correct") {
    const auto b = one_hot_batch(6, 3, true);
    for (double ut : {0.0, 0.3, 1.0}) {
      const auto part = partition_avu(b, ut);
      CHECK(part.n_ac == 6.0);
      CHECK(part.n_au == 0.0);
      CHECK(part.n_ic == 0.0);
      CHECK(part.n_iu == 0.0);
    }
  }
  SUBCASE("single wrong one-hot") {
    const auto part = partition_avu(one_hot_batch(1, 3, false), 0.5);
    CHECK(part.n_ac == 0.0);
    CHECK(part.n_au == 0.0);
    CHECK(part.n_ic == 0.0);
    CHECK(part.n_iu == 0.0);
  }
  SUBCASE("single correct uncertain sample, hand evaluated") {
    const auto b = ProbBatch::from_probs(Matrix::from_rows({{0.775, 0.225}}), {0});
    const double u = (-0.775 * std::log(0.775) - 0.225 * std::log(0.225)) / std::log(2.0);
    CHECK(std::abs(u - 0.769) < 1e-3);
    const auto part = partition_avu(b, 0.5);
    CHECK(part.n_au == doctest::Approx(0.775 * std::tan(u)).epsilon(1e-12));
    CHECK(std::abs(part.n_au - 0.752) < 2.5e-3);  // exact value 0.7503
    CHECK(part.n_ac == 0.0);
    CHECK(part.n_ic == 0.0);
    CHECK(part.n_iu == 0.0);
  }
  SUBCASE("certain mass is floored at zero past tan(u) = 1") {
    // u ~ 0.97 > pi/4 but below u_theta = 1.
    const auto b = ProbBatch::from_probs(Matrix::from_rows({{0.6, 0.4}}), {0});
    const auto part = partition_avu(b, 1.0);
    CHECK(part.n_ac == 0.0);
  }
}

TEST_CASE("partition_avu is permutation-equivariant") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 12, k = 4;
    Matrix z = oracle::random_matrix(n, k, rng, 2.0);
    Labels gold(n);
    for (auto& g : gold) g = rng.uniform_index(k);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Matrix zp(n, k);
    Labels gp(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) zp(i, c) = z(perm[i], c);
      gp[i] = gold[perm[i]];
    }
    // Summation order differs, so compare to a few ulps.
    const auto a = partition_avu(ProbBatch::from_logits(z, gold), 0.5);
    const auto b = partition_avu(ProbBatch::from_logits(zp, gp), 0.5);
    CHECK(a.n_ac == doctest::Approx(b.n_ac).epsilon(1e-14));
    CHECK(a.n_au == doctest::Approx(b.n_au).epsilon(1e-14));
    CHECK(a.n_ic == doctest::Approx(b.n_ic).epsilon(1e-14));
    CHECK(a.n_iu == doctest::Approx(b.n_iu).epsilon(1e-14));
  }
}

TEST_CASE("rau_loss reference values") {
  SUBCASE("all one-hot correct") {
    CHECK(std::abs(rau_loss(one_hot_batch(8, 4, true), 0.5).value) < 1e-7);
  }
  SUBCASE("every accurate sample uncertain, no inaccurate samples") {
    const auto b = ProbBatch::from_probs(Matrix::from_rows({{0.5, 0.3, 0.2}, {0.2, 0.45, 0.35}}), {0, 1});
    CHECK(std::abs(rau_loss(b, 0.1).value - std::log(2.0)) < 1e-6);
  }
  SUBCASE("bounded by ln 3") {
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
      Matrix z = oracle::random_matrix(10, 3, rng, 3.0);
      Labels g(10);
      for (auto& x : g) x = rng.uniform_index(3);
      const double v = rau_loss(ProbBatch::from_logits(z, g), rng.uniform()).value;
      CHECK(v >= 0.0);
      CHECK(v <= std::log(3.0) + 1e-12);
    }
  }
}

TEST_CASE("rau_loss is zero exactly when n_AU and n_IC vanish") {
  // Accurate samples certain, inaccurate samples uncertain.
  const Matrix p = Matrix::from_rows({{0.98, 0.01, 0.01}, {0.01, 0.98, 0.01}, {0.34, 0.33, 0.33}});
  const auto b = ProbBatch::from_probs(p, {0, 1, 2});
  const auto part = partition_avu(b, 0.5);
  REQUIRE(part.n_au == 0.0);
  REQUIRE(part.n_ic == 0.0);
  CHECK(rau_loss(b, 0.5).value <= 1e-6);
}

TEST_CASE("avuc_loss reference values") {
  CHECK(std::abs(avuc_loss(one_hot_batch(8, 4, true), 0.5).value) < 1e-7);

  // One certain and one uncertain accurate sample with equal masses: the
  // certain sample's sharpness is solved by bisection.
  const double u_theta = 0.5;
  const Matrix uncertain = softmax_rows(Matrix::from_rows({{0.5, 0.0, 0.0}}));
  const double target = partition_avu(ProbBatch::from_probs(uncertain, {0}), u_theta).n_au;
  auto sharp = [](double s) { return softmax_rows(Matrix::from_rows({{s, 0.0, 0.0}})); };
  auto u_at = [&](double s) { return uncertainty(sharp(s).row(0)); };
  auto mass_at = [&](double s) { return partition_avu(ProbBatch::from_probs(sharp(s), {0}), u_theta).n_ac; };
  // Smallest sharpness that is still certain; mass grows with s beyond it.
  double lo = 0.0, hi = 30.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (u_at(mid) > u_theta ? lo : hi) = mid;
  }
  lo = hi;
  hi = 30.0;
  REQUIRE(mass_at(lo) < target);
  REQUIRE(mass_at(hi) > target);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass_at(mid) < target ? lo : hi) = mid;
  }
  const Matrix certain = sharp(hi);
  Matrix both(2, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    both(0, c) = certain(0, c);
    both(1, c) = uncertain(0, c);
  }
  const auto b = ProbBatch::from_probs(both, {0, 0});
  const auto part = partition_avu(b, u_theta);
  REQUIRE(part.n_ac == doctest::Approx(part.n_au).epsilon(1e-12));
  CHECK(std::abs(avuc_loss(b, u_theta).value - std::log(2.0)) < 1e-6);
}

TEST_CASE("AVU loss gradients match finite differences at interior points") {
  Rng rng(2024);
  const double u_theta = 0.5;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = gradcheck::interior_logits(16, 4, u_theta, rng);
    Labels gold(16);
    for (auto& g : gold) g = rng.uniform_index(4);
    auto rau_f = [&](const Matrix& x) { return rau_loss(ProbBatch::from_logits(x, gold), u_theta).value; };
    auto avuc_f = [&](const Matrix& x) { return avuc_loss(ProbBatch::from_logits(x, gold), u_theta).value; };
    const auto b = ProbBatch::from_logits(z, gold);
    CHECK(finite_diff_check(rau_f, rau_loss(b, u_theta).grad_logits, z, 3e-4).max_relative_error < 1e-4);
    CHECK(finite_diff_check(avuc_f, avuc_loss(b, u_theta).grad_logits, z, 3e-4).max_relative_error < 1e-4);
  }
}

TEST_CASE("cross_entropy") {
  const Matrix big = Matrix::from_rows({{1000.0, 0.0, 0.0}});
  CHECK(cross_entropy(big, std::vector<std::size_t>{0}).value < 1e-12);
  CHECK(cross_entropy(Matrix(3, 5, 0.7), std::vector<std::size_t>{0, 3, 4}).value ==
        doctest::Approx(std::log(5.0)).epsilon(1e-14));

  Rng rng(3);
  const Matrix z = oracle::random_matrix(8, 5, rng, 2.0);
  std::vector<std::size_t> gold(8);
  for (auto& g : gold) g = rng.uniform_index(5);
  double expected = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) s += std::exp(z(i, c));
    expected += std::log(s) - z(i, gold[i]);
  }
  expected /= 8.0;
  CHECK(std::abs(cross_entropy(z, gold).value - expected) < 1e-10);
}

TEST_CASE("label smoothing") {
  Rng rng(4);
  const Matrix z = oracle::random_matrix(8, 5, rng, 2.0);
  std::vector<std::size_t> gold(8);
  for (auto& g : gold) g = rng.uniform_index(5);

  const auto ce = cross_entropy(z, gold);
  const auto ls0 = label_smoothing_loss(z, gold, 0.0);
  CHECK(ls0.value == ce.value);
  CHECK(ls0.grad_logits == ce.grad_logits);

  double uniform_target = 0.0;
  double smoothed = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto p = oracle::direct_softmax(std::vector<double>(z.row(i).begin(), z.row(i).end()));
    for (std::size_t c = 0; c < 5; ++c) {
      const double onehot = c == gold[i] ? 1.0 : 0.0;
      uniform_target -= 0.2 * std::log(p[c]);
      smoothed -= (0.9 * onehot + 0.1 / 5.0) * std::log(p[c]);
    }
  }
  CHECK(std::abs(label_smoothing_loss(z, gold, 1.0).value - uniform_target / 8.0) < 1e-10);
  CHECK(std::abs(label_smoothing_loss(z, gold, 0.1).value - smoothed / 8.0) < 1e-10);
}

TEST_CASE("poscal_kl") {
  Rng rng(6);
  const Matrix p = softmax_rows(oracle::random_matrix(6, 4, rng));
  CHECK(poscal_kl(p, p).value == doctest::Approx(0.0).epsilon(1e-15));

  Matrix onehot(3, 4);
  for (std::size_t i = 0; i < 3; ++i) onehot(i, i) = 1.0;
  CHECK(poscal_kl(Matrix(3, 4, 0.25), onehot).value == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  const Matrix q = softmax_rows(oracle::random_matrix(6, 4, rng));
  double expected = 0.0;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 4; ++c) expected += q(i, c) * std::log(q(i, c) / p(i, c));
  CHECK(std::abs(poscal_kl(p, q).value - expected / 6.0) < 1e-10);

  CHECK_THROWS_AS(poscal_kl(p, Matrix(6, 3, 1.0 / 3.0)), ShapeError);
}

TEST_CASE("empirical targets are row-stochastic") {
  Rng rng(8);
  const Matrix z = oracle::random_matrix(40, 3, rng, 2.0);
  Labels gold(40);
  for (auto& g : gold) g = rng.uniform_index(3);
  const auto b = ProbBatch::from_logits(z, gold);
  const auto table = build_empirical_table(b, 10);
  const Matrix q = empirical_targets(table, b.probs);
  for (std::size_t i = 0; i < q.rows(); ++i) {
    CHECK(std::accumulate(q.row(i).begin(), q.row(i).end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(poscal_kl(b.probs, q).value >= 0.0);
}

TEST_CASE("base and KL gradients match finite differences") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = oracle::random_matrix(6, 4, rng, 1.5);
    std::vector<std::size_t> gold(6);
    for (auto& g : gold) g = rng.uniform_index(4);
    const Matrix q = softmax_rows(oracle::random_matrix(6, 4, rng));
    auto ce_f = [&](const Matrix& x) { return cross_entropy(x, gold).value; };
    auto ls_f = [&](const Matrix& x) { return label_smoothing_loss(x, gold, 0.1).value; };
    auto kl_f = [&](const Matrix& x) { return poscal_kl(softmax_rows(x), q).value; };
    CHECK(finite_diff_check(ce_f, cross_entropy(z, gold).grad_logits, z).max_relative_error < 1e-4);
    CHECK(finite_diff_check(ls_f, label_smoothing_loss(z, gold, 0.1).grad_logits, z).max_relative_error < 1e-4);
    CHECK(finite_diff_check(kl_f, poscal_kl(softmax_rows(z), q).grad_logits, z).max_relative_error < 1e-4);
  }
}

TEST_CASE("total_loss composition") {
  Rng rng(9);
  const Matrix z = oracle::random_matrix(16, 4, rng, 2.0);
  std::vector<std::size_t> gold(16);
  for (auto& g : gold) g = rng.uniform_index(4);

  LossPlan ce_only;
  const auto t0 = total_loss(z, gold, ce_only, 0.5);
  CHECK(t0.value == cross_entropy(z, gold).value);

  LossPlan with_rau;
  with_rau.rau_weight = 3.0;
  const auto t1 = total_loss(z, gold, with_rau, 0.5);
  const double rau = rau_loss(ProbBatch::from_logits(z, gold), 0.5).value;
  CHECK(std::abs(t1.value - (cross_entropy(z, gold).value + 3.0 * rau)) < 1e-12);

  Matrix sharp(4, 4);
  for (std::size_t i = 0; i < 4; ++i) sharp(i, i) = 60.0;
  const std::vector<std::size_t> diag = {0, 1, 2, 3};
  CHECK(total_loss(sharp, diag, with_rau, 0.5).value == cross_entropy(sharp, diag).value);

  LossPlan bad;
  bad.rau_weight = 3.0;
  bad.avuc_weight = 3.0;
  CHECK_THROWS_AS(total_loss(z, gold, bad, 0.5), ConfigError);

  LossPlan kl;
  kl.kl_weight = 1.0;
  CHECK_THROWS_AS(total_loss(z, gold, kl, 0.5), ConfigError);
}

TEST_CASE("total_loss gradient with every auxiliary term") {
  Rng rng(10);
  const double u_theta = 0.6;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = gradcheck::interior_logits(12, 3, u_theta, rng);
    std::vector<std::size_t> gold(12);
    for (auto& g : gold) g = rng.uniform_index(3);
    const Matrix q = softmax_rows(oracle::random_matrix(12, 3, rng));
    LossPlan plan;
    plan.base = BaseLoss::label_smoothing;
    plan.rau_weight = 3.0;
    plan.kl_weight = 1.0;
    auto f = [&](const Matrix& x) { return total_loss(x, gold, plan, u_theta, &q).value; };
    CHECK(finite_diff_check(f, total_loss(z, gold, plan, u_theta, &q).grad_logits, z, 3e-4).max_relative_error <
          1e-4);
  }
}
