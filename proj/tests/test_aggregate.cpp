#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "xgrain/aggregate.hpp"

using namespace xgrain;

namespace {

Vector random_vec(std::size_t n, Rng& rng, double lo = -1, double hi = 1) {
  Vector x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = rng.uniform(lo, hi);
  return x;
}

}  // namespace

TEST_CASE("attention on constant vector returns the constant") {
  for (double tau : {1e-3, 0.5, 10.0})
    CHECK(attn_agg_vector({0.4, 0.4, 0.4, 0.4}, tau) == doctest::Approx(0.4));
}

TEST_CASE("attention hand case [0,2] tau=1") {
  CHECK(attn_agg_vector({0, 2}, 1.0) == doctest::Approx(1.76159).epsilon(1e-5));
}

TEST_CASE("attention near mean at large tau") {
  const double v = attn_agg_vector({0, 2}, 1e3);
  CHECK(std::abs(v - 1.0) < 1e-3 * 2.0);
  CHECK(v > 1.0);  // tilted toward the max
}

TEST_CASE("matrix attention on constant matrix") {
  Matrix m(3, 4, 0.7);
  CHECK(attn_agg_matrix(m, 0.01) == doctest::Approx(0.7));
}

TEST_CASE("matrix attention hand case identity 2x2 tau=1") {
  Matrix m(2, 2);
  m.data = {1, 0, 0, 1};
  // each column/row softmax weights the 1 with e/(e+1)=0.73106, and the
  // second stage is over the constant vector [0.73106, 0.73106]
  CHECK(attn_agg_matrix(m, 1.0) == doctest::Approx(0.73106).epsilon(1e-5));
}

TEST_CASE("1x1 matrix degenerates to its entry") {
  Matrix m(1, 1);
  m.data = {0.37};
  CHECK(attn_agg_matrix(m, 0.01) == doctest::Approx(0.37));
}

TEST_CASE("single-row matrix equals vector attention on the row") {
  Rng rng(3);
  Matrix m(1, 5);
  for (double& v : m.data) v = rng.uniform(-1, 1);
  Vector row(5);
  for (std::size_t j = 0; j < 5; ++j) row[j] = m.data[j];
  CHECK(attn_agg_matrix(m, 0.05) ==
        doctest::Approx(attn_agg_vector(row, 0.05)).epsilon(1e-12));
}

TEST_CASE("baseline hand cases on identity 2x2") {
  Matrix m(2, 2);
  m.data = {1, 0, 0, 1};
  CHECK(baseline_agg_matrix(m, Reduce::Max, Reduce::Max) == doctest::Approx(1.0));
  CHECK(baseline_agg_matrix(m, Reduce::Mean, Reduce::Mean) ==
        doctest::Approx(0.5));
}

TEST_CASE("baselines on constant matrix return the constant") {
  Matrix m(3, 2, -0.3);
  for (auto first : {Reduce::Mean, Reduce::Max})
    for (auto second : {Reduce::Mean, Reduce::Max})
      CHECK(baseline_agg_matrix(m, first, second) == doctest::Approx(-0.3));
}

TEST_CASE("empty inputs raise shape errors") {
  CHECK_THROWS_AS(attn_agg_vector(Vector(), 0.1), ShapeError);
  CHECK_THROWS_AS(attn_agg_matrix(Matrix(), 0.1), ShapeError);
  CHECK_THROWS_AS(baseline_agg_matrix(Matrix(), Reduce::Mean, Reduce::Mean),
                  ShapeError);
}

TEST_CASE("convexity bound and mean dominance, 1000 random cases") {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    const double tau = std::pow(10.0, rng.uniform(-3, 3));
    Vector x = random_vec(n, rng, -5, 5);
    const double y = attn_agg_vector(x, tau);
    const double mn = *std::min_element(x.data.begin(), x.data.end());
    const double mx = *std::max_element(x.data.begin(), x.data.end());
    double mean = 0;
    for (double v : x.data) mean += v / static_cast<double>(n);
    CHECK(y >= mn - 1e-12);
    CHECK(y <= mx + 1e-12);
    CHECK(y >= mean - 1e-12);
  }
}

TEST_CASE("translation equivariance of vector attention") {
  Rng rng(19);
  for (int trial = 0; trial < 200; ++trial) {
    Vector x = random_vec(6, rng, -2, 2);
    const double c = rng.uniform(-3, 3);
    Vector shifted = x;
    for (std::size_t i = 0; i < 6; ++i) shifted[i] += c;
    CHECK(std::abs(attn_agg_vector(shifted, 0.3) -
                   (attn_agg_vector(x, 0.3) + c)) <= 1e-12);
  }
}

TEST_CASE("tau limits: mean at 1e3, max at 1e-3") {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(15);
    Vector x = random_vec(n, rng);
    std::sort(x.data.begin(), x.data.end());
    if (x[n - 1] - x[n - 2] < 0.05) x[n - 1] = x[n - 2] + 0.06;
    const double mx = x[n - 1], mn = x[0];
    double mean = 0;
    for (double v : x.data) mean += v / static_cast<double>(n);
    CHECK(std::abs(attn_agg_vector(x, 1e3) - mean) <= 1e-3 * (mx - mn));
    CHECK(std::abs(attn_agg_vector(x, 1e-3) - mx) <= 1e-6);
  }
}

TEST_CASE("permutation invariance of vector and matrix attention") {
  Rng rng(29);
  Vector x = random_vec(7, rng);
  Vector perm = x;
  std::reverse(perm.data.begin(), perm.data.end());
  CHECK(attn_agg_vector(x, 0.2) == doctest::Approx(attn_agg_vector(perm, 0.2))
                                       .epsilon(1e-13));

  Matrix m(4, 5);
  for (double& v : m.data) v = rng.uniform(-1, 1);
  const double base = attn_agg_matrix(m, 0.2);
  Matrix rowswap = m;
  for (std::size_t j = 0; j < 5; ++j)
    std::swap(rowswap.at(0, j), rowswap.at(2, j));
  CHECK(attn_agg_matrix(rowswap, 0.2) == doctest::Approx(base).epsilon(1e-13));
  Matrix colswap = m;
  for (std::size_t i = 0; i < 4; ++i)
    std::swap(colswap.at(i, 1), colswap.at(i, 4));
  CHECK(attn_agg_matrix(colswap, 0.2) == doctest::Approx(base).epsilon(1e-13));
}

TEST_CASE("aggregate_bundle constant bundle passes the constant through") {
  SimilarityBundle b;
  b.s_vs = 0.25;
  b.s_vw = Vector(3, 0.25);
  b.s_fs = Vector(4, 0.25);
  b.s_fw = Matrix(4, 3, 0.25);
  AggregationConfig cfg{AggMethod::Attention, 0.01};
  auto a = aggregate_bundle(b, cfg);
  CHECK(a.s_vs == doctest::Approx(0.25));
  CHECK(a.s_vw_agg == doctest::Approx(0.25));
  CHECK(a.s_fs_agg == doctest::Approx(0.25));
  CHECK(a.s_fw_agg == doctest::Approx(0.25));
}

TEST_CASE("aggregate_bundle mean_mean on a vector is the plain mean") {
  SimilarityBundle b;
  b.s_vs = 0.0;
  b.s_vw = {0, 1};
  b.s_fs = {0.5};
  b.s_fw = Matrix(1, 2, 0.5);
  auto a = aggregate_bundle(b, {AggMethod::MeanMean, 0.01});
  CHECK(a.s_vw_agg == doctest::Approx(0.5));
}

TEST_CASE("small tau bundle aggregation is max dominated") {
  // brute-force two-stage evaluation on the e1/e2 construction
  SimilarityBundle b;
  b.s_vs = 1.0 / std::sqrt(2.0);
  b.s_vw = {1.0 / std::sqrt(2.0)};
  b.s_fs = {0, 1};
  b.s_fw = Matrix(2, 1);
  b.s_fw.data = {0, 1};
  auto a = aggregate_bundle(b, {AggMethod::Attention, 0.01});
  CHECK(a.s_fw_agg == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(a.s_fs_agg == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("vector attention backward matches finite differences") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    Vector x = random_vec(6, rng);
    const double tau = std::pow(10.0, rng.uniform(-2, 1));
    Vector grad(6);
    attn_agg_vector_backward(x, tau, 1.0, grad);
    for (std::size_t i = 0; i < 6; ++i) {
      const double h = 1e-6;
      Vector xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double numeric =
          (attn_agg_vector(xp, tau) - attn_agg_vector(xm, tau)) / (2 * h);
      CHECK(grad[i] == doctest::Approx(numeric).epsilon(1e-5));
    }
  }
}

TEST_CASE("matrix attention backward matches finite differences") {
  Rng rng(37);
  Matrix m(3, 4);
  for (double& v : m.data) v = rng.uniform(-1, 1);
  Matrix grad(3, 4);
  attn_agg_matrix_backward(m, 0.1, 1.0, grad);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double h = 1e-6;
    Matrix mp = m, mm = m;
    mp.data[i] += h;
    mm.data[i] -= h;
    const double numeric =
        (attn_agg_matrix(mp, 0.1) - attn_agg_matrix(mm, 0.1)) / (2 * h);
    CHECK(grad.data[i] == doctest::Approx(numeric).epsilon(1e-5));
  }
}

TEST_CASE("method parsing round trip") {
  for (auto m : {AggMethod::Attention, AggMethod::MeanMean, AggMethod::MeanMax,
                 AggMethod::MaxMean, AggMethod::MaxMax})
    CHECK(parse_agg_method(agg_method_name(m)) == m);
  CHECK_THROWS_AS(parse_agg_method("bogus"), ParamError);
}
