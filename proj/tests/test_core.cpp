#include <doctest.h>

#include <cmath>

#include "xgrain/core.hpp"

using namespace xgrain;

TEST_CASE("matmul identity") {
  Matrix eye(2, 2);
  eye.at(0, 0) = eye.at(1, 1) = 1.0;
  Matrix a(2, 2);
  a.data = {1, 2, 3, 4};
  Matrix r = matmul(eye, a);
  CHECK(r.data == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("matmul selector row") {
  Matrix a(1, 2);
  a.data = {1, 0};
  Matrix b(2, 1);
  b.data = {5, 7};
  Matrix r = matmul(a, b);
  CHECK(r.rows == 1);
  CHECK(r.cols == 1);
  CHECK(r.at(0, 0) == 5.0);
}

TEST_CASE("matmul hand case") {
  Matrix a(2, 2), b(2, 2);
  a.data = {1, 2, 3, 4};
  b.data = {1, 1, 1, 1};
  Matrix r = matmul(a, b);
  CHECK(r.data == std::vector<double>{3, 3, 7, 7});
}

TEST_CASE("matmul shape error names both shapes") {
  Matrix a(2, 3), b(2, 2);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), ShapeError);
}

TEST_CASE("matmul associativity on random 4x4") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a(4, 4), b(4, 4), c(4, 4);
    for (double& v : a.data) v = rng.uniform(-2, 2);
    for (double& v : b.data) v = rng.uniform(-2, 2);
    for (double& v : c.data) v = rng.uniform(-2, 2);
    Matrix lhs = matmul(matmul(a, b), c);
    Matrix rhs = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < lhs.size(); ++i)
      CHECK(lhs.data[i] == doctest::Approx(rhs.data[i]).epsilon(1e-9));
  }
}

TEST_CASE("softmax symmetry on constant input") {
  Vector w = softmax_stable({3.5, 3.5, 3.5}, 0.7);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(w[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax hand case [0,2] tau=1") {
  Vector w = softmax_stable({0, 2}, 1.0);
  CHECK(w[0] == doctest::Approx(0.11920).epsilon(1e-4));
  CHECK(w[1] == doctest::Approx(0.88080).epsilon(1e-4));
}

TEST_CASE("softmax winner-take-all at tau=1e-3") {
  Vector w = softmax_stable({0, 2}, 1e-3);
  CHECK(w[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(w[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("softmax rejects bad inputs") {
  CHECK_THROWS_AS(softmax_stable({1.0}, 0.0), ParamError);
  CHECK_THROWS_AS(softmax_stable({1.0}, -1.0), ParamError);
  CHECK_THROWS_AS(softmax_stable(Vector(), 1.0), ShapeError);
}

TEST_CASE("softmax shift invariance") {
  Rng rng(11);
  // exact when the shifted values are exactly representable
  for (int trial = 0; trial < 50; ++trial) {
    Vector x(5);
    for (std::size_t i = 0; i < 5; ++i)
      x[i] = static_cast<double>(rng.below(100)) - 50.0;
    const double c = static_cast<double>(rng.below(40)) - 20.0;
    Vector shifted = x;
    for (std::size_t i = 0; i < 5; ++i) shifted[i] += c;
    Vector a = softmax_stable(x, 1.0), b = softmax_stable(shifted, 1.0);
    for (std::size_t i = 0; i < 5; ++i) CHECK(a[i] == b[i]);
  }
  // ulp-level for arbitrary reals
  for (int trial = 0; trial < 50; ++trial) {
    Vector x(5);
    for (std::size_t i = 0; i < 5; ++i) x[i] = rng.uniform(-50, 50);
    const double c = rng.uniform(-20, 20);
    Vector shifted = x;
    for (std::size_t i = 0; i < 5; ++i) shifted[i] += c;
    Vector a = softmax_stable(x, 1.0), b = softmax_stable(shifted, 1.0);
    for (std::size_t i = 0; i < 5; ++i)
      CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
  }
}

TEST_CASE("softmax sums to 1 across tau extremes") {
  Rng rng(13);
  for (double tau : {1e-3, 1.0, 1e3}) {
    for (int trial = 0; trial < 30; ++trial) {
      Vector x(8);
      for (std::size_t i = 0; i < 8; ++i) x[i] = rng.uniform(-50, 50);
      Vector w = softmax_stable(x, tau);
      double sum = 0.0;
      for (std::size_t i = 0; i < 8; ++i) {
        CHECK(w[i] >= 0.0);
        CHECK(w[i] <= 1.0);
        sum += w[i];
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("reduce mean/max") {
  CHECK(reduce({1, 2, 3}, Reduce::Mean) == doctest::Approx(2.0));
  CHECK(reduce({1, 2, 3}, Reduce::Max) == 3.0);
  CHECK(reduce({-1, -1}, Reduce::Max) == -1.0);
  CHECK_THROWS_AS(reduce(Vector(), Reduce::Mean), ShapeError);
}

TEST_CASE("rng determinism") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    all_equal = all_equal && va == b.next_u64();
    any_diff = any_diff || va != c.next_u64();
  }
  CHECK(all_equal);
  CHECK(any_diff);
}
