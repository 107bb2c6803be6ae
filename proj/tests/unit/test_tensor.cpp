#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "sba/error.hpp"
#include "sba/tensor.hpp"

using namespace sba;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, bool grad = false,
                     double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return Tensor::matrix(r, c, std::move(v), grad);
}

oracle::Matrix to_rows(const Tensor& t) {
  oracle::Matrix m(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) m[i].assign(t.row(i).begin(), t.row(i).end());
  return m;
}

Tensor log_probs_of(std::vector<std::vector<double>> probs) {
  const std::size_t k = probs.front().size();
  std::vector<double> v;
  for (const auto& row : probs)
    for (double p : row) v.push_back(std::log(p));
  return Tensor::matrix(probs.size(), k, std::move(v));
}

}  // namespace

TEST_CASE("affine: identity weights pass rows through") {
  const Tensor y = ops::affine(Tensor::matrix({{1, 2}}), Tensor::matrix({{1, 0}, {0, 1}}),
                               Tensor::vector({0, 0}));
  CHECK(y.shape() == Shape{1, 2});
  CHECK(y.at(0, 0) == 1.0);
  CHECK(y.at(0, 1) == 2.0);
}

TEST_CASE("affine: dot product plus bias") {
  const Tensor y =
      ops::affine(Tensor::matrix({{1, 1}}), Tensor::matrix({{2}, {3}}), Tensor::vector({1}));
  CHECK(y.item() == 6.0);
}

TEST_CASE("affine: random 3x4 by 4x2 matches triple loop") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_matrix(3, 4, rng), w = random_matrix(4, 2, rng);
    const Tensor b = Tensor::vector({0.25, -1.5});
    const Tensor y = ops::affine(x, w, b);
    const auto ref = oracle::matmul(to_rows(x), to_rows(w));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(y.at(i, j) - (ref[i][j] + b[j])) < 1e-12);
  }
}

TEST_CASE("affine: shape mismatch names both shapes") {
  try {
    ops::affine(Tensor::matrix({{1, 2, 3}}), Tensor::matrix({{1}, {2}}), Tensor::vector({0}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1x3]") != std::string::npos);
    CHECK(msg.find("[2x1]") != std::string::npos);
  }
}

TEST_CASE("affine: result for a row does not depend on the other rows") {
  std::mt19937_64 rng(5);
  const Tensor w = random_matrix(37, 13, rng), b = random_matrix(1, 13, rng).detach();
  const Tensor bias = Tensor::vector(std::vector<double>(b.values().begin(), b.values().end()));
  const Tensor many = random_matrix(9, 37, rng);
  const Tensor all = ops::affine(many, w, bias);
  for (std::size_t r = 0; r < 9; ++r) {
    const Tensor one = ops::affine(ops::slice_rows(many, r, r + 1), w, bias);
    for (std::size_t j = 0; j < 13; ++j) CHECK(one.at(0, j) == all.at(r, j));
  }
}

TEST_CASE("relu: forward and subgradient") {
  const Tensor y = ops::relu(Tensor::vector({-1, 0, 2}));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);

  const Tensor neg = ops::relu(Tensor::vector({-3, -0.5, -1e-9}));
  for (double v : neg.values()) CHECK(v == 0.0);

  Tensor x = Tensor::vector({-1, 2}, true);
  Tape tape;
  tape.backward(tape.sum(tape.relu(x)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);

  Tensor zero = Tensor::vector({0.0}, true);
  Tape t2;
  t2.backward(t2.sum(t2.relu(zero)));
  CHECK(zero.grad()[0] == 0.0);
}

TEST_CASE("log_softmax: worked values") {
  const Tensor sym = ops::log_softmax(Tensor::matrix({{0, 0}}));
  CHECK(std::abs(sym.at(0, 0) - std::log(0.5)) < 1e-15);
  CHECK(std::abs(sym.at(0, 1) - std::log(0.5)) < 1e-15);

  const Tensor big = ops::log_softmax(Tensor::matrix({{1000, 0}}));
  CHECK(big.all_finite());
  CHECK(std::abs(big.at(0, 0)) < 1e-12);
  CHECK(std::abs(big.at(0, 1) + 1000.0) < 1e-9);

  const Tensor p = ops::softmax(Tensor::matrix({{1, 2, 3}}));
  CHECK(p.at(0, 0) == doctest::Approx(0.0900).epsilon(1e-3));
  CHECK(p.at(0, 1) == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(p.at(0, 2) == doctest::Approx(0.6652).epsilon(1e-3));
  const auto ref = oracle::log_softmax({1, 2, 3});
  const Tensor lp = ops::log_softmax(Tensor::matrix({{1, 2, 3}}));
  for (int c = 0; c < 3; ++c) CHECK(std::abs(lp.at(0, c) - ref[c]) < 1e-14);
}

TEST_CASE("log_softmax: rows exponentiate to one for large inputs") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(5 * 7);
    for (auto& x : v) x = u(rng) * std::pow(10.0, -(trial % 7));
    const Tensor lp = ops::log_softmax(Tensor::matrix(5, 7, v));
    REQUIRE(lp.all_finite());
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (double x : lp.row(r)) s += std::exp(x);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("cross_entropy_mean: worked values") {
  const double eps = 1e-12;
  CHECK(ops::cross_entropy_mean(log_probs_of({{1 - eps, eps}}), std::vector<int>{0}) <
        2 * eps);

  const Tensor uniform = log_probs_of({{0.25, 0.25, 0.25, 0.25}});
  for (int label = 0; label < 4; ++label) {
    CHECK(std::abs(ops::cross_entropy_mean(uniform, std::vector<int>{label}) - std::log(4.0)) <
          1e-12);
  }

  const Tensor mixed = log_probs_of({{0.7, 0.2, 0.1}, {0.1, 0.3, 0.6}});
  const double expected = (-std::log(0.2) - std::log(0.6)) / 2;
  CHECK(std::abs(ops::cross_entropy_mean(mixed, std::vector<int>{1, 2}) - expected) < 1e-15);

  Tape tape;
  CHECK(std::abs(tape.cross_entropy_mean(mixed, std::vector<int>{1, 2}).item() - expected) <
        1e-15);
}

TEST_CASE("cross_entropy_mean: uniform equals ln k for every k") {
  for (std::size_t k = 2; k <= 64; k *= 2) {
    const Tensor lp = ops::log_softmax(Tensor::matrix(1, k, std::vector<double>(k, 0.37)));
    CHECK(std::abs(ops::cross_entropy_mean(lp, std::vector<int>{int(k - 1)}) -
                   std::log(double(k))) < 1e-12);
  }
}

TEST_CASE("cross_entropy_mean: label out of range") {
  const Tensor lp = log_probs_of({{0.5, 0.5}});
  CHECK_THROWS_AS(ops::cross_entropy_mean(lp, std::vector<int>{2}), DomainError);
  CHECK_THROWS_AS(ops::cross_entropy_mean(lp, std::vector<int>{-1}), DomainError);
  Tape tape;
  CHECK_THROWS_AS(tape.cross_entropy_mean(lp, std::vector<int>{2}), DomainError);
}

TEST_CASE("kl_divergence_mean: worked values") {
  const Tensor p = log_probs_of({{0.5, 0.5}});
  const Tensor q = log_probs_of({{0.25, 0.75}});
  CHECK(std::abs(ops::kl_divergence_mean(p, p)) < 1e-12);
  const double expected = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  CHECK(std::abs(ops::kl_divergence_mean(p, q) - expected) < 1e-15);
  CHECK(std::abs(ops::kl_divergence_mean(p, q) - 0.14384) < 1e-5);
}

TEST_CASE("kl_divergence_mean: nonnegative and zero only on equal rows") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t k = 2 + trial % 9;
    const Tensor a = ops::log_softmax(random_matrix(3, k, rng, false, 3.0));
    const Tensor b = ops::log_softmax(random_matrix(3, k, rng, false, 3.0));
    CHECK(ops::kl_divergence_mean(a, b) >= 0.0);
    CHECK(std::abs(ops::kl_divergence_mean(a, a)) < 1e-12);
    double ref = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
      std::vector<double> pa, pb;
      for (double x : a.row(r)) pa.push_back(std::exp(x));
      for (double x : b.row(r)) pb.push_back(std::exp(x));
      ref += oracle::kl(pa, pb) / 3;
    }
    CHECK(std::abs(ops::kl_divergence_mean(a, b) - ref) < 1e-12);
  }
}

TEST_CASE("backward: sum and product rule") {
  Tensor x = Tensor::matrix({{1, 2, 3}, {4, 5, 6}}, true);
  Tape tape;
  tape.backward(tape.sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor a = Tensor::scalar(2.0, true), b = Tensor::scalar(3.0, true);
  Tape t2;
  t2.backward(t2.mul(a, b));
  CHECK(a.grad()[0] == 3.0);
  CHECK(b.grad()[0] == 2.0);
}

TEST_CASE("backward: accumulates until zero_grad") {
  Tensor x = Tensor::vector({1.0, -2.0}, true);
  for (int i = 0; i < 3; ++i) {
    Tape tape;
    tape.backward(tape.sum(tape.scale(x, 2.0)));
  }
  CHECK(x.grad()[0] == 6.0);
  x.zero_grad();
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("backward: non-scalar loss is rejected") {
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  Tape tape;
  const Tensor y = tape.scale(x, 3.0);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("backward: two-layer MLP cross entropy matches finite differences") {
  std::mt19937_64 rng(23);
  Tensor w1 = random_matrix(4, 6, rng, true), w2 = random_matrix(6, 3, rng, true);
  Tensor b1 = Tensor::vector({0.1, -0.2, 0.3, 0.05, -0.1, 0.2}, true);
  Tensor b2 = Tensor::vector({0.0, 0.1, -0.1}, true);
  const Tensor x = random_matrix(5, 4, rng);
  const std::vector<int> y{0, 2, 1, 1, 0};
  const ScalarObjective f = [&](Tape& t) {
    const Tensor h = t.relu(t.affine(x, w1, b1));
    return t.cross_entropy_mean(t.log_softmax(t.affine(h, w2, b2)), y);
  };
  const std::vector<Tensor> params{w1, b1, w2, b2};
  CHECK(finite_difference_check(f, params, 1e-5) < 1e-6);
}

TEST_CASE("backward: bit-identical on repeat") {
  std::mt19937_64 rng(29);
  Tensor w = random_matrix(8, 4, rng, true);
  Tensor b = Tensor::vector({0, 0, 0, 0}, true);
  const Tensor x = random_matrix(16, 8, rng);
  std::vector<int> y(16);
  for (int i = 0; i < 16; ++i) y[i] = i % 4;
  auto grad_once = [&] {
    w.zero_grad();
    Tape t;
    t.backward(t.cross_entropy_mean(t.log_softmax(t.affine(x, w, b)), y));
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  CHECK(grad_once() == grad_once());
}

TEST_CASE("finite_difference_check: quadratic is exact") {
  Tensor theta = Tensor::vector({0.3, -1.2, 2.5, 0.01}, true);
  const double err = finite_difference_check(
      [](Tape& t, const Tensor& th) { return t.sum(t.mul(th, th)); }, theta, 1e-5);
  CHECK(err < 1e-9);
}

TEST_CASE("finite_difference_check: every op on random small instances") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + trial % 4, n = 2 + trial % 3, m = 2 + (trial / 3) % 3;
    Tensor x = random_matrix(rows, n, rng, true);
    Tensor w = random_matrix(n, m, rng, true);
    Tensor b = random_matrix(1, m, rng).detach();
    Tensor bias(Shape{m}, std::vector<double>(b.values().begin(), b.values().end()), true);
    Tensor other = random_matrix(rows, m, rng, true);
    std::vector<int> labels(rows);
    for (auto& l : labels) l = static_cast<int>(rng() % m);
    std::vector<std::size_t> pick{rows - 1, 0};

    const ScalarObjective f = [&](Tape& t) {
      const Tensor z = t.affine(x, w, bias);
      const Tensor lp = t.log_softmax(t.add(t.mul(z, other), t.scale(z, 0.5)));
      const Tensor lq = t.log_softmax(t.concat_rows(t.slice_rows(other, 0, rows),
                                                    Tensor(Shape{0, m})));
      const Tensor ce = t.cross_entropy_mean(lp, labels);
      const Tensor kl = t.kl_divergence_mean(t.gather_rows(lq, pick), t.gather_rows(lp, pick),
                                             KlGradient::both);
      return t.add(t.add(ce, kl), t.scale(t.sum(t.relu(z)), 0.1));
    };
    // Resample points sitting on the relu kink.
    const Tensor z = ops::affine(x, w, bias);
    bool near_kink = false;
    for (double v : z.values()) near_kink |= std::abs(v) < 1e-6;
    if (near_kink) continue;
    const std::vector<Tensor> params{x, w, bias, other};
    CHECK(finite_difference_check(f, params, 1e-5) < 1e-4);
  }
}

TEST_CASE("kl gradient: reference branch detached by default") {
  std::mt19937_64 rng(37);
  Tensor ref_logits = random_matrix(3, 4, rng, true);
  Tensor virt_logits = random_matrix(3, 4, rng, true);
  {
    Tape t;
    t.backward(t.kl_divergence_mean(t.log_softmax(ref_logits), t.log_softmax(virt_logits)));
  }
  for (double g : ref_logits.grad()) CHECK(g == 0.0);
  double norm = 0.0;
  for (double g : virt_logits.grad()) norm += std::abs(g);
  CHECK(norm > 0.0);

  const double err = finite_difference_check(
      [&](Tape& t, const Tensor& v) {
        return t.kl_divergence_mean(t.log_softmax(ref_logits.detach()), t.log_softmax(v));
      },
      virt_logits, 1e-5);
  CHECK(err < 1e-4);

  ref_logits.zero_grad();
  {
    Tape t;
    t.backward(t.kl_divergence_mean(t.log_softmax(ref_logits), t.log_softmax(virt_logits),
                                    KlGradient::both));
  }
  norm = 0.0;
  for (double g : ref_logits.grad()) norm += std::abs(g);
  CHECK(norm > 0.0);
}

TEST_CASE("tensor: handles share storage and detach copies") {
  Tensor a = Tensor::vector({1, 2, 3});
  Tensor b = a;
  b.mutable_values()[0] = 9;
  CHECK(a[0] == 9.0);
  CHECK(a.shares_storage(b));
  Tensor c = a.detach();
  c.mutable_values()[1] = -1;
  CHECK(a[1] == 2.0);
  CHECK_FALSE(c.requires_grad());
}

TEST_CASE("tensor: invalid shapes") {
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(ops::concat_rows(Tensor::matrix({{1, 2}}), Tensor::matrix({{1, 2, 3}})),
                  DimensionError);
}
