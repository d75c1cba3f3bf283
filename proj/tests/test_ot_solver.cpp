#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "otseg/error.hpp"
#include "otseg/ot_solver.hpp"
#include "otseg/random.hpp"

using namespace otseg;

namespace {

Matrix<float> points(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t cols = rows.begin()->size();
  Matrix<float> m(rows.size(), cols);
  std::size_t r = 0;
  for (const auto& row : rows) {
    std::copy(row.begin(), row.end(), m.row(r++).begin());
  }
  return m;
}

Matrix<float> random_points(Rng& rng, std::size_t n, std::size_t dims) {
  Matrix<float> m(n, dims);
  for (auto& x : m.values()) x = static_cast<float>(rng.uniform());
  return m;
}

CostMatrix cost_of(std::initializer_list<std::initializer_list<double>> rows) {
  CostMatrix c{Matrix<double>(rows.size(), rows.begin()->size())};
  std::size_t r = 0;
  for (const auto& row : rows) std::copy(row.begin(), row.end(), c.values.row(r++).begin());
  return c;
}

CostMatrix normalized(CostMatrix c) {
  const double m = c.max();
  for (auto& x : c.values.values()) x /= m;
  return c;
}

// Random probability vector with every entry at least 0.05 / n.
std::vector<double> random_simplex(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  for (auto& x : p) x = 0.05 + rng.uniform();
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& x : p) x /= s;
  double rest = 1.0;
  for (std::size_t i = 0; i + 1 < n; ++i) rest -= p[i];
  p.back() = rest;
  return p;
}

double plan_cost(const CostMatrix& c, const Matrix<double>& plan) {
  double s = 0.0;
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j) s += c.values(i, j) * plan(i, j);
  return s;
}

// Feasible plan from filling cells in random order with the largest admissible mass.
Matrix<double> random_feasible_plan(Rng& rng, std::span<const double> a, std::span<const double> b) {
  std::vector<double> ra(a.begin(), a.end());
  std::vector<double> rb(b.begin(), b.end());
  std::vector<std::size_t> cells(a.size() * b.size());
  std::iota(cells.begin(), cells.end(), 0);
  for (std::size_t i = cells.size() - 1; i > 0; --i) std::swap(cells[i], cells[rng.below(i + 1)]);
  Matrix<double> plan(a.size(), b.size(), 0.0);
  for (std::size_t cell : cells) {
    const std::size_t i = cell / b.size();
    const std::size_t j = cell % b.size();
    const double m = std::min(ra[i], rb[j]);
    plan(i, j) = m;
    ra[i] -= m;
    rb[j] -= m;
  }
  return plan;
}

void check_coupling(const CouplingMatrix& p, std::span<const double> a, std::span<const double> b,
                    double tol) {
  double total = 0.0;
  std::vector<double> cols(p.cols(), 0.0);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) {
      REQUIRE(p.values(i, j) >= 0.0);
      r += p.values(i, j);
      cols[j] += p.values(i, j);
    }
    REQUIRE(std::abs(r - a[i]) <= tol);
    total += r;
  }
  for (std::size_t j = 0; j < p.cols(); ++j) REQUIRE(std::abs(cols[j] - b[j]) <= tol);
  REQUIRE(std::abs(total - 1.0) <= 1e-9);
}

}  // namespace

TEST_CASE("cost matrix examples") {
  const CostMatrix c = compute_cost_matrix(points({{0, 0}, {3, 4}}), points({{0, 0}}));
  REQUIRE(c.rows() == 2);
  REQUIRE(c.cols() == 1);
  CHECK(c.values(0, 0) == 0.0);
  CHECK(c.values(1, 0) == 25.0);

  Rng rng(1);
  const auto s = random_points(rng, 6, 4);
  const CostMatrix self = compute_cost_matrix(s, s);
  for (std::size_t i = 0; i < 6; ++i) CHECK(self.values(i, i) == 0.0);
}

TEST_CASE("cost matrix equals a naive double loop on random 5x7 sets") {
  Rng rng(42);
  const auto s = random_points(rng, 5, 3);
  const auto t = random_points(rng, 7, 3);
  const CostMatrix c = compute_cost_matrix(s, t);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 7; ++j) {
      long double ref = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        const long double d = static_cast<long double>(s(i, k)) - t(j, k);
        ref += d * d;
      }
      CHECK(std::abs(c.values(i, j) - static_cast<double>(ref)) <=
            1e-9 * std::max(1.0, static_cast<double>(ref)));
    }
  }
}

TEST_CASE("cost matrix rejects channel mismatch") {
  Matrix<float> a(2, 3), b(2, 4);
  CHECK_THROWS_AS(compute_cost_matrix(a, b), Error);
}

TEST_CASE("sinkhorn on a 1x1 problem") {
  const CostMatrix c = cost_of({{3.5}});
  const std::vector<double> one{1.0};
  const CouplingMatrix p = sinkhorn(c, one, one);
  CHECK(p.values(0, 0) == 1.0);
  CHECK(p.converged);
}

TEST_CASE("sinkhorn on zero cost returns the product coupling") {
  const CostMatrix c = cost_of({{0, 0}, {0, 0}});
  const auto u = uniform_marginal(2);
  const CouplingMatrix p = sinkhorn(c, u, u);
  for (double x : p.values.values()) CHECK(x == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("sinkhorn on symmetric 2x2 matches the closed-form fixed point") {
  // Cross ratio pi00 pi11 / (pi01 pi10) = exp(2 / eps); symmetry gives pi00 / pi01 = exp(1 / eps).
  const double eps = 0.1;
  const double diag = 0.5 / (1.0 + std::exp(-1.0 / eps));
  const double off = 0.5 - diag;
  const CostMatrix c = cost_of({{0, 1}, {1, 0}});
  const auto u = uniform_marginal(2);
  SinkhornConfig cfg;
  cfg.epsilon = eps;
  const CouplingMatrix p = sinkhorn(c, u, u, cfg);
  CHECK(std::abs(p.values(0, 0) - diag) <= 1e-6);
  CHECK(std::abs(p.values(1, 1) - diag) <= 1e-6);
  CHECK(std::abs(p.values(0, 1) - off) <= 1e-6);
  CHECK(std::abs(p.values(1, 0) - off) <= 1e-6);

  SUBCASE("long-run reference iteration agrees") {
    SinkhornConfig longer = cfg;
    longer.max_iterations = 10 * cfg.max_iterations;
    longer.tolerance = 1e-15;
    const CouplingMatrix ref = sinkhorn(c, u, u, longer);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(std::abs(ref.values.values()[k] - p.values.values()[k]) <= 1e-6);
    }
  }
}

TEST_CASE("sinkhorn input errors") {
  const auto u = uniform_marginal(2);
  CostMatrix bad = cost_of({{0, 1}, {1, 0}});
  bad.values(0, 1) = std::numeric_limits<double>::infinity();
  try {
    sinkhorn(bad, u, u);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Input);
  }

  const std::vector<double> not_prob{0.7, 0.7};
  CHECK_THROWS_AS(sinkhorn(cost_of({{0, 1}, {1, 0}}), not_prob, u), Error);

  SinkhornConfig zero_eps;
  zero_eps.epsilon = 0.0;
  CHECK_THROWS_AS(sinkhorn(cost_of({{0, 1}, {1, 0}}), u, u, zero_eps), Error);
}

TEST_CASE("dense kernel mode asks for log domain when the kernel underflows") {
  // exp(-800 / 0.1) underflows, but the plan equals the one for [[0,1],[1,0]].
  const CostMatrix c = cost_of({{800, 801}, {801, 800}});
  const auto u = uniform_marginal(2);
  SinkhornConfig dense;
  dense.log_domain = false;
  try {
    sinkhorn(c, u, u, dense);
    FAIL("expected overflow");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Overflow);
    CHECK(std::string(e.what()).find("log_domain") != std::string::npos);
  }
  const CouplingMatrix p = sinkhorn(c, u, u);
  check_coupling(p, u, u, 1e-6);
  const double diag = 0.5 / (1.0 + std::exp(-10.0));
  CHECK(std::abs(p.values(0, 0) - diag) <= 1e-6);
  CHECK(std::abs(p.values(0, 1) - (0.5 - diag)) <= 1e-6);
}

TEST_CASE("log-domain and dense kernel agree on a benign instance") {
  Rng rng(8);
  const CostMatrix c = compute_cost_matrix(random_points(rng, 9, 2), random_points(rng, 11, 2));
  const auto a = uniform_marginal(9);
  const auto b = uniform_marginal(11);
  SinkhornConfig dense;
  dense.log_domain = false;
  const CouplingMatrix p = sinkhorn(c, a, b);
  const CouplingMatrix q = sinkhorn(c, a, b, dense);
  for (std::size_t k = 0; k < p.values.size(); ++k) {
    CHECK(std::abs(p.values.values()[k] - q.values.values()[k]) <= 1e-9);
  }
}

TEST_CASE("a large constant cost offset does not change the log-domain plan") {
  Rng rng(77);
  const CostMatrix c = compute_cost_matrix(random_points(rng, 40, 6), random_points(rng, 30, 6));
  CostMatrix shifted = c;
  for (auto& x : shifted.values.values()) x += 5000.0;
  const auto a = uniform_marginal(40);
  const auto b = uniform_marginal(30);
  SinkhornConfig cfg;
  cfg.tolerance = 1e-12;
  cfg.max_iterations = 20000;
  const CouplingMatrix p = sinkhorn(c, a, b, cfg);
  const CouplingMatrix q = sinkhorn(shifted, a, b, cfg);
  CHECK(q.converged);
  check_coupling(q, a, b, 1e-9);
  for (std::size_t k = 0; k < p.values.size(); ++k) {
    REQUIRE(std::abs(p.values.values()[k] - q.values.values()[k]) <= 1e-9);
  }
}

TEST_CASE("non-convergence is flagged, not thrown") {
  // Nearly deterministic plan: Sinkhorn's marginal error decays only like 1/t here.
  const CostMatrix c = cost_of({{0, 40}, {64, 72}});
  const auto u = uniform_marginal(2);
  SinkhornConfig cfg;
  cfg.max_iterations = 50;
  const CouplingMatrix p = sinkhorn(c, u, u, cfg);
  CHECK_FALSE(p.converged);
  CHECK(p.iterations == 50);
  CHECK(p.marginal_violation > cfg.tolerance);
  for (double x : p.values.values()) CHECK(std::isfinite(x));
}

TEST_CASE("zero-mass marginal entries get empty rows and columns") {
  const CostMatrix c = cost_of({{0, 1, 2}, {1, 0, 1}, {2, 1, 0}});
  const std::vector<double> a{0.5, 0.0, 0.5};
  const std::vector<double> b{0.25, 0.5, 0.25};
  const CouplingMatrix p = sinkhorn(c, a, b);
  check_coupling(p, a, b, 1e-6);
  for (std::size_t j = 0; j < 3; ++j) CHECK(p.values(1, j) == 0.0);
}

TEST_CASE("transport cost examples") {
  const CostMatrix zero = cost_of({{0, 0}, {0, 0}});
  CouplingMatrix any;
  any.values = Matrix<double>(2, 2, 0.25);
  CHECK(transport_cost(zero, any) == 0.0);

  const CostMatrix swap = cost_of({{0, 1}, {1, 0}});
  CouplingMatrix diag;
  diag.values = Matrix<double>(2, 2, 0.0);
  diag.values(0, 0) = diag.values(1, 1) = 0.5;
  CHECK(transport_cost(swap, diag) == 0.0);

  CouplingMatrix wrong;
  wrong.values = Matrix<double>(3, 2, 0.0);
  CHECK_THROWS_AS(transport_cost(swap, wrong), Error);
}

TEST_CASE("identical point sets at eps = 0.01 have near-zero transport cost") {
  Rng rng(5);
  const auto s = random_points(rng, 8, 3);
  const CostMatrix c = compute_cost_matrix(s, s);
  const auto u = uniform_marginal(8);
  const CouplingMatrix exact = exact_ot_oracle(c, u, u);
  CHECK(transport_cost(c, exact) <= 1e-12);
  SinkhornConfig cfg;
  cfg.epsilon = 0.01;
  cfg.max_iterations = 100000;
  const CouplingMatrix p = sinkhorn(c, u, u, cfg);
  double mean = 0.0;
  for (double x : c.values.values()) mean += x;
  mean /= static_cast<double>(c.values.size());
  CHECK(transport_cost(c, p) <= 0.05 * mean);
}

TEST_CASE("exact oracle small cases") {
  const std::vector<double> one{1.0};
  CHECK(exact_ot_oracle(cost_of({{2.0}}), one, one).values(0, 0) == 1.0);

  const auto u = uniform_marginal(2);
  const CouplingMatrix p = exact_ot_oracle(cost_of({{0, 1}, {1, 0}}), u, u);
  CHECK(p.values(0, 0) == 0.5);
  CHECK(p.values(1, 1) == 0.5);
  CHECK(p.values(0, 1) == 0.0);
  CHECK(p.values(1, 0) == 0.0);

  CostMatrix big{Matrix<double>(9, 8, 1.0)};
  try {
    exact_ot_oracle(big, uniform_marginal(9), uniform_marginal(8));
    FAIL("expected size error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Size);
  }
}

TEST_CASE("exact oracle beats 1000 random feasible plans on random 4x4 instances") {
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    CostMatrix c{Matrix<double>(4, 4)};
    for (auto& x : c.values.values()) x = rng.uniform();
    const auto a = random_simplex(rng, 4);
    const auto b = random_simplex(rng, 4);
    const CouplingMatrix p = exact_ot_oracle(c, a, b);
    check_coupling(p, a, b, 1e-12);
    const double best = plan_cost(c, p.values);
    for (int k = 0; k < 1000; ++k) {
      REQUIRE(best <= plan_cost(c, random_feasible_plan(rng, a, b)) + 1e-12);
    }
  }
}

TEST_CASE("exact oracle matches permutation enumeration for uniform square instances") {
  Rng rng(4);
  for (std::size_t n = 2; n <= 6; ++n) {
    CostMatrix c{Matrix<double>(n, n)};
    for (auto& x : c.values.values()) x = rng.uniform();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += c.values(i, perm[i]);
      best = std::min(best, s / static_cast<double>(n));
    } while (std::next_permutation(perm.begin(), perm.end()));
    const auto u = uniform_marginal(n);
    CHECK(transport_cost(c, exact_ot_oracle(c, u, u)) == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("marginal violation is non-increasing across iterations") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const CostMatrix c =
        compute_cost_matrix(random_points(rng, 30, 3), random_points(rng, 25, 3));
    std::vector<double> trace;
    SinkhornConfig cfg;
    cfg.epsilon = 0.02;
    cfg.violation_trace = &trace;
    sinkhorn(c, uniform_marginal(30), uniform_marginal(25), cfg);
    REQUIRE(trace.size() > 2);
    for (std::size_t t = 1; t < trace.size(); ++t) REQUIRE(trace[t] <= trace[t - 1] + 1e-12);
  }
}

TEST_CASE("transport cost decreases with epsilon and approaches the exact cost") {
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const CostMatrix c =
        normalized(compute_cost_matrix(random_points(rng, 7, 2), random_points(rng, 8, 2)));
    const auto a = uniform_marginal(7);
    const auto b = uniform_marginal(8);
    double previous = std::numeric_limits<double>::infinity();
    double at_smallest = 0.0;
    for (double eps : {1.0, 0.1, 0.01}) {
      SinkhornConfig cfg;
      cfg.epsilon = eps;
      cfg.max_iterations = 200000;
      cfg.tolerance = 1e-10;
      const double w = transport_cost(c, sinkhorn(c, a, b, cfg));
      CHECK(w <= previous + 1e-12);
      previous = w;
      at_smallest = w;
    }
    const double exact = transport_cost(c, exact_ot_oracle(c, a, b));
    CHECK(at_smallest <= exact * 1.05);
    CHECK(at_smallest >= exact - 1e-12);
  }
}

TEST_CASE("permuting source rows permutes the plan exactly") {
  Rng rng(55);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 12 + rng.below(10);
    const std::size_t m = 9 + rng.below(10);
    const CostMatrix c = compute_cost_matrix(random_points(rng, n, 3), random_points(rng, m, 3));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    CostMatrix pc{Matrix<double>(n, m)};
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(c.values.row(perm[i]).begin(), c.values.row(perm[i]).end(),
                pc.values.row(i).begin());
    }
    SinkhornConfig cfg;
    cfg.epsilon = 0.05;
    const CouplingMatrix p = sinkhorn(c, uniform_marginal(n), uniform_marginal(m), cfg);
    const CouplingMatrix q = sinkhorn(pc, uniform_marginal(n), uniform_marginal(m), cfg);
    CHECK(p.iterations == q.iterations);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) REQUIRE(q.values(i, j) == p.values(perm[i], j));
    }
  }
}

TEST_CASE("scaling cost and epsilon together leaves the plan unchanged") {
  Rng rng(61);
  const CostMatrix c = compute_cost_matrix(random_points(rng, 10, 3), random_points(rng, 14, 3));
  const auto a = uniform_marginal(10);
  const auto b = uniform_marginal(14);
  SinkhornConfig cfg;
  cfg.tolerance = 1e-12;
  cfg.max_iterations = 10000;
  const CouplingMatrix p = sinkhorn(c, a, b, cfg);
  for (double s : {0.25, 3.0, 40.0}) {
    CostMatrix sc = c;
    for (auto& x : sc.values.values()) x *= s;
    SinkhornConfig scfg = cfg;
    scfg.epsilon = cfg.epsilon * s;
    const CouplingMatrix q = sinkhorn(sc, a, b, scfg);
    for (std::size_t k = 0; k < p.values.size(); ++k) {
      REQUIRE(std::abs(p.values.values()[k] - q.values.values()[k]) <= 1e-9);
    }
  }

  SUBCASE("normalize_cost equals dividing by the maximum") {
    SinkhornConfig norm = cfg;
    norm.normalize_cost = true;
    const CouplingMatrix q = sinkhorn(c, a, b, norm);
    const CouplingMatrix r = sinkhorn(normalized(c), a, b, cfg);
    for (std::size_t k = 0; k < q.values.size(); ++k) {
      REQUIRE(std::abs(q.values.values()[k] - r.values.values()[k]) <= 1e-9);
    }
  }
}

TEST_CASE("coupling invariants on random solves") {
  Rng rng(123);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + rng.below(60);
    const std::size_t m = 1 + rng.below(60);
    const CostMatrix c = compute_cost_matrix(random_points(rng, n, 4), random_points(rng, m, 4));
    const auto a = random_simplex(rng, n);
    const auto b = random_simplex(rng, m);
    const CouplingMatrix p = sinkhorn(c, a, b);
    REQUIRE(p.converged);
    CHECK(p.marginal_violation <= 1e-6);
    check_coupling(p, a, b, 1e-6);
  }
}
