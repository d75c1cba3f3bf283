#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "otseg/matrix.hpp"

namespace otseg {

/// Squared Euclidean distances between source rows and target rows.
struct CostMatrix {
  Matrix<double> values;

  std::size_t rows() const noexcept { return values.rows(); }
  std::size_t cols() const noexcept { return values.cols(); }
  double max() const noexcept;
};

/// Transport plan with the marginals it was solved for.
struct CouplingMatrix {
  Matrix<double> values;
  std::vector<double> row_marginal;
  std::vector<double> col_marginal;
  bool converged = true;
  std::size_t iterations = 0;
  /// max(|pi 1 - a|_inf, |pi^T 1 - b|_inf) of the returned plan.
  double marginal_violation = 0.0;

  std::size_t rows() const noexcept { return values.rows(); }
  std::size_t cols() const noexcept { return values.cols(); }
};

struct SinkhornConfig {
  double epsilon = 0.1;
  std::size_t max_iterations = 1000;
  double tolerance = 1e-6;
  /// Stabilized log-domain iterations; `false` selects the plain kernel fast path.
  bool log_domain = true;
  /// Divide the cost by its maximum before solving (changes the effective epsilon).
  bool normalize_cost = false;
  /// When set, receives the marginal violation measured at the start of every iteration.
  std::vector<double>* violation_trace = nullptr;
};

/// Throws a Validation error when epsilon/tolerance/max_iterations are out of range.
void validate(const SinkhornConfig& config);

/// c[i][j] = sum_c (source[i][c] - target[j][c])^2, accumulated in double.
CostMatrix compute_cost_matrix(const Matrix<float>& source, const Matrix<float>& target);

std::vector<double> uniform_marginal(std::size_t n);

/// Entropic OT:  min_pi <C, pi> + epsilon * sum_ij pi_ij log pi_ij  s.t. pi 1 = a, pi^T 1 = b.
///
/// Sign convention: with H(pi) = -sum pi log pi the penalty is -epsilon * H(pi),
/// i.e. high-entropy plans are favoured. The objective is strictly convex and the
/// minimizer is pi = diag(u) exp(-C / epsilon) diag(v).
///
/// In log-domain mode the solver keeps dual potentials (f, g) and a kernel
/// exp((f_i + g_j - C_ij) / epsilon) whose rows and columns are re-absorbed into
/// the potentials whenever a scaling factor leaves [e^-30, e^30] or a row/column
/// sum underflows. Every iteration is one row update followed by one column
/// update; the loop stops once the row violation (columns are exact after the
/// column update) drops to `tolerance`.
///
/// Source rows are visited in a canonical content order during column sums, so
/// permuting the rows of `cost` (with `a`) permutes the plan exactly.
CouplingMatrix sinkhorn(const CostMatrix& cost, std::span<const double> a,
                        std::span<const double> b, const SinkhornConfig& config = {});

/// Sum_ij c_ij pi_ij (the entropy term is not included).
double transport_cost(const CostMatrix& cost, const CouplingMatrix& coupling);

/// Exact unregularized optimal plan for desk-scale instances (rows * cols <= 64),
/// via successive shortest paths on the bipartite transport network.
CouplingMatrix exact_ot_oracle(const CostMatrix& cost, std::span<const double> a,
                               std::span<const double> b);

inline constexpr std::size_t kExactOracleMaxCells = 64;

}  // namespace otseg
