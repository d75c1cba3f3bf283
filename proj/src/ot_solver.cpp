#include "otseg/ot_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "otseg/error.hpp"

namespace otseg {
namespace {

// Scaling factors outside [e^-kAbsorbLog, e^kAbsorbLog] are folded into the potentials.
constexpr double kAbsorbLog = 30.0;
const double kAbsorbHigh = std::exp(kAbsorbLog);
const double kAbsorbLow = std::exp(-kAbsorbLog);
// Row/column sums below this are recomputed exactly with log-sum-exp.
constexpr double kTinySum = 1e-250;

void check_probability_vector(std::span<const double> p, const char* name) {
  double sum = 0.0;
  for (double x : p) {
    if (!std::isfinite(x) || x < 0.0) {
      fail(ErrorKind::Input, std::string(name) + " has a negative or non-finite entry");
    }
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    fail(ErrorKind::Validation, std::string(name) + " sums to " + std::to_string(sum) +
                                    ", expected 1");
  }
}

void check_problem(const CostMatrix& cost, std::span<const double> a, std::span<const double> b) {
  if (cost.rows() == 0 || cost.cols() == 0) fail(ErrorKind::Dimension, "empty cost matrix");
  if (a.size() != cost.rows() || b.size() != cost.cols()) {
    fail(ErrorKind::Dimension, "marginal lengths do not match the cost matrix shape");
  }
  for (double c : cost.values.values()) {
    if (!std::isfinite(c)) fail(ErrorKind::Input, "cost matrix has a non-finite entry");
  }
  check_probability_vector(a, "row marginal");
  check_probability_vector(b, "column marginal");
}

// Four independent accumulators in fixed order; vectorizes without reassociation flags.
double dot(const double* x, const double* y, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 += x[j] * y[j];
    s1 += x[j + 1] * y[j + 1];
    s2 += x[j + 2] * y[j + 2];
    s3 += x[j + 3] * y[j + 3];
  }
  for (; j < n; ++j) s0 += x[j] * y[j];
  return (s0 + s1) + (s2 + s3);
}

void axpy(double alpha, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) y[j] += x[j] * alpha;
}

// Source rows sorted by (a_i, cost row) so column sums do not depend on input row order.
// Rows that compare equal hold identical data and therefore contribute identical terms.
std::vector<std::size_t> canonical_row_order(const CostMatrix& cost, std::span<const double> a) {
  std::vector<std::size_t> order(cost.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (a[x] != a[y]) return a[x] < a[y];
    const auto rx = cost.values.row(x);
    const auto ry = cost.values.row(y);
    return std::lexicographical_compare(rx.begin(), rx.end(), ry.begin(), ry.end());
  });
  return order;
}

double log_sum_exp(const std::vector<double>& xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

// Plan fully determined by one marginal when one side has a single point.
CouplingMatrix degenerate_plan(const CostMatrix& cost, std::span<const double> a,
                               std::span<const double> b) {
  CouplingMatrix out;
  out.values = Matrix<double>(cost.rows(), cost.cols());
  for (std::size_t i = 0; i < cost.rows(); ++i) {
    for (std::size_t j = 0; j < cost.cols(); ++j) {
      out.values(i, j) = cost.rows() == 1 ? b[j] : a[i];
    }
  }
  out.row_marginal.assign(a.begin(), a.end());
  out.col_marginal.assign(b.begin(), b.end());
  out.converged = true;
  out.iterations = 0;
  return out;
}

double plan_violation(const Matrix<double>& plan, std::span<const double> a,
                      std::span<const double> b) {
  std::vector<double> cols(plan.cols(), 0.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < plan.rows(); ++i) {
    const auto row = plan.row(i);
    double r = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      r += row[j];
      cols[j] += row[j];
    }
    worst = std::max(worst, std::abs(r - a[i]));
  }
  for (std::size_t j = 0; j < cols.size(); ++j) worst = std::max(worst, std::abs(cols[j] - b[j]));
  return worst;
}

class SinkhornState {
 public:
  SinkhornState(const CostMatrix& cost, std::span<const double> a, std::span<const double> b,
                const SinkhornConfig& config)
      : cost_(cost),
        a_(a),
        b_(b),
        stabilized_(config.log_domain),
        n_(cost.rows()),
        m_(cost.cols()),
        kernel_(n_, m_),
        alpha_(n_, 0.0),
        beta_(m_, 0.0),
        u_(n_, 1.0),
        v_(m_, 1.0),
        row_sum_(n_, 0.0),
        col_sum_(m_, 0.0),
        order_(canonical_row_order(cost, a)) {
    const double scale = config.normalize_cost ? cost.max() : 1.0;
    inv_eps_ = scale > 0.0 ? 1.0 / (config.epsilon * scale) : 1.0 / config.epsilon;
    for (std::size_t i = 0; i < n_; ++i) {
      if (a_[i] == 0.0) u_[i] = 0.0;
      const auto c = cost_.values.row(i);
      auto k = kernel_.row(i);
      for (std::size_t j = 0; j < m_; ++j) k[j] = std::exp(-c[j] * inv_eps_);
    }
    for (std::size_t j = 0; j < m_; ++j) {
      if (b_[j] == 0.0) v_[j] = 0.0;
    }
  }

  // Fills row_sum_ and returns max_i |u_i (K v)_i - a_i|.
  double row_pass() {
    double worst = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      row_sum_[i] = dot(kernel_.row(i).data(), v_.data(), m_);
      worst = std::max(worst, std::abs(u_[i] * row_sum_[i] - a_[i]));
    }
    return worst;
  }

  // One pass over the kernel: measures the row violation of the current plan, applies
  // the row update and accumulates the column sums needed by the column update.
  // Returns the violation measured before the update; `revert()` undoes the row update.
  double row_sweep() {
    saved_u_ = u_;
    std::fill(col_sum_.begin(), col_sum_.end(), 0.0);
    pending_exact_.clear();
    pending_absorb_.clear();
    double worst = 0.0;
    for (std::size_t i : order_) {
      if (a_[i] == 0.0) continue;
      const double* k = kernel_.row(i).data();
      const double d = dot(k, v_.data(), m_);
      worst = std::max(worst, std::abs(u_[i] * d - a_[i]));
      const double u = a_[i] / d;
      if (!(d >= kTinySum) || !std::isfinite(d) || !std::isfinite(u)) {
        pending_exact_.push_back(i);
        continue;
      }
      u_[i] = u;
      axpy(u, k, col_sum_.data(), m_);
      if (u > kAbsorbHigh || u < kAbsorbLow) pending_absorb_.push_back(i);
    }
    return worst;
  }

  void revert() { u_ = saved_u_; }

  // Folds out-of-range scalings into the potentials and solves underflowed rows exactly.
  void finish_rows() {
    if (!stabilized_) {
      if (!pending_exact_.empty()) overflow("row", pending_exact_.front());
      return;
    }
    for (std::size_t i : pending_absorb_) {
      alpha_[i] += std::log(u_[i]);
      u_[i] = 1.0;
      refresh_row(i);
    }
    have_log_v_ = false;
    for (std::size_t i : pending_exact_) {
      exact_row(i);
      axpy(1.0, kernel_.row(i).data(), col_sum_.data(), m_);
    }
  }

  void update_columns() {
    have_log_u_ = false;
    for (std::size_t j = 0; j < m_; ++j) {
      if (b_[j] == 0.0) continue;
      const double e = col_sum_[j];
      if (!(e >= kTinySum) || !std::isfinite(e)) {
        if (!stabilized_) overflow("column", j);
        exact_column(j);
        continue;
      }
      const double v = b_[j] / e;
      if (!std::isfinite(v)) {
        if (!stabilized_) overflow("column", j);
        exact_column(j);
      } else if (stabilized_ && (v > kAbsorbHigh || v < kAbsorbLow)) {
        beta_[j] += std::log(v);
        v_[j] = 1.0;
        refresh_column(j);
      } else {
        v_[j] = v;
      }
    }
  }

  // pi_ij = K_ij u_i v_j, built in the kernel's storage.
  Matrix<double> into_plan() && {
    for (std::size_t i = 0; i < n_; ++i) {
      auto k = kernel_.row(i);
      const double u = u_[i];
      for (std::size_t j = 0; j < m_; ++j) k[j] = k[j] * u * v_[j];
    }
    return std::move(kernel_);
  }

 private:
  [[noreturn]] void overflow(const char* what, std::size_t index) const {
    fail(ErrorKind::Overflow, std::string("kernel ") + what + " " + std::to_string(index) +
                                  " under/overflowed in dense mode; retry with log_domain=true");
  }

  double exponent(std::size_t i, std::size_t j) const {
    return alpha_[i] + beta_[j] - cost_.values(i, j) * inv_eps_;
  }

  void refresh_row(std::size_t i) {
    auto k = kernel_.row(i);
    for (std::size_t j = 0; j < m_; ++j) k[j] = std::exp(exponent(i, j));
  }

  void refresh_column(std::size_t j) {
    for (std::size_t i = 0; i < n_; ++i) kernel_(i, j) = std::exp(exponent(i, j));
  }

  // alpha_i = log a_i - LSE_j(beta_j + log v_j - C_ij / eps); the row then sums to a_i.
  void exact_row(std::size_t i) {
    if (!have_log_v_) {
      log_v_.resize(m_);
      for (std::size_t j = 0; j < m_; ++j) log_v_[j] = std::log(v_[j]);
      have_log_v_ = true;
    }
    scratch_.clear();
    for (std::size_t j = 0; j < m_; ++j) {
      if (v_[j] == 0.0) continue;
      scratch_.push_back(beta_[j] + log_v_[j] - cost_.values(i, j) * inv_eps_);
    }
    alpha_[i] = std::log(a_[i]) - log_sum_exp(scratch_);
    u_[i] = 1.0;
    refresh_row(i);
  }

  void exact_column(std::size_t j) {
    if (!have_log_u_) {
      log_u_.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) log_u_[i] = std::log(u_[i]);
      have_log_u_ = true;
    }
    scratch_.clear();
    for (std::size_t i : order_) {
      if (u_[i] == 0.0) continue;
      scratch_.push_back(alpha_[i] + log_u_[i] - cost_.values(i, j) * inv_eps_);
    }
    beta_[j] = std::log(b_[j]) - log_sum_exp(scratch_);
    v_[j] = 1.0;
    refresh_column(j);
  }

  const CostMatrix& cost_;
  std::span<const double> a_;
  std::span<const double> b_;
  bool stabilized_;
  std::size_t n_;
  std::size_t m_;
  double inv_eps_ = 0.0;
  Matrix<double> kernel_;
  std::vector<double> alpha_, beta_, u_, v_;
  std::vector<double> row_sum_, col_sum_, saved_u_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> pending_exact_, pending_absorb_;
  std::vector<double> log_u_, log_v_, scratch_;
  bool have_log_u_ = false;
  bool have_log_v_ = false;
};

}  // namespace

double CostMatrix::max() const noexcept {
  double m = 0.0;
  for (double c : values.values()) m = std::max(m, c);
  return m;
}

void validate(const SinkhornConfig& config) {
  if (!(config.epsilon > 0.0) || !std::isfinite(config.epsilon)) {
    fail(ErrorKind::Validation, "epsilon must be positive");
  }
  if (!(config.tolerance > 0.0)) fail(ErrorKind::Validation, "tolerance must be positive");
  if (config.max_iterations == 0) fail(ErrorKind::Validation, "max_iterations must be positive");
}

CostMatrix compute_cost_matrix(const Matrix<float>& source, const Matrix<float>& target) {
  if (source.cols() != target.cols()) {
    fail(ErrorKind::Dimension, "source has " + std::to_string(source.cols()) +
                                   " channels, target has " + std::to_string(target.cols()));
  }
  const std::size_t dims = source.cols();
  CostMatrix cost{Matrix<double>(source.rows(), target.rows())};
  // ||x||^2 + ||y||^2 - 2<x,y> would cancel badly for nearby points; use the direct form.
  // Target stored channel-major so the inner loop runs over target pixels.
  const std::size_t m = target.rows();
  std::vector<double> t(target.size());
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t c = 0; c < dims; ++c) t[c * m + j] = target(j, c);
  }
  for (std::size_t i = 0; i < source.rows(); ++i) {
    double* __restrict out = cost.values.row(i).data();
    std::fill(out, out + m, 0.0);
    for (std::size_t c = 0; c < dims; ++c) {
      const double x = source(i, c);
      const double* __restrict y = t.data() + c * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double d = x - y[j];
        out[j] += d * d;
      }
    }
  }
  return cost;
}

std::vector<double> uniform_marginal(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

CouplingMatrix sinkhorn(const CostMatrix& cost, std::span<const double> a,
                        std::span<const double> b, const SinkhornConfig& config) {
  validate(config);
  check_problem(cost, a, b);
  if (cost.rows() == 1 || cost.cols() == 1) return degenerate_plan(cost, a, b);

  SinkhornState state(cost, a, b, config);
  CouplingMatrix out;
  out.converged = false;
  std::size_t iter = 0;
  for (; iter < config.max_iterations; ++iter) {
    const double violation = state.row_sweep();
    if (iter > 0) {
      if (config.violation_trace) config.violation_trace->push_back(violation);
      if (violation <= config.tolerance) {
        state.revert();
        out.converged = true;
        break;
      }
    }
    state.finish_rows();
    state.update_columns();
  }
  if (!out.converged) {
    const double violation = state.row_pass();
    if (config.violation_trace) config.violation_trace->push_back(violation);
    out.converged = violation <= config.tolerance;
  }
  out.iterations = iter;
  out.values = std::move(state).into_plan();
  out.row_marginal.assign(a.begin(), a.end());
  out.col_marginal.assign(b.begin(), b.end());
  out.marginal_violation = plan_violation(out.values, a, b);
  return out;
}

double transport_cost(const CostMatrix& cost, const CouplingMatrix& coupling) {
  if (cost.rows() != coupling.rows() || cost.cols() != coupling.cols()) {
    fail(ErrorKind::Dimension, "cost and coupling shapes differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < cost.rows(); ++i) {
    total += dot(cost.values.row(i).data(), coupling.values.row(i).data(), cost.cols());
  }
  return std::max(total, 0.0);
}

CouplingMatrix exact_ot_oracle(const CostMatrix& cost, std::span<const double> a,
                               std::span<const double> b) {
  if (cost.rows() * cost.cols() > kExactOracleMaxCells) {
    fail(ErrorKind::Size, "exact oracle accepts at most " +
                              std::to_string(kExactOracleMaxCells) + " cells");
  }
  check_problem(cost, a, b);
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  constexpr double kEps = 1e-15;

  Matrix<double> flow(n, m, 0.0);
  std::vector<double> supply(a.begin(), a.end());
  std::vector<double> demand(b.begin(), b.end());
  const double inf = std::numeric_limits<double>::infinity();

  // Nodes 0..n-1 sources, n..n+m-1 sinks. Residual arcs: i->j always, j->i while flow > 0.
  for (std::size_t round = 0; round < 100000; ++round) {
    double remaining = 0.0;
    for (double s : supply) remaining += s;
    if (remaining <= 1e-13) break;

    std::vector<double> dist(n + m, inf);
    std::vector<std::ptrdiff_t> parent(n + m, -1);
    for (std::size_t i = 0; i < n; ++i) {
      if (supply[i] > kEps) dist[i] = 0.0;
    }
    for (std::size_t pass = 0; pass < n + m; ++pass) {
      bool changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          const std::size_t sink = n + j;
          const double c = cost.values(i, j);
          if (dist[i] < inf && dist[i] + c < dist[sink] - 1e-15) {
            dist[sink] = dist[i] + c;
            parent[sink] = static_cast<std::ptrdiff_t>(i);
            changed = true;
          }
          if (flow(i, j) > kEps && dist[sink] < inf && dist[sink] - c < dist[i] - 1e-15) {
            dist[i] = dist[sink] - c;
            parent[i] = static_cast<std::ptrdiff_t>(sink);
            changed = true;
          }
        }
      }
      if (!changed) break;
    }

    std::ptrdiff_t best = -1;
    for (std::size_t j = 0; j < m; ++j) {
      if (demand[j] > kEps && dist[n + j] < inf &&
          (best < 0 || dist[n + j] < dist[static_cast<std::size_t>(best)])) {
        best = static_cast<std::ptrdiff_t>(n + j);
      }
    }
    if (best < 0) break;

    // Walk back to the originating source, collecting the bottleneck.
    double delta = demand[static_cast<std::size_t>(best) - n];
    std::size_t node = static_cast<std::size_t>(best);
    for (std::size_t steps = 0; parent[node] >= 0; ++steps) {
      if (steps > n + m) fail(ErrorKind::Run, "exact oracle found a cyclic shortest-path tree");
      const auto prev = static_cast<std::size_t>(parent[node]);
      if (node < n) delta = std::min(delta, flow(node, prev - n));  // reverse arc sink->source
      node = prev;
    }
    delta = std::min(delta, supply[node]);
    if (delta <= 0.0) break;

    supply[node] -= delta;
    demand[static_cast<std::size_t>(best) - n] -= delta;
    node = static_cast<std::size_t>(best);
    while (parent[node] >= 0) {
      const auto prev = static_cast<std::size_t>(parent[node]);
      if (node >= n) {
        flow(prev, node - n) += delta;
      } else {
        flow(node, prev - n) -= delta;
      }
      node = prev;
    }
  }

  CouplingMatrix out;
  out.values = std::move(flow);
  out.row_marginal.assign(a.begin(), a.end());
  out.col_marginal.assign(b.begin(), b.end());
  out.marginal_violation = plan_violation(out.values, a, b);
  out.converged = true;
  return out;
}

}  // namespace otseg
