#include "optfee/simplex.h"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace optfee {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::size_t kReinvertEvery = 50;
constexpr std::size_t kDegenerateRun = 50;

/// Dense tableau B^{-1} [A | b] kept in step with the basis by Gauss-Jordan
/// pivots and rebuilt from the original columns by an LU solve every
/// kReinvertEvery pivots, so rounding does not accumulate.
class Tableau {
 public:
  Tableau(RowMatrix a, Eigen::VectorXd b, std::vector<std::size_t> basis)
      : a_(std::move(a)), b_(std::move(b)), basis_(std::move(basis)) {
    reinvert();
  }

  std::size_t rows() const { return static_cast<std::size_t>(a_.rows()); }
  const std::vector<std::size_t>& basis() const { return basis_; }
  double rhs(std::size_t i) const { return rhs_(static_cast<Eigen::Index>(i)); }
  double at(std::size_t i, std::size_t j) const { return t_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); }

  void set_cost(Eigen::VectorXd cost) {
    cost_ = std::move(cost);
    price();
  }

  void reinvert() {
    const Eigen::Index m = a_.rows();
    Eigen::MatrixXd basis_matrix(m, m);
    for (Eigen::Index k = 0; k < m; ++k) basis_matrix.col(k) = a_.col(static_cast<Eigen::Index>(basis_[k]));
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(basis_matrix);
    t_ = lu.solve(Eigen::MatrixXd(a_));
    rhs_ = lu.solve(b_);
    for (Eigen::Index i = 0; i < m; ++i)
      if (rhs_(i) < 0.0 && rhs_(i) > -1e-12) rhs_(i) = 0.0;
    if (cost_.size() > 0) price();
    since_reinvert_ = 0;
  }

  void pivot(std::size_t r, std::size_t c) {
    const auto ri = static_cast<Eigen::Index>(r);
    const auto ci = static_cast<Eigen::Index>(c);
    const double inv = 1.0 / t_(ri, ci);
    t_.row(ri) *= inv;
    rhs_(ri) *= inv;
    t_(ri, ci) = 1.0;
    for (Eigen::Index i = 0; i < t_.rows(); ++i) {
      if (i == ri) continue;
      const double f = t_(i, ci);
      if (f == 0.0) continue;
      t_.row(i) -= f * t_.row(ri);
      rhs_(i) -= f * rhs_(ri);
      t_(i, ci) = 0.0;
    }
    if (cost_.size() > 0) {
      const double fc = reduced_(ci);
      if (fc != 0.0) reduced_ -= fc * t_.row(ri).transpose();
      reduced_(ci) = 0.0;
    }
    basis_[r] = c;
    if (++since_reinvert_ >= kReinvertEvery) reinvert();
  }

  /// Simplex on columns [0, active) until no reduced cost exceeds tol.
  LpResult::Status run(std::size_t active, double tol, std::size_t max_iterations, std::size_t& iterations) {
    std::size_t degenerate_run = 0;
    bool bland = false;
    bool confirmed = false;  // optimality seen right after a reinversion
    while (iterations < max_iterations) {
      // Once a degenerate stall is seen, Bland's rule stays on for the phase.
      bland = bland || degenerate_run > kDegenerateRun;
      std::size_t enter = active;
      double best = tol;
      for (std::size_t j = 0; j < active; ++j) {
        const double d = reduced_(static_cast<Eigen::Index>(j));
        if (d > best) {
          enter = j;
          if (bland) break;
          best = d;
        }
      }
      if (enter == active) {
        if (confirmed || since_reinvert_ == 0) return LpResult::Status::optimal;
        reinvert();
        confirmed = true;
        continue;
      }
      confirmed = false;
      const std::size_t leave = ratio_test(enter, bland);
      if (leave == rows()) return LpResult::Status::unbounded;
      degenerate_run = std::max(0.0, rhs(leave)) <= 1e-12 ? degenerate_run + 1 : 0;
      pivot(leave, enter);
      ++iterations;
    }
    return LpResult::Status::iteration_limit;
  }

 private:
  void price() {
    Eigen::VectorXd cb(a_.rows());
    for (Eigen::Index k = 0; k < a_.rows(); ++k) cb(k) = cost_(static_cast<Eigen::Index>(basis_[k]));
    reduced_ = cost_ - t_.transpose() * cb;
  }

  /// Minimum ratio; ties go to the smallest basic index under Bland's rule,
  /// otherwise to the largest pivot element.
  std::size_t ratio_test(std::size_t enter, bool bland) const {
    constexpr double kPivotTol = 1e-9;
    const auto ci = static_cast<Eigen::Index>(enter);
    std::size_t leave = rows();
    double ratio = std::numeric_limits<double>::infinity();
    double pivot_size = 0.0;
    for (std::size_t i = 0; i < rows(); ++i) {
      const double v = t_(static_cast<Eigen::Index>(i), ci);
      if (v <= kPivotTol) continue;
      const double r = std::max(0.0, rhs(i)) / v;
      const double slack = leave < rows() ? 1e-12 * std::max(1.0, ratio) : 0.0;
      bool take = r < ratio - slack;
      if (!take && leave < rows() && r <= ratio + slack) take = bland ? basis_[i] < basis_[leave] : v > pivot_size;
      if (take) {
        ratio = std::min(ratio, r);
        leave = i;
        pivot_size = v;
      }
    }
    return leave;
  }

  RowMatrix a_;
  Eigen::VectorXd b_;
  std::vector<std::size_t> basis_;
  RowMatrix t_;
  Eigen::VectorXd rhs_;
  Eigen::VectorXd cost_;
  Eigen::VectorXd reduced_;
  std::size_t since_reinvert_ = 0;
};

}  // namespace

LpResult solve_lp(const LinearProgram& lp, double tol, std::size_t max_iterations) {
  const std::size_t m = lp.rows.size();
  const std::size_t n = lp.objective.size();
  if (lp.sense.size() != m || lp.rhs.size() != m) throw std::invalid_argument("solve_lp: row data mismatch");
  for (const auto& row : lp.rows)
    if (row.size() != n) throw std::invalid_argument("solve_lp: row length mismatch");

  // Equilibrate rows by their largest entry, then structural columns likewise.
  std::vector<double> row_scale(m, 1.0);
  for (std::size_t i = 0; i < m; ++i) {
    double big = 0.0;
    for (double v : lp.rows[i]) big = std::max(big, std::fabs(v));
    if (big > 0.0) row_scale[i] = 1.0 / big;
  }
  std::vector<double> col_scale(n, 1.0);
  for (std::size_t j = 0; j < n; ++j) {
    double big = 0.0;
    for (std::size_t i = 0; i < m; ++i) big = std::max(big, std::fabs(lp.rows[i][j] * row_scale[i]));
    if (big > 0.0) col_scale[j] = 1.0 / big;
  }

  // Normalize to b >= 0, then add slack/surplus and artificial columns.
  std::vector<double> sign(m, 1.0);
  std::vector<RowSense> sense = lp.sense;
  for (std::size_t i = 0; i < m; ++i) {
    if (lp.rhs[i] < 0.0) {
      sign[i] = -1.0;
      if (sense[i] == RowSense::le) sense[i] = RowSense::ge;
      else if (sense[i] == RowSense::ge) sense[i] = RowSense::le;
    }
  }
  std::size_t n_slack = 0;
  std::size_t n_art = 0;
  for (auto s : sense) {
    if (s != RowSense::eq) ++n_slack;
    if (s != RowSense::le) ++n_art;
  }
  const std::size_t art0 = n + n_slack;
  const std::size_t cols = art0 + n_art;
  RowMatrix a = RowMatrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(cols));
  Eigen::VectorXd b(static_cast<Eigen::Index>(m));
  std::vector<std::size_t> basis(m);
  std::size_t slack = n;
  std::size_t art = art0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double s = sign[i] * row_scale[i];
    for (std::size_t j = 0; j < n; ++j) a(ii, static_cast<Eigen::Index>(j)) = s * lp.rows[i][j] * col_scale[j];
    b(ii) = s * lp.rhs[i];
    if (sense[i] == RowSense::le) {
      a(ii, static_cast<Eigen::Index>(slack)) = 1.0;
      basis[i] = slack++;
    } else {
      if (sense[i] == RowSense::ge) a(ii, static_cast<Eigen::Index>(slack++)) = -1.0;
      a(ii, static_cast<Eigen::Index>(art)) = 1.0;
      basis[i] = art++;
    }
  }
  Tableau t(std::move(a), std::move(b), std::move(basis));

  LpResult result;
  if (n_art > 0) {
    // Phase 1: maximize -sum(artificials).
    Eigen::VectorXd cost = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cols));
    for (std::size_t j = art0; j < cols; ++j) cost(static_cast<Eigen::Index>(j)) = -1.0;
    t.set_cost(std::move(cost));
    const auto status = t.run(art0, tol, max_iterations, result.iterations);
    if (status == LpResult::Status::iteration_limit) {
      result.status = status;
      return result;
    }
    double infeasibility = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      if (t.basis()[i] >= art0) infeasibility += std::max(0.0, t.rhs(i));
    if (infeasibility > 1e-9) {
      result.status = LpResult::Status::infeasible;
      return result;
    }
    // Drive zero-level artificials out of the basis where a usable pivot exists.
    for (std::size_t i = 0; i < m; ++i) {
      if (t.basis()[i] < art0) continue;
      std::size_t best = art0;
      double size = 1e-7;
      for (std::size_t j = 0; j < art0; ++j) {
        if (std::fabs(t.at(i, j)) > size) {
          size = std::fabs(t.at(i, j));
          best = j;
        }
      }
      if (best < art0) t.pivot(i, best);
    }
  }

  // Phase 2 on the structural and slack columns; artificials never re-enter.
  Eigen::VectorXd cost = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cols));
  for (std::size_t j = 0; j < n; ++j) cost(static_cast<Eigen::Index>(j)) = lp.objective[j] * col_scale[j];
  t.set_cost(std::move(cost));
  result.status = t.run(art0, tol, max_iterations, result.iterations);
  result.x.assign(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    if (t.basis()[i] < n) result.x[t.basis()[i]] = std::max(0.0, t.rhs(i)) * col_scale[t.basis()[i]];
  result.value = 0.0;
  for (std::size_t j = 0; j < n; ++j) result.value += lp.objective[j] * result.x[j];
  return result;
}

}  // namespace optfee
