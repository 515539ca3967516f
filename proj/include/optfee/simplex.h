#pragma once

#include <cstddef>
#include <vector>

namespace optfee {

enum class RowSense { le, ge, eq };

/// maximize c.x subject to rows[i].x (sense) rhs[i], x >= 0.
struct LinearProgram {
  std::vector<double> objective;
  std::vector<std::vector<double>> rows;
  std::vector<RowSense> sense;
  std::vector<double> rhs;

  void add_row(std::vector<double> row, RowSense s, double b) {
    rows.push_back(std::move(row));
    sense.push_back(s);
    rhs.push_back(b);
  }
};

struct LpResult {
  enum class Status { optimal, infeasible, unbounded, iteration_limit };
  Status status = Status::iteration_limit;
  std::vector<double> x;
  double value = 0.0;
  std::size_t iterations = 0;
};

/// Dense two-phase tableau simplex. Dantzig pricing, switching to Bland's
/// rule after a run of degenerate pivots.
LpResult solve_lp(const LinearProgram& lp, double tol = 1e-9, std::size_t max_iterations = 200000);

}  // namespace optfee
