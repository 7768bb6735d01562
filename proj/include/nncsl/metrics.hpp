#pragma once

#include <string>
#include <vector>

#include "nncsl/errors.hpp"

namespace nncsl {

/// T x T accuracy bookkeeping: entry (i, j) is accuracy on task j's test
/// split after training task i (0-based), plus the random-init baseline r.
struct ResultMatrix {
  int T = 0;
  std::vector<double> R;        // row-major T x T, NaN where unpopulated
  std::vector<double> random_baseline;  // length T

  explicit ResultMatrix(int tasks);
  double& at(int after_task, int eval_task);
  double at(int after_task, int eval_task) const;
  bool final_row_complete() const;
  bool diagonal_complete() const;
};

double acc(const ResultMatrix& rm);
double fwt(const ResultMatrix& rm);
double bwt(const ResultMatrix& rm, bool exclude_first = false);
std::vector<double> per_task_final(const ResultMatrix& rm);

/// CSV with header `after_task,eval_task,accuracy`, one row per populated
/// entry; optional comment lines are prefixed with '#'.
std::string matrix_to_csv(const ResultMatrix& rm, const std::string& comment = "");

}  // namespace nncsl
