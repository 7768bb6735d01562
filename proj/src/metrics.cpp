#include "nncsl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace nncsl {

ResultMatrix::ResultMatrix(int tasks)
    : T(tasks),
      R(static_cast<std::size_t>(tasks) * tasks, std::numeric_limits<double>::quiet_NaN()),
      random_baseline(tasks, std::numeric_limits<double>::quiet_NaN()) {
  if (tasks < 1) throw ParamError("ResultMatrix: need at least one task");
}

double& ResultMatrix::at(int after_task, int eval_task) {
  return R[static_cast<std::size_t>(after_task) * T + eval_task];
}
double ResultMatrix::at(int after_task, int eval_task) const {
  return R[static_cast<std::size_t>(after_task) * T + eval_task];
}

bool ResultMatrix::final_row_complete() const {
  for (int j = 0; j < T; ++j)
    if (std::isnan(at(T - 1, j))) return false;
  return true;
}

bool ResultMatrix::diagonal_complete() const {
  for (int i = 0; i < T; ++i)
    if (std::isnan(at(i, i))) return false;
  return true;
}

double acc(const ResultMatrix& rm) {
  if (!rm.final_row_complete()) throw StateError("acc: final row not populated");
  double s = 0.0;
  for (int j = 0; j < rm.T; ++j) s += rm.at(rm.T - 1, j);
  return s / rm.T;
}

double fwt(const ResultMatrix& rm) {
  if (rm.T < 2) throw StateError("fwt: undefined for a single task");
  double s = 0.0;
  for (int i = 1; i < rm.T; ++i) {
    double v = rm.at(i - 1, i);
    double r = rm.random_baseline[i];
    if (std::isnan(v) || std::isnan(r)) throw StateError("fwt: matrix not populated");
    s += v - r;
  }
  return s / (rm.T - 1);
}

double bwt(const ResultMatrix& rm, bool exclude_first) {
  if (rm.T < 2) throw StateError("bwt: undefined for a single task");
  if (exclude_first && rm.T < 3)
    throw StateError("bwt: exclude_first needs at least three tasks");
  if (!rm.final_row_complete() || !rm.diagonal_complete())
    throw StateError("bwt: matrix not populated");
  int first = exclude_first ? 1 : 0;
  double s = 0.0;
  for (int i = first; i < rm.T - 1; ++i) s += rm.at(rm.T - 1, i) - rm.at(i, i);
  return s / (rm.T - 1 - first);
}

std::vector<double> per_task_final(const ResultMatrix& rm) {
  if (!rm.final_row_complete()) throw StateError("per_task_final: final row not populated");
  std::vector<double> out(rm.T);
  for (int j = 0; j < rm.T; ++j) out[j] = rm.at(rm.T - 1, j);
  return out;
}

std::string matrix_to_csv(const ResultMatrix& rm, const std::string& comment) {
  std::ostringstream os;
  if (!comment.empty()) os << "# " << comment << "\n";
  os << "after_task,eval_task,accuracy\n";
  char buf[64];
  for (int i = 0; i < rm.T; ++i)
    for (int j = 0; j < rm.T; ++j) {
      double v = rm.at(i, j);
      if (std::isnan(v)) continue;
      std::snprintf(buf, sizeof(buf), "%.12g", v);
      os << (i + 1) << "," << (j + 1) << "," << buf << "\n";
    }
  return os.str();
}

}  // namespace nncsl
