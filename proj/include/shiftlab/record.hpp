#pragma once

#include <optional>
#include <string>
#include <vector>

namespace shiftlab {

/// One optimisation step. `acc_target` is only present on evaluation
/// iterations; `ms` is wall-clock since the start of the run.
struct TrajectoryRow {
  long long iteration = 0;
  double loss_total = 0.0;
  double loss_ce = 0.0;
  double loss_mmd = 0.0;
  double loss_im = 0.0;
  std::optional<double> acc_target;
  double ms = 0.0;
};

struct RecordSummary {
  std::optional<double> initial_accuracy;
  std::optional<double> final_accuracy;
  std::optional<long long> iterations_to_convergence;
  bool converged = false;
};

struct ExperimentRecord {
  std::string run_id;
  std::string scenario;
  std::string paradigm;
  std::vector<TrajectoryRow> rows;
  RecordSummary summary;

  long long iterations() const { return static_cast<long long>(rows.size()); }
};

}  // namespace shiftlab
