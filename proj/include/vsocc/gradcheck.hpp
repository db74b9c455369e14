#pragma once

#include <string>
#include <vector>

#include "vsocc/tensor.hpp"

namespace vsocc {

struct GradCheckOptions {
  std::string module;  // empty = all; else one of core, attention, vsf, losses, pipeline
  double h = 1e-4;     // central-difference step
  double tol = 1e-4;   // relative-error bound
  // Fault-injection hook for exercising the failure path: "module/name" of a
  // case whose analytic gradient gets deliberately perturbed.
  std::string corrupt;
};

struct GradCheckResult {
  std::string module;
  std::string name;
  bool pass = false;
  double max_rel_err = 0.0;
  std::string worst;  // "leaf[index]" of the worst coordinate
  i64 coords = 0;     // coordinates swept
};

// Runs every registered analytic-vs-central-difference comparison (optionally
// filtered by module). Each case owns fixed, seeded inputs; the relative
// error per coordinate is |a - n| / max(1, |a|, |n|). A filter that matches
// nothing raises ConfigError.
std::vector<GradCheckResult> run_gradchecks(const GradCheckOptions& opt = {});

bool all_passed(const std::vector<GradCheckResult>& results);

// One line per case: PASS/FAIL, module/name, max rel err, worst coordinate.
std::string gradcheck_report(const std::vector<GradCheckResult>& results);

}  // namespace vsocc
