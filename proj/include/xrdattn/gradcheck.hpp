#pragma once

// Finite-difference checks of every differentiable op and of a miniature
// model, shared by the command-line tool and the test suites.

#include <cstdint>
#include <string>
#include <vector>

#include "xrdattn/model.hpp"

namespace xrdattn::checks {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 1;
  double eps = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error; roundoff in f alone produces
  /// absolute errors of a few ulp(f) / (2 eps).
  double abs_floor = 1e-5;
  /// Wanted smallest |relu input| at the miniature model's check point; the
  /// widest of max_draws random points is used when none reaches it.
  double kink_margin = 1e-3;
  std::size_t max_draws = 1000;
};

/// Shrunken network: L = 16, 4 filters, otherwise the default topology.
model::ModelConfig miniature_config(int case_id);

/// One result per op (randomized small shapes) plus the miniature model for
/// cases 1 to 3 on a batch of 4.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options = {});

bool all_passed(const std::vector<GradCheckResult>& results);

}  // namespace xrdattn::checks
