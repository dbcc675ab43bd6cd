// Copyright Contributors to the PointBlend Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

namespace pointblend {

/// Random-configuration finite-difference validation of the analytic
/// gradients (descriptors, mu, linear-head parameters) against an
/// independent all-double naive forward pass.
struct GradCheckOptions {
  std::uint64_t seed = 1;
  int configs = 200;
  int max_points = 20;
  int max_canvas = 16;
  int max_ray_len = 8;
  double fd_step = 1e-5;
  /// Debug hook: corrupt one analytic gradient entry to prove the checker
  /// catches broken adjoints.
  bool tamper = false;
};

struct GradCheckResult {
  double max_error = 0.0;  // |analytic - fd| / max(1e-3, |analytic|, |fd|)
  std::int64_t parameters_checked = 0;
  int configs_run = 0;
  std::string worst_case;

  static constexpr double kThreshold = 1e-4;
  bool passed() const { return max_error < kThreshold; }
};

GradCheckResult run_gradient_check(const GradCheckOptions& options);

}  // namespace pointblend
