// Copyright 2026 The rspic Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rspic/sde.hpp"

namespace rspic {

// Segments of uncontrolled trajectories: start state, left-endpoint integral
// of q over the segment, end state. All segments share the length L.
struct SegmentDataset {
  Matrix starts;        // n x M
  Vector q_integrals;   // M
  Matrix ends;          // n x M
  double length = 0.0;

  Eigen::Index size() const { return q_integrals.size(); }
  Eigen::Index state_dim() const { return starts.rows(); }

  void Validate() const;

  // Columns x_start[0..n), q_integral, x_end[0..n), L.
  void WriteCsv(std::ostream& out) const;
  static SegmentDataset ReadCsv(std::istream& in);
};

// Slices every path of the batch into windows of `length_steps` steps taken
// every `stride` steps.
SegmentDataset BuildSegments(const TrajectoryBatch& batch, const StateCost& q,
                             int length_steps, int stride);

// log z(x) = A (1/2 x^T Theta x + theta0), i.e. v(x) ~ 1/2 x^T Theta x + theta0.
struct QuadraticLogZParams {
  Matrix theta;
  double offset = 0.0;

  double Value(const Vector& x) const { return 0.5 * x.dot(theta * x) + offset; }
};

enum class FitMethod {
  // Each sweep regresses the exponential targets
  //   t_i = exp(A (q_i - chi L + 1/2 x_end^T Theta x_end))
  // on quadratic features through a log link (quasi-Poisson IRLS), so the
  // fitted exp(A v(x)) tracks the conditional mean E[t | x_start].
  kLogLink,
  // Least squares on log t_i directly. Cheaper but biased by Jensen's
  // inequality: on a linear-Gaussian system it converges to the risk-neutral
  // fixed point instead of the risk-sensitive one.
  kLogSurrogate,
};

struct FitOptions {
  int max_iters = 200;
  double tol = 1e-6;
  // < 0 selects 1e-6 trace(Gram) / dim.
  double ridge = -1.0;
  FitMethod method = FitMethod::kLogLink;
};

struct FitReport {
  QuadraticLogZParams params;
  int iterations = 0;
  double last_change = 0.0;
};

// Fixed-point iteration on the stationary recurrence
//   z(x) = e^{-A chi L} E[exp(A int_0^L q) z(X_L) | X_0 = x].
// z is normalized at the origin inside the targets, so the reported offset
// is the per-segment mismatch between chi and the data.
FitReport FitLogQuadratic(const SegmentDataset& ds, double exponent,
                          double chi, const FitOptions& options = {});

struct FitQuality {
  double mean_sq_residual = 0.0;
  std::optional<double> vs_oracle;  // |Theta - S|_F / |S|_F
};

// Mean squared log-domain recurrence residual
//   A v(x_start) - (A (q_i - chi L) + A v(x_end)).
// It is measured per sample, so it never reaches zero even at the truth.
FitQuality EvaluateFit(const QuadraticLogZParams& params,
                       const SegmentDataset& ds, double exponent, double chi,
                       const std::optional<Matrix>& oracle = std::nullopt);

}  // namespace rspic
