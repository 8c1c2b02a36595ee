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

#include <span>
#include <vector>

#include "rspic/sde.hpp"

namespace rspic {

// Running cost l(x, u) = q(x) + 1/2 u^T R u, optional terminal cost and a
// discount rate used only by the discounted evaluations.
struct RiskCostModel {
  StateCost state_cost;
  Matrix control_weight;
  StateCost terminal_cost;
  double discount = 0.0;

  // R symmetric positive definite, discount >= 0.
  void Validate() const;

  // Throws AssumptionViolation if q is negative at any probe.
  void CheckNonnegative(std::span<const Vector> probes) const;
};

// Risk sensitivity phi, proportionality psi (B R^-1 B^T = psi Sigma) and the
// derived log-transform scale lambda = 1 / (psi - phi) and exponent
// A = phi - psi = -1 / lambda.
struct RiskParams {
  double phi = 0.0;
  double psi = 1.0;
  double lambda = 1.0;
  double exponent = -1.0;

  static RiskParams Make(double phi, double psi);
};

// lambda = 1 / (psi - phi). DegenerateRisk when |psi - phi| < 1e-12.
double LambdaOf(double phi, double psi);

// Throws DegenerateRisk when the path-integral exponent vanishes.
void CheckExponent(double exponent);

// Fits B(x) R^-1 B(x)^T = psi Sigma. psi = tr(Sigma^-1 B R^-1 B^T) / n at the
// first probe; every probe must agree to `tol` in relative Frobenius norm.
double ComputePsi(const DiffusionModel& model, const Matrix& control_weight,
                  std::span<const Vector> probes, double tol = 1e-8);

struct RiskExpansion {
  double exact = 0.0;      // (1/phi) log mean exp(phi J)
  double expansion = 0.0;  // mean J + phi/2 var J
  bool in_regime = true;   // |phi| (max J - min J) <= 1
};

// Second-order small-phi expansion against the exact exponential criterion,
// both on the same sample. The variance is the plug-in (1/K) moment so the
// two agree to O(phi^2) on the empirical distribution.
RiskExpansion RiskExpansionCheck(const Vector& costs, double phi);

}  // namespace rspic
