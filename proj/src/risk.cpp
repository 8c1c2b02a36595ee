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

#include "rspic/risk.hpp"

#include <sstream>

#include "rspic/stats.hpp"

namespace rspic {

void RiskCostModel::Validate() const {
  const auto m = control_weight.rows();
  if (control_weight.cols() != m) {
    throw DimensionError("control weight R must be square");
  }
  if (m > 0) {
    if (!control_weight.isApprox(control_weight.transpose(), 1e-12)) {
      throw AssumptionViolation("control weight R must be symmetric");
    }
    Eigen::LLT<Matrix> llt(control_weight);
    if (llt.info() != Eigen::Success) {
      throw AssumptionViolation("control weight R must be positive definite");
    }
  }
  if (!(discount >= 0.0)) throw ConfigError("discount must be nonnegative");
}

void RiskCostModel::CheckNonnegative(std::span<const Vector> probes) const {
  if (!state_cost) return;
  for (const auto& x : probes) {
    const double value = state_cost(x);
    if (!(value >= 0.0)) {
      std::ostringstream os;
      os << "state cost q is negative (" << value << ") at a probe state";
      throw AssumptionViolation(os.str());
    }
  }
}

double LambdaOf(double phi, double psi) {
  if (!(psi > 0.0)) throw ConfigError("psi must be positive");
  if (std::abs(psi - phi) < 1e-12) {
    std::ostringstream os;
    os << "degenerate risk: phi = psi = " << psi
       << " makes the log-transform exponent vanish";
    throw DegenerateRisk(os.str());
  }
  return 1.0 / (psi - phi);
}

void CheckExponent(double exponent) {
  if (!std::isfinite(exponent) || std::abs(exponent) < 1e-12) {
    throw DegenerateRisk("path-integral exponent phi - psi must be nonzero");
  }
}

RiskParams RiskParams::Make(double phi, double psi) {
  RiskParams params;
  params.phi = phi;
  params.psi = psi;
  params.lambda = LambdaOf(phi, psi);
  params.exponent = phi - psi;
  return params;
}

double ComputePsi(const DiffusionModel& model, const Matrix& control_weight,
                  std::span<const Vector> probes, double tol) {
  if (probes.empty()) throw ConfigError("compute_psi needs at least one probe");
  const int n = model.state_dim();
  const int m = model.control_dim();
  if (control_weight.rows() != m || control_weight.cols() != m) {
    throw DimensionError("control weight R must be m x m");
  }
  Eigen::LLT<Matrix> r_llt(control_weight);
  if (r_llt.info() != Eigen::Success) {
    throw AssumptionViolation("control weight R must be positive definite");
  }
  const Matrix& sigma = model.noise_covariance();
  const Eigen::LLT<Matrix> sigma_llt(sigma);

  auto authority = [&](const Vector& x) {
    CheckStateDim(model, x);
    const Matrix b = model.ControlMatrix(x);
    return Matrix(b * r_llt.solve(b.transpose()));
  };

  const Matrix first = authority(probes.front());
  const double psi = sigma_llt.solve(first).trace() / n;
  double worst = 0.0;
  for (const auto& x : probes) {
    const Matrix a = authority(x);
    const double scale = (psi * sigma).norm();
    const double residual =
        (a - psi * sigma).norm() / (scale > 0.0 ? scale : 1.0);
    worst = std::max(worst, residual);
  }
  if (!(psi > 0.0) || worst > tol) {
    std::ostringstream os;
    os << "B R^-1 B^T is not proportional to Sigma: psi fit " << psi
       << ", worst relative residual " << worst << " (tolerance " << tol
       << ")";
    throw AssumptionViolation(os.str());
  }
  return psi;
}

RiskExpansion RiskExpansionCheck(const Vector& costs, double phi) {
  RiskExpansion out;
  const double mean = SampleMean(costs);
  const double variance = (costs.array() - mean).square().mean();
  out.expansion = mean + 0.5 * phi * variance;
  out.exact = phi == 0.0 ? mean : LogMeanExp(phi * costs.array()) / phi;
  out.in_regime =
      std::abs(phi) * (costs.maxCoeff() - costs.minCoeff()) <= 1.0;
  return out;
}

}  // namespace rspic
