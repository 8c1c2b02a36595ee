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

#include <functional>
#include <vector>

#include "rspic/risk.hpp"
#include "rspic/sde.hpp"
#include "rspic/stats.hpp"

namespace rspic {

// Monte Carlo estimate of a log-domain path-integral quantity.
//
// `influence` holds the per-path linearization of the estimator (mean zero,
// in value units), so std_error = sd(influence) / sqrt(K). Estimates built on
// common random numbers can be combined path-by-path through it, which is
// how differences and gradients get honest standard errors.
struct ValueEstimate {
  double value = 0.0;
  double std_error = 0.0;
  double ess = 0.0;
  int n_samples = 0;
  double exponent = 0.0;
  bool low_ess = false;  // ess < 1% of K
  Vector influence;
};

// (1/A) log mean exp(A J), delta-method standard error, ESS of the weights.
ValueEstimate ExponentialAverage(const Vector& costs, double exponent);

// Plain mean; the A = 0 branch of the criterion.
ValueEstimate MeanAverage(const Vector& costs);

// a - b for estimates on the same paths (CRN).
ValueEstimate Difference(const ValueEstimate& a, const ValueEstimate& b);

// Per-path discounted cost integrals recorded at a set of checkpoint steps.
struct PathCostSpec {
  StateCost state_cost;
  double discount = 0.0;
  StateCost terminal_cost;            // added at the final step only
  Matrix control_weight;              // 1/2 u^T R u when controls exist
  std::vector<int> checkpoints;       // steps in (0, N]; N is always added
  double tail_fraction = 0.0;         // > 0: mean q over the last fraction
};

struct PathCostSamples {
  Matrix costs;         // K x C, column c = cost up to checkpoints[c]
  Matrix final_states;  // n x K
  std::vector<int> checkpoints;
  double tail_mean_q = 0.0;
};

namespace internal {
void FinishSamples(PathCostSamples& samples, const std::vector<double>& tail,
                   const std::vector<int>& tail_counts);
std::vector<int> NormalizedCheckpoints(const std::vector<int>& requested,
                                       int steps);
}  // namespace internal

// Streams K paths (in parallel per cfg.worker_hint) and accumulates their
// costs without storing trajectories. Results do not depend on scheduling.
template <class NoiseSourceT>
PathCostSamples SamplePathCosts(const DiffusionModel& model, const Vector& x0,
                                const McConfig& cfg, const PathCostSpec& spec,
                                const NoiseSourceT& noise,
                                const Policy* policy = nullptr) {
  cfg.Validate();
  CheckStateDim(model, x0);
  PathCostSamples out;
  out.checkpoints = internal::NormalizedCheckpoints(spec.checkpoints, cfg.steps);
  const auto ncheck = out.checkpoints.size();
  out.costs.resize(cfg.paths, static_cast<Eigen::Index>(ncheck));
  out.final_states.resize(model.state_dim(), cfg.paths);

  std::vector<double> weights(cfg.steps);
  for (int j = 0; j < cfg.steps; ++j) {
    weights[j] = spec.discount > 0.0 ? std::exp(-spec.discount * j * cfg.dt)
                                     : 1.0;
  }
  const int tail_start =
      spec.tail_fraction > 0.0
          ? static_cast<int>(std::floor((1.0 - spec.tail_fraction) * cfg.steps))
          : cfg.steps + 1;
  const bool with_control =
      policy != nullptr && spec.control_weight.size() > 0;
  std::vector<double> tail(cfg.paths, 0.0);
  std::vector<int> tail_counts(cfg.paths, 0);

  ParallelFor(cfg.paths, ResolveWorkers(cfg), [&](std::size_t k) {
    double acc = 0.0;
    std::size_t next = 0;
    double tail_sum = 0.0;
    int tail_count = 0;
    SimulatePath(
        model, x0, cfg, k, noise, policy,
        [&](int j, double, const Vector& x, const Vector* u) {
          while (next < ncheck && out.checkpoints[next] == j) {
            out.costs(static_cast<Eigen::Index>(k),
                      static_cast<Eigen::Index>(next)) = acc * cfg.dt;
            ++next;
          }
          if (j == cfg.steps) {
            out.final_states.col(static_cast<Eigen::Index>(k)) = x;
            return;
          }
          double rate = 0.0;
          if (spec.state_cost) {
            rate = spec.state_cost(x);
            if (!std::isfinite(rate)) {
              throw DivergenceError("state cost is not finite");
            }
            if (j >= tail_start) {
              tail_sum += rate;
              ++tail_count;
            }
          }
          if (with_control && u != nullptr) {
            rate += 0.5 * u->dot(spec.control_weight * *u);
          }
          acc += weights[j] * rate;
        });
    if (spec.terminal_cost) {
      const Vector xf = out.final_states.col(static_cast<Eigen::Index>(k));
      out.costs(static_cast<Eigen::Index>(k),
                static_cast<Eigen::Index>(ncheck - 1)) +=
          spec.terminal_cost(xf);
    }
    tail[k] = tail_sum;
    tail_counts[k] = tail_count;
  });
  internal::FinishSamples(out, tail, tail_counts);
  return out;
}

// Finite-horizon value through the Feynman-Kac representation over
// uncontrolled paths: V = (1/A) log E0[exp(A J)], A = phi - psi. `t`
// shortens the remaining horizon to T - t.
ValueEstimate EstimateFiniteHorizonValue(const DiffusionModel& model,
                                         const RiskCostModel& cost,
                                         const RiskParams& params,
                                         const Vector& x, double horizon,
                                         const McConfig& cfg, double t = 0.0);

// Average cost per stage from the two-point slope
// (G(T2) - G(T1)) / (T2 - T1), G(T) = (1/A) log E[exp(A int_0^T q)], with
// both horizons read off one batch.
ValueEstimate EstimateChi(const DiffusionModel& model, const StateCost& q,
                          double exponent, double t1, double t2,
                          const Vector& x, const McConfig& cfg);

// Differential value v(x) - v(x_ref) as a CRN difference of horizon-T
// transformed costs of q - chi.
ValueEstimate EstimateDiffValue(const DiffusionModel& model,
                                const StateCost& q, double exponent,
                                const Vector& x, const Vector& x_ref,
                                double chi, double horizon,
                                const McConfig& cfg);

struct DiscountedBound {
  ValueEstimate estimate;
  double horizon = 0.0;    // truncation T with e^{-alpha T} <= tail_eps
  double tail_bias = 0.0;  // tail_eps * qbar / alpha
};

// (1/A) log E0[exp(A int_0^T e^{-alpha t} q dt)] over uncontrolled paths.
DiscountedBound EstimateDiscountedLowerBound(const DiffusionModel& model,
                                             const StateCost& q,
                                             double exponent, double discount,
                                             const Vector& x,
                                             const McConfig& cfg,
                                             double tail_eps = 1e-4);

struct JensenGap {
  double lhs = 0.0;      // Z(A e^{-alpha r}, x)
  double rhs = 0.0;      // Z(A e^{-alpha beta r}, x)^{e^{-alpha (1-beta) r}}
  double log_lhs = 0.0;
  double log_rhs = 0.0;
  double std_error = 0.0;  // of lhs - rhs
  bool direction_ok = false;
};

JensenGap ComputeJensenGap(const DiffusionModel& model, const StateCost& q,
                           double exponent, double discount,
                           double restart_time, double beta, const Vector& x,
                           const McConfig& cfg, double tail_eps = 1e-4);

struct RecurrenceResidual {
  double residual_rel = 0.0;
  double std_error = 0.0;
};

// 1 - e^{-A chi T} E_x[exp(A int_0^T q) z(X_T)] / z(x), evaluated in the log
// domain. cfg's horizon is replaced by the segment length T.
RecurrenceResidual ComputeRecurrenceResidual(
    const DiffusionModel& model, const StateCost& q, double exponent,
    double chi, const std::function<double(const Vector&)>& z_fn,
    double segment, const Vector& x, const McConfig& cfg);

// Risk-sensitive cost-to-go of a given feedback law from controlled
// rollouts: (1/phi) log E[exp(phi J)], or E[J] when phi = 0. J includes the
// control cost, the discount and the terminal cost of `cost`.
ValueEstimate EstimateValueUnderPolicy(const DiffusionModel& model,
                                       const RiskCostModel& cost, double phi,
                                       const Policy& policy, const Vector& x,
                                       double horizon, const McConfig& cfg);

}  // namespace rspic
