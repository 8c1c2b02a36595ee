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

#include "rspic/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rspic {

namespace {

double StdErrorOf(const Vector& influence) {
  const auto k = influence.size();
  if (k < 2) return 0.0;
  return std::sqrt(SampleVariance(influence) / static_cast<double>(k));
}

void CheckHorizon(double horizon) {
  if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
}

int StepsFor(double horizon, double dt) {
  const double ratio = horizon / dt;
  const auto steps = static_cast<int>(std::llround(ratio));
  if (steps < 1 || std::abs(steps - ratio) > 1e-9 * std::max(1.0, ratio)) {
    std::ostringstream os;
    os << "time " << horizon << " is not a multiple of dt " << dt;
    throw ConfigError(os.str());
  }
  return steps;
}

Vector Column(const PathCostSamples& samples, Eigen::Index c) {
  return samples.costs.col(c);
}

}  // namespace

namespace internal {

std::vector<int> NormalizedCheckpoints(const std::vector<int>& requested,
                                       int steps) {
  std::vector<int> out;
  for (int c : requested) {
    if (c < 0 || c > steps) {
      throw ConfigError("checkpoint outside the simulated horizon");
    }
    out.push_back(c);
  }
  out.push_back(steps);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void FinishSamples(PathCostSamples& samples, const std::vector<double>& tail,
                   const std::vector<int>& tail_counts) {
  double sum = 0.0;
  long count = 0;
  for (std::size_t k = 0; k < tail.size(); ++k) {
    sum += tail[k];
    count += tail_counts[k];
  }
  samples.tail_mean_q = count > 0 ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace internal

ValueEstimate ExponentialAverage(const Vector& costs, double exponent) {
  CheckExponent(exponent);
  const auto k = costs.size();
  if (k < 1) throw ConfigError("no samples");
  const Eigen::ArrayXd scaled = exponent * costs.array();
  const double shift = scaled.maxCoeff();
  const Eigen::ArrayXd w = (scaled - shift).exp();
  const double mean_w = w.mean();

  ValueEstimate est;
  est.exponent = exponent;
  est.n_samples = static_cast<int>(k);
  est.value = (shift + std::log(mean_w)) / exponent;
  est.influence = ((w / mean_w - 1.0) / exponent).matrix();
  est.std_error = StdErrorOf(est.influence);
  est.ess = w.sum() * w.sum() / w.square().sum();
  est.low_ess = est.ess < 0.01 * static_cast<double>(k);
  return est;
}

ValueEstimate MeanAverage(const Vector& costs) {
  const auto k = costs.size();
  if (k < 1) throw ConfigError("no samples");
  ValueEstimate est;
  est.n_samples = static_cast<int>(k);
  est.value = SampleMean(costs);
  est.influence = (costs.array() - est.value).matrix();
  est.std_error = StdErrorOf(est.influence);
  est.ess = static_cast<double>(k);
  return est;
}

ValueEstimate Difference(const ValueEstimate& a, const ValueEstimate& b) {
  if (a.influence.size() != b.influence.size()) {
    throw DimensionError("estimates were built on different sample counts");
  }
  ValueEstimate out;
  out.value = a.value - b.value;
  out.influence = a.influence - b.influence;
  out.std_error = StdErrorOf(out.influence);
  out.ess = std::min(a.ess, b.ess);
  out.n_samples = a.n_samples;
  out.exponent = a.exponent;
  out.low_ess = a.low_ess || b.low_ess;
  return out;
}

ValueEstimate EstimateFiniteHorizonValue(const DiffusionModel& model,
                                         const RiskCostModel& cost,
                                         const RiskParams& params,
                                         const Vector& x, double horizon,
                                         const McConfig& cfg, double t) {
  CheckExponent(params.exponent);
  CheckHorizon(horizon);
  if (!(t >= 0.0) || !(t < horizon)) {
    throw ConfigError("time must lie in [0, T)");
  }
  const McConfig run = cfg.WithHorizon(horizon - t);
  PathCostSpec spec;
  spec.state_cost = cost.state_cost;
  spec.terminal_cost = cost.terminal_cost;
  const auto samples =
      SamplePathCosts(model, x, run, spec, GeneratedNoise(run.seed, run.dt));
  return ExponentialAverage(Column(samples, 0), params.exponent);
}

ValueEstimate EstimateChi(const DiffusionModel& model, const StateCost& q,
                          double exponent, double t1, double t2,
                          const Vector& x, const McConfig& cfg) {
  CheckExponent(exponent);
  if (!(t1 > 0.0) || !(t2 > t1)) {
    throw ConfigError("chi needs 0 < T1 < T2");
  }
  const McConfig run = cfg.WithHorizon(t2);
  PathCostSpec spec;
  spec.state_cost = q;
  spec.checkpoints = {StepsFor(t1, cfg.dt)};
  const auto samples =
      SamplePathCosts(model, x, run, spec, GeneratedNoise(run.seed, run.dt));
  const auto g1 = ExponentialAverage(Column(samples, 0), exponent);
  const auto g2 = ExponentialAverage(Column(samples, 1), exponent);
  ValueEstimate chi = Difference(g2, g1);
  const double span = t2 - t1;
  chi.value /= span;
  chi.influence /= span;
  chi.std_error /= span;
  chi.ess = g2.ess;
  chi.low_ess = g2.low_ess;
  return chi;
}

ValueEstimate EstimateDiffValue(const DiffusionModel& model,
                                const StateCost& q, double exponent,
                                const Vector& x, const Vector& x_ref,
                                double chi, double horizon,
                                const McConfig& cfg) {
  CheckExponent(exponent);
  CheckHorizon(horizon);
  const McConfig run = cfg.WithHorizon(horizon);
  PathCostSpec spec;
  spec.state_cost = q;
  const GeneratedNoise noise(run.seed, run.dt);
  // chi T is common to both legs and cancels; it is kept so each leg is the
  // transformed cost of q - chi.
  const double shift = chi * run.horizon();
  const Vector jx = Column(SamplePathCosts(model, x, run, spec, noise), 0)
                        .array() -
                    shift;
  const Vector jr = Column(SamplePathCosts(model, x_ref, run, spec, noise), 0)
                        .array() -
                    shift;
  return Difference(ExponentialAverage(jx, exponent),
                    ExponentialAverage(jr, exponent));
}

DiscountedBound EstimateDiscountedLowerBound(const DiffusionModel& model,
                                             const StateCost& q,
                                             double exponent, double discount,
                                             const Vector& x,
                                             const McConfig& cfg,
                                             double tail_eps) {
  CheckExponent(exponent);
  if (!(discount > 0.0)) throw ConfigError("discount must be positive");
  if (!(tail_eps > 0.0 && tail_eps < 1.0)) {
    throw ConfigError("tail_eps must lie in (0, 1)");
  }
  McConfig run = cfg;
  run.steps = static_cast<int>(
      std::ceil(std::log(1.0 / tail_eps) / discount / cfg.dt - 1e-9));
  run.Validate();
  PathCostSpec spec;
  spec.state_cost = q;
  spec.discount = discount;
  spec.tail_fraction = 0.1;
  const auto samples =
      SamplePathCosts(model, x, run, spec, GeneratedNoise(run.seed, run.dt));
  DiscountedBound out;
  out.estimate = ExponentialAverage(Column(samples, 0), exponent);
  out.horizon = run.horizon();
  out.tail_bias = tail_eps * samples.tail_mean_q / discount;
  return out;
}

JensenGap ComputeJensenGap(const DiffusionModel& model, const StateCost& q,
                           double exponent, double discount,
                           double restart_time, double beta, const Vector& x,
                           const McConfig& cfg, double tail_eps) {
  if (!(discount > 0.0) || !(restart_time > 0.0) || !(beta > 0.0)) {
    throw ConfigError("jensen gap needs alpha > 0, r > 0, beta > 0");
  }
  const double a_lhs = exponent * std::exp(-discount * restart_time);
  const double a_rhs = exponent * std::exp(-discount * beta * restart_time);
  CheckExponent(a_lhs);
  CheckExponent(a_rhs);
  const double power = std::exp(-discount * (1.0 - beta) * restart_time);

  McConfig run = cfg;
  run.steps = static_cast<int>(
      std::ceil(std::log(1.0 / tail_eps) / discount / cfg.dt - 1e-9));
  run.Validate();
  PathCostSpec spec;
  spec.state_cost = q;
  spec.discount = discount;
  const auto samples =
      SamplePathCosts(model, x, run, spec, GeneratedNoise(run.seed, run.dt));
  const Eigen::ArrayXd costs = samples.costs.col(0).array();

  JensenGap gap;
  gap.log_lhs = LogMeanExp(a_lhs * costs);
  gap.log_rhs = power * LogMeanExp(a_rhs * costs);
  gap.lhs = std::exp(gap.log_lhs);
  gap.rhs = std::exp(gap.log_rhs);

  // Delta method for lhs - rhs on the shared paths.
  const Eigen::ArrayXd s1 = a_lhs * costs;
  const Eigen::ArrayXd s2 = a_rhs * costs;
  const Eigen::ArrayXd w1 = (s1 - s1.maxCoeff()).exp();
  const Eigen::ArrayXd w2 = (s2 - s2.maxCoeff()).exp();
  const Vector influence =
      (gap.lhs * (w1 / w1.mean() - 1.0) -
       gap.rhs * power * (w2 / w2.mean() - 1.0))
          .matrix();
  gap.std_error = StdErrorOf(influence);

  const double diff = gap.lhs - gap.rhs;
  const double slack = 1e-12 * std::max(std::abs(gap.lhs), std::abs(gap.rhs));
  if (beta < 1.0) {
    gap.direction_ok = diff <= slack;
  } else if (beta > 1.0) {
    gap.direction_ok = diff >= -slack;
  } else {
    // Both sides are the same expression on the same sample.
    gap.direction_ok = diff == 0.0;
  }
  return gap;
}

RecurrenceResidual ComputeRecurrenceResidual(
    const DiffusionModel& model, const StateCost& q, double exponent,
    double chi, const std::function<double(const Vector&)>& z_fn,
    double segment, const Vector& x, const McConfig& cfg) {
  CheckExponent(exponent);
  CheckHorizon(segment);
  const double z0 = z_fn(x);
  if (!(z0 > 0.0)) throw ConfigError("z must be positive");
  const McConfig run = cfg.WithHorizon(segment);
  PathCostSpec spec;
  spec.state_cost = q;
  const auto samples =
      SamplePathCosts(model, x, run, spec, GeneratedNoise(run.seed, run.dt));
  const auto k = samples.costs.rows();
  Eigen::ArrayXd log_terms(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Vector xe = samples.final_states.col(i);
    const double z = z_fn(xe);
    if (!(z > 0.0)) throw ConfigError("z must be positive on sampled states");
    log_terms[i] = exponent * samples.costs(i, 0) + std::log(z);
  }
  const double shift = log_terms.maxCoeff();
  const Eigen::ArrayXd w = (log_terms - shift).exp();
  const double log_ratio = -exponent * chi * run.horizon() + shift +
                           std::log(w.mean()) - std::log(z0);
  RecurrenceResidual out;
  out.residual_rel = -std::expm1(log_ratio);
  const double ratio = std::exp(log_ratio);
  out.std_error = ratio * std::sqrt(SampleVariance(w / w.mean()) /
                                    static_cast<double>(k));
  return out;
}

ValueEstimate EstimateValueUnderPolicy(const DiffusionModel& model,
                                       const RiskCostModel& cost, double phi,
                                       const Policy& policy, const Vector& x,
                                       double horizon, const McConfig& cfg) {
  CheckHorizon(horizon);
  cost.Validate();
  if (cost.control_weight.rows() != model.control_dim()) {
    throw DimensionError("control weight does not match the model");
  }
  const McConfig run = cfg.WithHorizon(horizon);
  PathCostSpec spec;
  spec.state_cost = cost.state_cost;
  spec.discount = cost.discount;
  spec.terminal_cost = cost.terminal_cost;
  spec.control_weight = cost.control_weight;
  const auto samples = SamplePathCosts(
      model, x, run, spec, GeneratedNoise(run.seed, run.dt), &policy);
  const Vector costs = samples.costs.col(0);
  if (phi == 0.0) return MeanAverage(costs);
  auto est = ExponentialAverage(costs, phi);
  return est;
}

}  // namespace rspic
