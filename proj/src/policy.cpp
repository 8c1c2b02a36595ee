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

#include "rspic/policy.hpp"

#include <cmath>

namespace rspic {

double DefaultGradientStep(const Vector& x) {
  const double scale = x.size() > 0 ? x.cwiseAbs().maxCoeff() : 0.0;
  return 1e-2 * std::max(1.0, scale);
}

GradientEstimate EstimateValueGradient(const ValueFunction& value_fn,
                                       const Vector& x, double h) {
  if (h <= 0.0) h = DefaultGradientStep(x);
  const auto n = x.size();
  GradientEstimate out;
  out.grad.resize(n);
  out.std_error.resize(n);
  out.step = h;
  for (Eigen::Index j = 0; j < n; ++j) {
    Vector up = x;
    Vector down = x;
    up[j] += h;
    down[j] -= h;
    const ValueEstimate diff = Difference(value_fn(up), value_fn(down));
    out.grad[j] = diff.value / (2.0 * h);
    out.std_error[j] = diff.std_error / (2.0 * h);
    if (std::abs(out.grad[j]) * h < 10.0 * out.std_error[j]) {
      out.step_too_small = true;
    }
  }
  return out;
}

Vector ControlFromGradient(const DiffusionModel& model,
                           const Matrix& control_weight, const Vector& x,
                           const Vector& grad) {
  const int m = model.control_dim();
  if (grad.size() != model.state_dim() || x.size() != model.state_dim()) {
    throw DimensionError("gradient and state must have state_dim entries");
  }
  if (control_weight.rows() != m || control_weight.cols() != m) {
    throw DimensionError("control weight R must be m x m");
  }
  const Matrix b = model.ControlMatrix(x);
  return -control_weight.llt().solve(b.transpose() * grad);
}

PicPolicy::PicPolicy(DiffusionModel model, RiskCostModel cost,
                     RiskParams params, PicMode mode,
                     PolicyCacheConfig cache_cfg)
    : model_(std::move(model)),
      cost_(std::move(cost)),
      params_(params),
      mode_(mode),
      cfg_(cache_cfg) {
  CheckExponent(params_.exponent);
  cost_.Validate();
  if (!(cfg_.grid_tol > 0.0) || !(cfg_.step > 0.0)) {
    throw ConfigError("grid_tol and step must be positive");
  }
  const McConfig mc = McConfig::ForHorizon(cfg_.horizon, cfg_.dt, cfg_.paths,
                                           cfg_.seed);
  total_steps_ = mc.steps;
  noise_ = std::make_shared<const NoiseTable>(cfg_.seed, cfg_.dt, cfg_.paths,
                                              total_steps_,
                                              model_.noise_dim());
}

PicPolicy::Key PicPolicy::MakeKey(double t, const Vector& x) const {
  CheckStateDim(model_, x);
  Key key;
  key.time_index = 0;
  if (mode_ == PicMode::kFiniteHorizon) {
    key.time_index = std::clamp<long>(std::lround(t / cfg_.dt), 0,
                                      total_steps_);
  }
  key.cell.resize(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    key.cell[static_cast<std::size_t>(i)] = std::lround(x[i] / cfg_.grid_tol);
  }
  return key;
}

GradientEstimate PicPolicy::Compute(const Key& key) const {
  Vector center(static_cast<Eigen::Index>(key.cell.size()));
  for (std::size_t i = 0; i < key.cell.size(); ++i) {
    center[static_cast<Eigen::Index>(i)] =
        static_cast<double>(key.cell[i]) * cfg_.grid_tol;
  }
  const int remaining = total_steps_ - static_cast<int>(key.time_index);
  if (remaining <= 0) {
    // At the final time the value is the terminal cost itself.
    if (!cost_.terminal_cost) {
      GradientEstimate zero;
      zero.grad = Vector::Zero(center.size());
      zero.std_error = Vector::Zero(center.size());
      zero.step = cfg_.step;
      return zero;
    }
    const auto terminal = [&](const Vector& y) {
      ValueEstimate v;
      v.value = cost_.terminal_cost(y);
      v.influence = Vector::Zero(1);
      v.n_samples = 1;
      return v;
    };
    return EstimateValueGradient(terminal, center, cfg_.step);
  }

  McConfig mc;
  mc.paths = cfg_.paths;
  mc.dt = cfg_.dt;
  mc.steps = remaining;
  mc.seed = cfg_.seed;
  mc.worker_hint = cfg_.worker_hint;
  PathCostSpec spec;
  spec.state_cost = cost_.state_cost;
  if (mode_ == PicMode::kFiniteHorizon) spec.terminal_cost = cost_.terminal_cost;
  const double exponent = params_.exponent;
  // In average-cost mode the reference leg V_T(x_ref) is a constant shift
  // and drops out of the gradient.
  const ValueFunction value_fn = [&](const Vector& y) {
    const auto samples = SamplePathCosts(model_, y, mc, spec, *noise_);
    return ExponentialAverage(Vector(samples.costs.col(0)), exponent);
  };
  return EstimateValueGradient(value_fn, center, cfg_.step);
}

GradientEstimate PicPolicy::Gradient(double t, const Vector& x) const {
  const Key key = MakeKey(t, x);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  GradientEstimate grad = Compute(key);
  std::lock_guard<std::mutex> lock(mutex_);
  return cache_.emplace(key, std::move(grad)).first->second;
}

Vector PicPolicy::operator()(double t, const Vector& x) const {
  return ControlFromGradient(model_, cost_.control_weight, x,
                             Gradient(t, x).grad);
}

std::size_t PicPolicy::cache_size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return cache_.size();
}

Policy PicPolicy::AsPolicy() const {
  return [this](double t, const Vector& x) { return (*this)(t, x); };
}

std::shared_ptr<PicPolicy> MakePicPolicy(const DiffusionModel& model,
                                         const RiskCostModel& cost,
                                         const RiskParams& params,
                                         PicMode mode,
                                         const PolicyCacheConfig& cache_cfg) {
  return std::make_shared<PicPolicy>(model, cost, params, mode, cache_cfg);
}

}  // namespace rspic
