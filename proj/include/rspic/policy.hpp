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

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "rspic/estimators.hpp"
#include "rspic/risk.hpp"

namespace rspic {

struct GradientEstimate {
  Vector grad;
  Vector std_error;
  double step = 0.0;
  // |grad_j| h < 10 std_error_j for some j: the difference is buried in noise.
  bool step_too_small = false;
};

// Fixed-seed value evaluation; repeated calls must reuse the same noise
// family so that differences see common random numbers.
using ValueFunction = std::function<ValueEstimate(const Vector&)>;

// Default finite-difference step: 1e-2 scaled by max(1, |x|).
double DefaultGradientStep(const Vector& x);

// Central differences (V(x + h e_j) - V(x - h e_j)) / 2h. h <= 0 selects
// DefaultGradientStep.
GradientEstimate EstimateValueGradient(const ValueFunction& value_fn,
                                       const Vector& x, double h = 0.0);

// u = -R^-1 B(x)^T grad.
Vector ControlFromGradient(const DiffusionModel& model,
                           const Matrix& control_weight, const Vector& x,
                           const Vector& grad);

enum class PicMode { kFiniteHorizon, kAverageCost };

struct PolicyCacheConfig {
  int paths = 2000;
  double dt = 1e-2;
  // Finite-horizon mode: the control horizon T. Average-cost mode: the
  // horizon over which the differential value is approximated.
  double horizon = 4.0;
  std::uint64_t seed = 0;
  double step = 1e-2;       // finite-difference h
  double grid_tol = 1e-3;   // memoization cell size
  std::optional<int> worker_hint;
};

// Path-integral feedback law u*(t, x) = -R^-1 B^T grad V built from
// Feynman-Kac values over uncontrolled paths with A = phi - psi. Gradients
// are memoized per grid cell and evaluated at the cell center, so the law is
// a deterministic function of (t, x) no matter the query order or thread.
class PicPolicy {
 public:
  PicPolicy(DiffusionModel model, RiskCostModel cost, RiskParams params,
            PicMode mode, PolicyCacheConfig cache_cfg);

  Vector operator()(double t, const Vector& x) const;
  GradientEstimate Gradient(double t, const Vector& x) const;

  std::size_t cache_size() const;
  Policy AsPolicy() const;

 private:
  struct Key {
    long time_index;
    std::vector<long> cell;
    auto operator<=>(const Key&) const = default;
  };

  Key MakeKey(double t, const Vector& x) const;
  GradientEstimate Compute(const Key& key) const;

  DiffusionModel model_;
  RiskCostModel cost_;
  RiskParams params_;
  PicMode mode_;
  PolicyCacheConfig cfg_;
  int total_steps_;
  std::shared_ptr<const NoiseTable> noise_;
  mutable std::mutex mutex_;
  mutable std::map<Key, GradientEstimate> cache_;
};

std::shared_ptr<PicPolicy> MakePicPolicy(const DiffusionModel& model,
                                         const RiskCostModel& cost,
                                         const RiskParams& params,
                                         PicMode mode,
                                         const PolicyCacheConfig& cache_cfg);

}  // namespace rspic
