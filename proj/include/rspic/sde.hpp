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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "rspic/errors.hpp"
#include "rspic/philox.hpp"

namespace rspic {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Feedback law (t, x) -> u.
using Policy = std::function<Vector(double, const Vector&)>;

// Controlled Ito diffusion dX = (a(X) + B(X) u) dt + sigma dW with constant
// sigma. Immutable after construction and safe to share between threads.
class DiffusionModel {
 public:
  using DriftFn = std::function<void(const Vector& x, Vector& out)>;
  using ControlMatrixFn = std::function<void(const Vector& x, Matrix& out)>;

  DiffusionModel(int state_dim, int control_dim, DriftFn drift,
                 ControlMatrixFn control_matrix, Matrix noise_matrix);

  // dX = (A x + B u) dt + sigma dW. Simulation uses an allocation-free
  // fast path for this case.
  static DiffusionModel Linear(Matrix drift_matrix, Matrix control_matrix,
                               Matrix noise_matrix);

  int state_dim() const { return state_dim_; }
  int control_dim() const { return control_dim_; }
  int noise_dim() const { return static_cast<int>(sigma_.cols()); }

  const Matrix& noise_matrix() const { return sigma_; }
  // Sigma = sigma sigma^T.
  const Matrix& noise_covariance() const { return covariance_; }

  bool is_linear() const { return linear_drift_.has_value(); }
  const std::optional<Matrix>& linear_drift() const { return linear_drift_; }
  const std::optional<Matrix>& constant_control_matrix() const {
    return constant_b_;
  }

  void Drift(const Vector& x, Vector& out) const;
  void ControlMatrix(const Vector& x, Matrix& out) const;
  Matrix ControlMatrix(const Vector& x) const {
    Matrix b(state_dim_, control_dim_);
    ControlMatrix(x, b);
    return b;
  }

 private:
  int state_dim_;
  int control_dim_;
  DriftFn drift_;
  ControlMatrixFn control_matrix_;
  Matrix sigma_;
  Matrix covariance_;
  std::optional<Matrix> linear_drift_;
  std::optional<Matrix> constant_b_;
};

struct McConfig {
  int paths = 1000;
  double dt = 1e-2;
  int steps = 100;
  std::uint64_t seed = 0;
  std::optional<int> worker_hint;
  double divergence_bound = 1e6;

  double horizon() const { return dt * steps; }

  // Picks steps = round(horizon / dt); the product must reproduce the
  // horizon to one part in 1e9.
  static McConfig ForHorizon(double horizon, double dt, int paths,
                             std::uint64_t seed);

  // Same sampling parameters but a different horizon.
  McConfig WithHorizon(double horizon) const;

  void Validate() const;
};

// Fully materialized simulation output. Only practical for moderate K*N;
// the estimators stream paths instead (see SimulatePath).
struct TrajectoryBatch {
  Vector times;                 // t_0 .. t_N
  std::vector<Matrix> states;   // per path, n x (N+1)
  std::vector<Matrix> noise;    // per path, p x N, already sqrt(dt)-scaled
  std::vector<Matrix> controls; // per path, m x N; empty if uncontrolled

  int paths() const { return static_cast<int>(states.size()); }
  int steps() const { return static_cast<int>(times.size()) - 1; }
  double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
  bool has_controls() const { return !controls.empty(); }
};

// Brownian increments drawn on the fly from the per-path Philox stream.
class GeneratedNoise {
 public:
  class Path {
   public:
    Path(std::uint64_t seed, std::uint64_t path, double sqrt_dt)
        : stream_(seed, path), sqrt_dt_(sqrt_dt) {}
    void Next(Vector& dw) {
      for (Eigen::Index i = 0; i < dw.size(); ++i) {
        dw[i] = sqrt_dt_ * stream_.Next();
      }
    }

   private:
    PathNormalStream stream_;
    double sqrt_dt_;
  };

  GeneratedNoise(std::uint64_t seed, double dt)
      : seed_(seed), sqrt_dt_(std::sqrt(dt)) {}
  Path Open(std::size_t path) const { return Path(seed_, path, sqrt_dt_); }

 private:
  std::uint64_t seed_;
  double sqrt_dt_;
};

// Pre-generated increments, bit-identical to GeneratedNoise for the same
// (seed, dt). Worth it when the same noise family is replayed many times.
class NoiseTable {
 public:
  class Path {
   public:
    explicit Path(const double* data) : data_(data) {}
    void Next(Vector& dw) {
      for (Eigen::Index i = 0; i < dw.size(); ++i) dw[i] = *data_++;
    }

   private:
    const double* data_;
  };

  NoiseTable(std::uint64_t seed, double dt, int paths, int steps,
             int noise_dim);
  Path Open(std::size_t path) const {
    return Path(data_.data() + path * stride_);
  }
  int paths() const { return paths_; }
  int steps() const { return steps_; }

 private:
  int paths_;
  int steps_;
  std::size_t stride_;
  std::vector<double> data_;
};

// Runs fn(i) for i in [0, count) on up to `workers` threads with a static
// partition. Exceptions are rethrown on the caller; the one from the lowest
// failing index wins so error reporting does not depend on scheduling.
template <class Fn>
void ParallelFor(std::size_t count, int workers, Fn&& fn) {
  if (workers <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const auto nthreads =
      std::min<std::size_t>(static_cast<std::size_t>(workers), count);
  std::vector<std::exception_ptr> errors(nthreads);
  std::vector<std::size_t> failed_at(nthreads, count);
  std::vector<std::thread> threads;
  threads.reserve(nthreads);
  for (std::size_t w = 0; w < nthreads; ++w) {
    threads.emplace_back([&, w] {
      const std::size_t begin = count * w / nthreads;
      const std::size_t end = count * (w + 1) / nthreads;
      for (std::size_t i = begin; i < end; ++i) {
        try {
          fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
          failed_at[w] = i;
          return;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  std::size_t first = count;
  std::exception_ptr error;
  for (std::size_t w = 0; w < nthreads; ++w) {
    if (errors[w] && failed_at[w] < first) {
      first = failed_at[w];
      error = errors[w];
    }
  }
  if (error) std::rethrow_exception(error);
}

inline int ResolveWorkers(const McConfig& cfg) {
  return cfg.worker_hint.value_or(1);
}

namespace internal {
[[noreturn]] void ThrowDivergence(std::size_t path, int step,
                                  const Vector& x);
[[noreturn]] void ThrowBadControl(std::size_t path, int step);
}  // namespace internal

// Euler-Maruyama simulation of a single path, streaming every grid node to
// `observe(step, t, x, u)`. `u` points at the control applied on
// [t_step, t_step+1) and is null at the final node and for uncontrolled
// runs. `on_noise(step, dw)`, when given, sees each increment.
template <class NoiseSourceT, class Observer>
void SimulatePath(const DiffusionModel& model, const Vector& x0,
                  const McConfig& cfg, std::size_t path,
                  const NoiseSourceT& noise, const Policy* policy,
                  Observer&& observe) {
  const int n = model.state_dim();
  const int m = model.control_dim();
  const int p = model.noise_dim();
  const double dt = cfg.dt;
  const double bound = cfg.divergence_bound;
  const Matrix& sigma = model.noise_matrix();
  const Matrix* a_lin = model.is_linear() ? &*model.linear_drift() : nullptr;
  const Matrix* b_const = model.constant_control_matrix()
                              ? &*model.constant_control_matrix()
                              : nullptr;

  auto stream = noise.Open(path);
  Vector x = x0;
  Vector drift(n);
  Vector dw(p);
  Vector u;
  Matrix b;
  if (policy != nullptr && b_const == nullptr) b.resize(n, m);

  for (int j = 0; j < cfg.steps; ++j) {
    const double t = j * dt;
    if (a_lin != nullptr) {
      for (int r = 0; r < n; ++r) {
        double acc = 0.0;
        for (int c = 0; c < n; ++c) acc += (*a_lin)(r, c) * x[c];
        drift[r] = acc;
      }
    } else {
      model.Drift(x, drift);
    }
    const Vector* uptr = nullptr;
    if (policy != nullptr) {
      u = (*policy)(t, x);
      if (u.size() != m) {
        throw DimensionError("policy returned control of size " +
                             std::to_string(u.size()) + ", expected " +
                             std::to_string(m));
      }
      if (!u.allFinite()) internal::ThrowBadControl(path, j);
      const Matrix& bm = b_const != nullptr ? *b_const : b;
      if (b_const == nullptr) model.ControlMatrix(x, b);
      for (int r = 0; r < n; ++r) {
        double acc = 0.0;
        for (int c = 0; c < m; ++c) acc += bm(r, c) * u[c];
        drift[r] += acc;
      }
      uptr = &u;
    }
    observe(j, t, static_cast<const Vector&>(x), uptr);
    stream.Next(dw);
    for (int r = 0; r < n; ++r) {
      double acc = drift[r] * dt;
      for (int c = 0; c < p; ++c) acc += sigma(r, c) * dw[c];
      x[r] += acc;
      if (!(std::abs(x[r]) <= bound)) internal::ThrowDivergence(path, j + 1, x);
    }
  }
  observe(cfg.steps, cfg.steps * dt, static_cast<const Vector&>(x),
          static_cast<const Vector*>(nullptr));
}

TrajectoryBatch SimulateUncontrolled(const DiffusionModel& model,
                                     const Vector& x0, const McConfig& cfg);

TrajectoryBatch SimulateControlled(const DiffusionModel& model,
                                   const Policy& policy, const Vector& x0,
                                   const McConfig& cfg);

using StateCost = std::function<double(const Vector&)>;

// Per-path left-endpoint quadrature of e^{-alpha t} q(X_t) dt, plus the
// terminal cost and, when controls are recorded, e^{-alpha t} 1/2 u^T R u dt.
Vector PathCostIntegral(const TrajectoryBatch& batch, const StateCost& q,
                        double discount, const StateCost& terminal = nullptr,
                        const Matrix& control_weight = Matrix());

void CheckStateDim(const DiffusionModel& model, const Vector& x);

}  // namespace rspic
