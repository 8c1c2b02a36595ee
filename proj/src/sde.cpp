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

#include "rspic/sde.hpp"

#include <sstream>

namespace rspic {

namespace {

void CheckSpd(const Matrix& covariance) {
  Eigen::LLT<Matrix> llt(covariance);
  if (llt.info() != Eigen::Success) {
    throw AssumptionViolation(
        "noise covariance sigma*sigma^T is not positive definite");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(covariance);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 1e-14 * std::max(1.0, hi))) {
    throw AssumptionViolation(
        "noise covariance sigma*sigma^T is not positive definite");
  }
}

}  // namespace

DiffusionModel::DiffusionModel(int state_dim, int control_dim, DriftFn drift,
                               ControlMatrixFn control_matrix,
                               Matrix noise_matrix)
    : state_dim_(state_dim),
      control_dim_(control_dim),
      drift_(std::move(drift)),
      control_matrix_(std::move(control_matrix)),
      sigma_(std::move(noise_matrix)) {
  if (state_dim_ <= 0 || control_dim_ < 0) {
    throw DimensionError("state_dim must be positive and control_dim >= 0");
  }
  if (sigma_.rows() != state_dim_ || sigma_.cols() < 1) {
    throw DimensionError("noise matrix must have state_dim rows");
  }
  if (!sigma_.allFinite()) throw AssumptionViolation("noise matrix not finite");
  covariance_ = sigma_ * sigma_.transpose();
  CheckSpd(covariance_);
  if (!drift_) throw DimensionError("drift function is empty");
}

DiffusionModel DiffusionModel::Linear(Matrix drift_matrix,
                                      Matrix control_matrix,
                                      Matrix noise_matrix) {
  const auto n = drift_matrix.rows();
  if (drift_matrix.cols() != n) {
    throw DimensionError("drift matrix must be square");
  }
  if (control_matrix.rows() != n) {
    throw DimensionError("control matrix must have state_dim rows");
  }
  Matrix a = drift_matrix;
  Matrix b = control_matrix;
  DiffusionModel model(
      static_cast<int>(n), static_cast<int>(control_matrix.cols()),
      [a](const Vector& x, Vector& out) { out.noalias() = a * x; },
      [b](const Vector&, Matrix& out) { out = b; }, std::move(noise_matrix));
  model.linear_drift_ = std::move(drift_matrix);
  model.constant_b_ = std::move(control_matrix);
  return model;
}

void DiffusionModel::Drift(const Vector& x, Vector& out) const {
  drift_(x, out);
}

void DiffusionModel::ControlMatrix(const Vector& x, Matrix& out) const {
  if (constant_b_) {
    out = *constant_b_;
    return;
  }
  if (!control_matrix_) {
    throw DimensionError("model has no control matrix");
  }
  control_matrix_(x, out);
}

McConfig McConfig::ForHorizon(double horizon, double dt, int paths,
                              std::uint64_t seed) {
  if (!(dt > 0.0) || !(horizon > 0.0)) {
    throw ConfigError("horizon and dt must be positive");
  }
  McConfig cfg;
  cfg.paths = paths;
  cfg.dt = dt;
  cfg.steps = static_cast<int>(std::llround(horizon / dt));
  cfg.seed = seed;
  if (cfg.steps < 1 ||
      std::abs(cfg.steps * dt - horizon) > 1e-9 * horizon) {
    std::ostringstream os;
    os << "horizon " << horizon << " is not an integer multiple of dt " << dt;
    throw ConfigError(os.str());
  }
  cfg.Validate();
  return cfg;
}

McConfig McConfig::WithHorizon(double horizon) const {
  McConfig out = ForHorizon(horizon, dt, paths, seed);
  out.worker_hint = worker_hint;
  out.divergence_bound = divergence_bound;
  return out;
}

void McConfig::Validate() const {
  if (paths < 2) throw ConfigError("mc.paths must be at least 2");
  if (!(dt > 0.0)) throw ConfigError("mc.dt must be positive");
  if (steps < 1) throw ConfigError("mc.steps must be positive");
  if (worker_hint && *worker_hint < 1) {
    throw ConfigError("worker hint must be positive");
  }
  if (!(divergence_bound > 0.0)) {
    throw ConfigError("divergence bound must be positive");
  }
}

NoiseTable::NoiseTable(std::uint64_t seed, double dt, int paths, int steps,
                       int noise_dim)
    : paths_(paths),
      steps_(steps),
      stride_(static_cast<std::size_t>(steps) * noise_dim),
      data_(static_cast<std::size_t>(paths) * stride_) {
  GeneratedNoise source(seed, dt);
  Vector dw(noise_dim);
  for (int k = 0; k < paths; ++k) {
    auto stream = source.Open(k);
    double* out = data_.data() + k * stride_;
    for (int j = 0; j < steps; ++j) {
      stream.Next(dw);
      for (int i = 0; i < noise_dim; ++i) *out++ = dw[i];
    }
  }
}

namespace internal {

void ThrowDivergence(std::size_t path, int step, const Vector& x) {
  std::ostringstream os;
  os << "path " << path << " diverged at step " << step << " (|x|_inf = "
     << x.cwiseAbs().maxCoeff() << ")";
  throw DivergenceError(os.str());
}

void ThrowBadControl(std::size_t path, int step) {
  std::ostringstream os;
  os << "policy returned a non-finite control on path " << path
     << " at step " << step;
  throw DivergenceError(os.str());
}

}  // namespace internal

void CheckStateDim(const DiffusionModel& model, const Vector& x) {
  if (x.size() != model.state_dim()) {
    throw DimensionError("state has dimension " + std::to_string(x.size()) +
                         ", model expects " +
                         std::to_string(model.state_dim()));
  }
  if (!x.allFinite()) throw DimensionError("initial state is not finite");
}

namespace {

TrajectoryBatch Simulate(const DiffusionModel& model, const Policy* policy,
                         const Vector& x0, const McConfig& cfg) {
  cfg.Validate();
  CheckStateDim(model, x0);
  const int n = model.state_dim();
  const int m = model.control_dim();
  const int p = model.noise_dim();
  TrajectoryBatch batch;
  batch.times.resize(cfg.steps + 1);
  for (int j = 0; j <= cfg.steps; ++j) batch.times[j] = j * cfg.dt;
  batch.states.assign(cfg.paths, Matrix(n, cfg.steps + 1));
  batch.noise.assign(cfg.paths, Matrix(p, cfg.steps));
  if (policy != nullptr) batch.controls.assign(cfg.paths, Matrix(m, cfg.steps));

  // The recorder wraps the noise stream so increments land in the batch.
  struct RecordingNoise {
    const GeneratedNoise* inner;
    TrajectoryBatch* batch;
    struct Path {
      GeneratedNoise::Path stream;
      Matrix* out;
      int step = 0;
      void Next(Vector& dw) {
        stream.Next(dw);
        out->col(step++) = dw;
      }
    };
    Path Open(std::size_t k) const {
      return Path{inner->Open(k), &batch->noise[k]};
    }
  };
  const GeneratedNoise noise(cfg.seed, cfg.dt);
  const RecordingNoise recording{&noise, &batch};

  ParallelFor(cfg.paths, ResolveWorkers(cfg), [&](std::size_t k) {
    Matrix& states = batch.states[k];
    Matrix* controls = policy != nullptr ? &batch.controls[k] : nullptr;
    SimulatePath(model, x0, cfg, k, recording, policy,
                 [&](int j, double, const Vector& x, const Vector* u) {
                   states.col(j) = x;
                   if (u != nullptr) controls->col(j) = *u;
                 });
  });
  return batch;
}

}  // namespace

TrajectoryBatch SimulateUncontrolled(const DiffusionModel& model,
                                     const Vector& x0, const McConfig& cfg) {
  return Simulate(model, nullptr, x0, cfg);
}

TrajectoryBatch SimulateControlled(const DiffusionModel& model,
                                   const Policy& policy, const Vector& x0,
                                   const McConfig& cfg) {
  if (model.control_dim() == 0) {
    throw DimensionError("model has no control inputs");
  }
  return Simulate(model, &policy, x0, cfg);
}

Vector PathCostIntegral(const TrajectoryBatch& batch, const StateCost& q,
                        double discount, const StateCost& terminal,
                        const Matrix& control_weight) {
  if (discount < 0.0) throw ConfigError("discount must be nonnegative");
  const int paths = batch.paths();
  const int steps = batch.steps();
  const double dt = batch.dt();
  const bool with_control = batch.has_controls() && control_weight.size() > 0;
  Vector costs(paths);
  Vector x;
  for (int k = 0; k < paths; ++k) {
    double acc = 0.0;
    for (int j = 0; j < steps; ++j) {
      const double weight =
          discount > 0.0 ? std::exp(-discount * batch.times[j]) : 1.0;
      double rate = 0.0;
      if (q) {
        x = batch.states[k].col(j);
        rate = q(x);
        if (!std::isfinite(rate)) {
          throw DivergenceError("state cost is not finite");
        }
      }
      if (with_control) {
        const auto u = batch.controls[k].col(j);
        rate += 0.5 * u.dot(control_weight * u);
      }
      acc += weight * rate;
    }
    acc *= dt;
    if (terminal) {
      x = batch.states[k].col(steps);
      acc += terminal(x);
    }
    costs[k] = acc;
  }
  return costs;
}

}  // namespace rspic
