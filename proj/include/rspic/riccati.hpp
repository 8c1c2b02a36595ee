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

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "rspic/errors.hpp"

namespace rspic {

// dX = (A x + B u) dt + sigma dW with l = 1/2 x^T Q x + 1/2 u^T R u.
template <typename Scalar>
struct BasicLqSystem {
  using MatrixType = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  MatrixType drift;
  MatrixType control;
  MatrixType state_weight;
  MatrixType control_weight;
  MatrixType noise;

  Eigen::Index state_dim() const { return drift.rows(); }

  MatrixType NoiseCovariance() const { return noise * noise.transpose(); }

  // B R^-1 B^T.
  MatrixType ControlAuthority() const {
    return control * control_weight.llt().solve(control.transpose());
  }

  void Validate() const {
    const auto n = drift.rows();
    if (drift.cols() != n || control.rows() != n || state_weight.rows() != n ||
        state_weight.cols() != n || noise.rows() != n ||
        control_weight.rows() != control.cols() ||
        control_weight.cols() != control.cols()) {
      throw DimensionError("inconsistent LQ system dimensions");
    }
    const Scalar tol = Scalar(1e-12) * (Scalar(1) + state_weight.norm());
    if ((state_weight - state_weight.transpose()).norm() > tol) {
      throw AssumptionViolation("Q must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<MatrixType> q_eig(state_weight);
    if (q_eig.eigenvalues().minCoeff() < -tol) {
      throw AssumptionViolation("Q must be positive semidefinite");
    }
    if (control.cols() > 0 &&
        control_weight.llt().info() != Eigen::Success) {
      throw AssumptionViolation("R must be positive definite");
    }
    if (NoiseCovariance().llt().info() != Eigen::Success) {
      throw AssumptionViolation("Sigma must be positive definite");
    }
  }

  // a = -x, B = 1, sigma = 1, Q = 1, R = 1.
  static BasicLqSystem ScalarOu() {
    BasicLqSystem sys;
    sys.drift = MatrixType::Constant(1, 1, Scalar(-1));
    sys.control = MatrixType::Ones(1, 1);
    sys.state_weight = MatrixType::Ones(1, 1);
    sys.control_weight = MatrixType::Ones(1, 1);
    sys.noise = MatrixType::Ones(1, 1);
    return sys;
  }
};

template <typename Scalar>
struct BasicRiccatiSolution {
  using MatrixType = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  MatrixType cost_to_go;  // S
  MatrixType gain;        // K = R^-1 B^T S
  Scalar chi = 0;         // 1/2 tr(S Sigma)
  Scalar residual = 0;    // Frobenius norm of the Riccati right-hand side
};

template <typename Scalar>
struct BasicDifferentialRiccatiSolution {
  using MatrixType = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  std::vector<Scalar> times;
  std::vector<MatrixType> cost_to_go;  // S(t_i)
  std::vector<Scalar> offset;          // c(t_i), c(T) = 0

  Scalar horizon() const { return times.back(); }
};

namespace riccati_detail {

// Q + A^T S + S A + S W S with W = phi Sigma - B R^-1 B^T.
template <typename MatrixType>
MatrixType Rhs(const MatrixType& q, const MatrixType& a, const MatrixType& w,
               const MatrixType& s) {
  MatrixType out = q;
  out.noalias() += a.transpose() * s;
  out.noalias() += s * a;
  out.noalias() += s * w * s;
  return out;
}

template <typename MatrixType>
MatrixType Symmetrized(const MatrixType& s) {
  return (s + s.transpose()) / 2;
}

// Solves A^T X + X A = C by Kronecker vectorization. Fine for the small
// state dimensions this library targets.
template <typename MatrixType>
MatrixType SolveLyapunov(const MatrixType& a, const MatrixType& c) {
  using Scalar = typename MatrixType::Scalar;
  const auto n = a.rows();
  const MatrixType eye = MatrixType::Identity(n, n);
  MatrixType kron(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      // vec(A^T X) = (I kron A^T) vec X ; vec(X A) = (A^T kron I) vec X
      kron.block(i * n, j * n, n, n) =
          eye(i, j) * a.transpose() + a(j, i) * eye;
    }
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rhs =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(c.data(),
                                                                  n * n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sol =
      kron.fullPivLu().solve(rhs);
  return Eigen::Map<MatrixType>(sol.data(), n, n);
}

}  // namespace riccati_detail

// phi Sigma - B R^-1 B^T, the indefinite quadratic weight of the
// risk-sensitive Riccati equation.
template <typename Scalar>
auto QuadraticWeight(const BasicLqSystem<Scalar>& sys, Scalar phi) {
  return typename BasicLqSystem<Scalar>::MatrixType(
      phi * sys.NoiseCovariance() - sys.ControlAuthority());
}

template <typename Scalar>
Scalar RiccatiResidual(const BasicLqSystem<Scalar>& sys, Scalar phi,
                       const typename BasicLqSystem<Scalar>::MatrixType& s) {
  return riccati_detail::Rhs(sys.state_weight, sys.drift,
                             QuadraticWeight(sys, phi), s)
      .norm();
}

template <typename Scalar>
BasicRiccatiSolution<Scalar> MakeRiccatiSolution(
    const BasicLqSystem<Scalar>& sys, Scalar phi,
    typename BasicLqSystem<Scalar>::MatrixType s) {
  BasicRiccatiSolution<Scalar> sol;
  sol.cost_to_go = riccati_detail::Symmetrized(s);
  sol.gain =
      sys.control_weight.llt().solve(sys.control.transpose() * sol.cost_to_go);
  sol.chi = (sol.cost_to_go * sys.NoiseCovariance()).trace() / 2;
  sol.residual = RiccatiResidual(sys, phi, sol.cost_to_go);
  return sol;
}

// Stabilizing solution of 0 = Q + A^T S + S A + S (phi Sigma - B R^-1 B^T) S.
// Integrates the differential Riccati equation backward from S = 0 to its
// steady state, then polishes with Newton (Kleinman) steps.
template <typename Scalar>
BasicRiccatiSolution<Scalar> SolveAlgebraicRiccati(
    const BasicLqSystem<Scalar>& sys, Scalar phi) {
  using MatrixType = typename BasicLqSystem<Scalar>::MatrixType;
  using riccati_detail::Rhs;
  sys.Validate();
  const auto n = sys.state_dim();
  const MatrixType w = QuadraticWeight(sys, phi);
  const Scalar scale =
      std::max<Scalar>(Scalar(1), sys.drift.norm() + w.norm() +
                                      std::sqrt(sys.state_weight.norm() *
                                                (w.norm() + Scalar(1e-300))));
  const Scalar h = Scalar(0.05) / scale;
  const Scalar blowup = Scalar(1e8);
  const long max_steps = 20'000'000;

  MatrixType s = MatrixType::Zero(n, n);
  bool settled = false;
  for (long step = 0; step < max_steps; ++step) {
    const MatrixType k1 = Rhs(sys.state_weight, sys.drift, w, s);
    if (k1.norm() < Scalar(1e-12) * (Scalar(1) + s.norm())) {
      settled = true;
      break;
    }
    const MatrixType k2 = Rhs(sys.state_weight, sys.drift, w,
                              MatrixType(s + h / 2 * k1));
    const MatrixType k3 = Rhs(sys.state_weight, sys.drift, w,
                              MatrixType(s + h / 2 * k2));
    const MatrixType k4 =
        Rhs(sys.state_weight, sys.drift, w, MatrixType(s + h * k3));
    s = riccati_detail::Symmetrized(
        MatrixType(s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)));
    if (!s.allFinite() || s.norm() > blowup) {
      std::ostringstream os;
      os << "Riccati integration diverged for phi = " << phi
         << " (risk-sensitivity breakdown)";
      throw BreakdownError(os.str());
    }
  }

  // Newton polish: (A + W S)^T dS + dS (A + W S) = -residual.
  Scalar residual = Rhs(sys.state_weight, sys.drift, w, s).norm();
  for (int iter = 0; iter < 20; ++iter) {
    if (residual <= Scalar(1e-14) * (Scalar(1) + s.norm())) break;
    const MatrixType closed = sys.drift + w * s;
    const MatrixType delta = riccati_detail::SolveLyapunov(
        closed, MatrixType(-Rhs(sys.state_weight, sys.drift, w, s)));
    const MatrixType next = riccati_detail::Symmetrized(MatrixType(s + delta));
    const Scalar next_residual =
        Rhs(sys.state_weight, sys.drift, w, next).norm();
    if (!(next_residual < residual)) break;
    s = next;
    residual = next_residual;
  }

  const MatrixType closed = sys.drift + w * s;
  Eigen::EigenSolver<MatrixType> eig(closed);
  const Scalar max_real = eig.eigenvalues().real().maxCoeff();
  if (!(max_real < 0) ||
      residual > Scalar(1e-9) * (Scalar(1) + s.norm()) ||
      (!settled && residual > Scalar(1e-9))) {
    std::ostringstream os;
    os << "no stabilizing Riccati solution for phi = " << phi
       << " (closed-loop max Re(lambda) = " << max_real
       << ", residual = " << residual << ")";
    throw NonStabilizing(os.str());
  }
  return MakeRiccatiSolution(sys, phi, s);
}

// Stable invariant subspace of the Hamiltonian [[A, W], [-Q, -A^T]].
// Independent of the integration route above; used as a cross-check.
template <typename Scalar>
typename BasicLqSystem<Scalar>::MatrixType SolveRiccatiHamiltonian(
    const BasicLqSystem<Scalar>& sys, Scalar phi) {
  using MatrixType = typename BasicLqSystem<Scalar>::MatrixType;
  using Complex = std::complex<Scalar>;
  using ComplexMatrix =
      Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic>;
  sys.Validate();
  const auto n = sys.state_dim();
  MatrixType ham(2 * n, 2 * n);
  ham << sys.drift, QuadraticWeight(sys, phi), -sys.state_weight,
      -sys.drift.transpose();
  Eigen::ComplexEigenSolver<MatrixType> eig(ham);
  ComplexMatrix basis(2 * n, n);
  Eigen::Index found = 0;
  for (Eigen::Index i = 0; i < 2 * n; ++i) {
    if (eig.eigenvalues()[i].real() < 0) {
      if (found == n) break;
      basis.col(found++) = eig.eigenvectors().col(i);
    }
  }
  if (found != n) {
    throw NonStabilizing("Hamiltonian has eigenvalues on the imaginary axis");
  }
  const ComplexMatrix top = basis.topRows(n);
  const ComplexMatrix bottom = basis.bottomRows(n);
  const ComplexMatrix s =
      top.transpose().fullPivLu().solve(bottom.transpose()).transpose();
  return riccati_detail::Symmetrized(MatrixType(s.real()));
}

// -dS/dt = Q + A^T S + S A + S W S, S(T) = M; -dc/dt = 1/2 tr(S Sigma),
// c(T) = 0. Classical RK4 backward on a uniform grid.
template <typename Scalar>
BasicDifferentialRiccatiSolution<Scalar> SolveDifferentialRiccati(
    const BasicLqSystem<Scalar>& sys, Scalar phi, Scalar horizon,
    const typename BasicLqSystem<Scalar>::MatrixType& terminal,
    Scalar dt_ode = 0) {
  using MatrixType = typename BasicLqSystem<Scalar>::MatrixType;
  using riccati_detail::Rhs;
  sys.Validate();
  if (!(horizon > 0)) throw ConfigError("horizon must be positive");
  const auto n = sys.state_dim();
  if (terminal.rows() != n || terminal.cols() != n) {
    throw DimensionError("terminal weight must be n x n");
  }
  if (!(dt_ode > 0)) dt_ode = std::min<Scalar>(Scalar(1e-3), horizon / 2000);
  const long steps = std::max<long>(
      1, static_cast<long>(std::ceil(horizon / dt_ode - Scalar(1e-9))));
  const Scalar h = horizon / static_cast<Scalar>(steps);
  const MatrixType w = QuadraticWeight(sys, phi);
  const MatrixType sigma = sys.NoiseCovariance();

  BasicDifferentialRiccatiSolution<Scalar> out;
  out.times.resize(steps + 1);
  out.cost_to_go.resize(steps + 1);
  out.offset.resize(steps + 1);
  for (long i = 0; i <= steps; ++i) out.times[i] = h * static_cast<Scalar>(i);
  out.times[steps] = horizon;

  MatrixType s = terminal;
  Scalar c = 0;
  out.cost_to_go[steps] = s;
  out.offset[steps] = c;
  auto dc = [&](const MatrixType& sm) { return (sm * sigma).trace() / 2; };
  for (long i = steps; i > 0; --i) {
    const MatrixType k1 = Rhs(sys.state_weight, sys.drift, w, s);
    const MatrixType s2 = s + h / 2 * k1;
    const MatrixType k2 = Rhs(sys.state_weight, sys.drift, w, s2);
    const MatrixType s3 = s + h / 2 * k2;
    const MatrixType k3 = Rhs(sys.state_weight, sys.drift, w, s3);
    const MatrixType s4 = s + h * k3;
    const MatrixType k4 = Rhs(sys.state_weight, sys.drift, w, s4);
    c += h / 6 * (dc(s) + 2 * dc(s2) + 2 * dc(s3) + dc(s4));
    s = riccati_detail::Symmetrized(
        MatrixType(s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)));
    if (!s.allFinite() || s.norm() > Scalar(1e8)) {
      std::ostringstream os;
      os << "differential Riccati blew up at t = " << out.times[i - 1]
         << " for phi = " << phi;
      throw BreakdownError(os.str());
    }
    out.cost_to_go[i - 1] = s;
    out.offset[i - 1] = c;
  }
  return out;
}

// 1/2 x^T S(t) x + c(t) with S and c linearly interpolated in t.
template <typename Scalar, typename Derived>
Scalar LqFiniteHorizonValue(
    const BasicDifferentialRiccatiSolution<Scalar>& sol, Scalar t,
    const Eigen::MatrixBase<Derived>& x) {
  const auto& times = sol.times;
  if (!(t >= times.front() - Scalar(1e-12)) ||
      !(t <= times.back() + Scalar(1e-12))) {
    std::ostringstream os;
    os << "time " << t << " outside [0, " << times.back() << "]";
    throw ConfigError(os.str());
  }
  if (x.size() != sol.cost_to_go.front().rows()) {
    throw DimensionError("state dimension mismatch");
  }
  const auto upper = std::upper_bound(times.begin(), times.end(), t);
  std::size_t hi = static_cast<std::size_t>(upper - times.begin());
  hi = std::clamp<std::size_t>(hi, 1, times.size() - 1);
  const std::size_t lo = hi - 1;
  const Scalar span = times[hi] - times[lo];
  const Scalar frac = std::clamp<Scalar>((t - times[lo]) / span, 0, 1);
  const auto s = (1 - frac) * sol.cost_to_go[lo] + frac * sol.cost_to_go[hi];
  const Scalar c = (1 - frac) * sol.offset[lo] + frac * sol.offset[hi];
  return x.dot(s * x) / 2 + c;
}

template <typename Scalar>
struct BasicStationaryValues {
  Scalar v = 0;  // 1/2 x^T S x
  Scalar z = 1;  // exp((phi - psi) v)
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> control;  // -R^-1 B^T S x
};

template <typename Scalar, typename Derived>
BasicStationaryValues<Scalar> LqStationaryValues(
    const BasicRiccatiSolution<Scalar>& sol, Scalar exponent,
    const Eigen::MatrixBase<Derived>& x) {
  if (x.size() != sol.cost_to_go.rows()) {
    throw DimensionError("state dimension mismatch");
  }
  BasicStationaryValues<Scalar> out;
  out.v = x.dot(sol.cost_to_go * x) / 2;
  out.z = std::exp(exponent * out.v);
  out.control = -(sol.gain * x);
  return out;
}

// 0 = Q + A^T S + S A + exponent S Sigma S: the Riccati equation of the
// transformed (uncontrolled) problem. Under B R^-1 B^T = psi Sigma it has the
// same solution as SolveAlgebraicRiccati at phi = exponent + psi.
template <typename Scalar>
BasicRiccatiSolution<Scalar> SolveUncontrolledRiccati(
    const BasicLqSystem<Scalar>& sys, Scalar exponent) {
  using MatrixType = typename BasicLqSystem<Scalar>::MatrixType;
  BasicLqSystem<Scalar> free = sys;
  free.control = MatrixType::Zero(sys.state_dim(), 1);
  free.control_weight = MatrixType::Identity(1, 1);
  return SolveAlgebraicRiccati(free, exponent);
}

using LqSystem = BasicLqSystem<double>;
using RiccatiSolution = BasicRiccatiSolution<double>;
using DifferentialRiccatiSolution = BasicDifferentialRiccatiSolution<double>;
using StationaryValues = BasicStationaryValues<double>;

}  // namespace rspic
