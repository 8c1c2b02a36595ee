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

#include "rspic/stationary_fit.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "rspic/risk.hpp"

namespace rspic {

namespace {

int FeatureCount(Eigen::Index n) {
  return static_cast<int>(n * (n + 1) / 2 + 1);
}

// [1/2 x_i^2 (i), x_i x_j (i<j), 1] so that features . beta equals
// 1/2 x^T Theta x + theta0 with beta = [Theta_ii, Theta_ij, theta0].
Vector Features(const Vector& x) {
  const auto n = x.size();
  Vector out(FeatureCount(n));
  Eigen::Index c = 0;
  for (Eigen::Index i = 0; i < n; ++i) out[c++] = 0.5 * x[i] * x[i];
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) out[c++] = x[i] * x[j];
  }
  out[c] = 1.0;
  return out;
}

QuadraticLogZParams Unpack(const Vector& beta, Eigen::Index n) {
  QuadraticLogZParams p;
  p.theta = Matrix::Zero(n, n);
  Eigen::Index c = 0;
  for (Eigen::Index i = 0; i < n; ++i) p.theta(i, i) = beta[c++];
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      p.theta(i, j) = beta[c];
      p.theta(j, i) = beta[c];
      ++c;
    }
  }
  p.offset = beta[c];
  return p;
}

std::string FormatDouble(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Quasi-Poisson log-link regression: minimizes
//   sum_i exp(A f_i.b) - t_i A f_i.b + ridge/2 |b|^2
// with t_i = exp(log_t_i). Newton with backtracking, warm-started at `beta`.
Vector LogLinkRegression(const Matrix& features, const Vector& log_t,
                         double exponent, double ridge_rel, Vector beta) {
  const auto m = features.rows();
  const auto p = features.cols();
  // Targets are rescaled by exp(-shift); the offset absorbs it at the end.
  const double shift = log_t.maxCoeff();
  const Eigen::ArrayXd t = (log_t.array() - shift).exp();
  beta[p - 1] -= shift / exponent;

  auto objective = [&](const Vector& b) {
    const Eigen::ArrayXd eta = exponent * (features * b).array();
    return ((eta.exp() - t * eta).sum()) / static_cast<double>(m);
  };
  double current = objective(beta);
  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::ArrayXd eta = exponent * (features * beta).array();
    const Eigen::ArrayXd mu = eta.exp();
    const Vector grad = exponent * features.transpose() *
                        (mu - t).matrix() / static_cast<double>(m);
    Matrix hess = exponent * exponent *
                  (features.transpose() * mu.matrix().asDiagonal() * features) /
                  static_cast<double>(m);
    const double ridge = ridge_rel * hess.trace() / static_cast<double>(p);
    hess.diagonal().array() += ridge;
    const Vector delta = hess.ldlt().solve(-grad);
    double scale = 1.0;
    Vector next = beta + delta;
    double value = objective(next);
    while (!(value <= current) && scale > 1e-8) {
      scale *= 0.5;
      next = beta + scale * delta;
      value = objective(next);
    }
    if (!(value <= current)) break;
    beta = next;
    current = value;
    if ((scale * delta).norm() < 1e-13 * (1.0 + beta.norm())) break;
  }
  beta[p - 1] += shift / exponent;
  return beta;
}

}  // namespace

void SegmentDataset::Validate() const {
  const auto m = size();
  if (starts.cols() != m || ends.cols() != m || starts.rows() != ends.rows()) {
    throw DimensionError("segment dataset columns are inconsistent");
  }
  if (!(length > 0.0)) throw ConfigError("segment length must be positive");
  if (m > 0 && q_integrals.minCoeff() < 0.0) {
    throw AssumptionViolation("segment q integrals must be nonnegative");
  }
}

void SegmentDataset::WriteCsv(std::ostream& out) const {
  const auto n = state_dim();
  for (Eigen::Index i = 0; i < n; ++i) out << "x_start_" << i << ',';
  out << "q_integral";
  for (Eigen::Index i = 0; i < n; ++i) out << ",x_end_" << i;
  out << ",L\n";
  for (Eigen::Index k = 0; k < size(); ++k) {
    for (Eigen::Index i = 0; i < n; ++i) out << FormatDouble(starts(i, k)) << ',';
    out << FormatDouble(q_integrals[k]);
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << FormatDouble(ends(i, k));
    out << ',' << FormatDouble(length) << '\n';
  }
}

SegmentDataset SegmentDataset::ReadCsv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty segment CSV");
  const auto columns = std::count(line.begin(), line.end(), ',') + 1;
  if (columns < 4 || (columns - 2) % 2 != 0) {
    throw ConfigError("segment CSV header has an unexpected column count");
  }
  const auto n = static_cast<Eigen::Index>((columns - 2) / 2);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<long>(row.size()) != columns) {
      throw ConfigError("segment CSV row has the wrong number of fields");
    }
    rows.push_back(std::move(row));
  }
  SegmentDataset ds;
  const auto m = static_cast<Eigen::Index>(rows.size());
  ds.starts.resize(n, m);
  ds.ends.resize(n, m);
  ds.q_integrals.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& row = rows[static_cast<std::size_t>(k)];
    for (Eigen::Index i = 0; i < n; ++i) ds.starts(i, k) = row[i];
    ds.q_integrals[k] = row[n];
    for (Eigen::Index i = 0; i < n; ++i) ds.ends(i, k) = row[n + 1 + i];
    ds.length = row[2 * n + 1];
    if (std::abs(ds.length - rows.front()[2 * n + 1]) > 1e-12 * ds.length) {
      throw ConfigError("segment lengths differ between rows");
    }
  }
  ds.Validate();
  return ds;
}

SegmentDataset BuildSegments(const TrajectoryBatch& batch, const StateCost& q,
                             int length_steps, int stride) {
  if (length_steps < 1 || stride < 1) {
    throw ConfigError("segment length and stride must be positive");
  }
  const int steps = batch.steps();
  const double dt = batch.dt();
  const int per_path =
      steps >= length_steps ? (steps - length_steps) / stride + 1 : 0;
  const auto n = batch.paths() > 0 ? batch.states.front().rows() : 0;
  const Eigen::Index m = static_cast<Eigen::Index>(per_path) * batch.paths();

  SegmentDataset ds;
  ds.length = length_steps * dt;
  ds.starts.resize(n, m);
  ds.ends.resize(n, m);
  ds.q_integrals.resize(m);
  Eigen::Index row = 0;
  Vector x(n);
  std::vector<double> rates(static_cast<std::size_t>(steps));
  for (const Matrix& path : batch.states) {
    for (int j = 0; j < steps; ++j) {
      x = path.col(j);
      rates[static_cast<std::size_t>(j)] = q ? q(x) : 0.0;
    }
    for (int s = 0; s + length_steps <= steps; s += stride) {
      double acc = 0.0;
      for (int j = s; j < s + length_steps; ++j) {
        acc += rates[static_cast<std::size_t>(j)];
      }
      ds.starts.col(row) = path.col(s);
      ds.ends.col(row) = path.col(s + length_steps);
      ds.q_integrals[row] = acc * dt;
      ++row;
    }
  }
  return ds;
}

FitReport FitLogQuadratic(const SegmentDataset& ds, double exponent,
                          double chi, const FitOptions& options) {
  CheckExponent(exponent);
  ds.Validate();
  const auto n = ds.state_dim();
  const auto m = ds.size();
  const int p = FeatureCount(n);
  if (m < 10 * p) {
    std::ostringstream os;
    os << "dataset has " << m << " segments; at least " << 10 * p
       << " are needed for " << p << " parameters";
    throw ConfigError(os.str());
  }

  Matrix features(m, p);
  for (Eigen::Index k = 0; k < m; ++k) {
    features.row(k) = Features(ds.starts.col(k)).transpose();
  }
  const Matrix gram = features.transpose() * features / static_cast<double>(m);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) {
    std::ostringstream os;
    os << "feature Gram matrix is ill-conditioned (cond = "
       << (lo > 0.0 ? hi / lo : INFINITY) << ")";
    throw IllConditioned(os.str());
  }
  const double ridge_rel = options.ridge >= 0.0 ? options.ridge : 1e-6;
  Matrix ls_normal = gram;
  ls_normal.diagonal().array() += ridge_rel * gram.trace() / p;
  const auto ls_solver = ls_normal.ldlt();

  const double drift = chi * ds.length;
  Vector beta = Vector::Zero(p);
  Vector log_t(m);
  FitReport report;
  for (int iter = 1; iter <= options.max_iters; ++iter) {
    const QuadraticLogZParams current = Unpack(beta, n);
    for (Eigen::Index k = 0; k < m; ++k) {
      const Vector xe = ds.ends.col(k);
      log_t[k] = exponent * (ds.q_integrals[k] - drift +
                             0.5 * xe.dot(current.theta * xe));
    }
    Vector next;
    if (options.method == FitMethod::kLogLink) {
      next = LogLinkRegression(features, log_t, exponent, ridge_rel, beta);
    } else {
      next = ls_solver.solve(features.transpose() * (log_t / exponent) /
                             static_cast<double>(m));
    }
    report.last_change = (next - beta).norm();
    beta = next;
    report.iterations = iter;
    if (report.last_change < options.tol) {
      report.params = Unpack(beta, n);
      return report;
    }
  }
  throw NonConvergence("stationary fit did not converge in " +
                           std::to_string(options.max_iters) + " iterations",
                       report.last_change);
}

FitQuality EvaluateFit(const QuadraticLogZParams& params,
                       const SegmentDataset& ds, double exponent, double chi,
                       const std::optional<Matrix>& oracle) {
  FitQuality out;
  const auto m = ds.size();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    const Vector xs = ds.starts.col(k);
    const Vector xe = ds.ends.col(k);
    const double r = exponent * (params.Value(xs) -
                                 (ds.q_integrals[k] - chi * ds.length) -
                                 params.Value(xe));
    acc += r * r;
  }
  out.mean_sq_residual = m > 0 ? acc / static_cast<double>(m) : 0.0;
  if (oracle) {
    out.vs_oracle = (params.theta - *oracle).norm() / oracle->norm();
  }
  return out;
}

}  // namespace rspic
