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

#include "rspic/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "rspic/estimators.hpp"
#include "rspic/policy.hpp"
#include "rspic/stationary_fit.hpp"

namespace rspic {

namespace {

using nlohmann::json;

const std::map<std::string, ExperimentKind>& KindNames() {
  static const std::map<std::string, ExperimentKind> names = {
      {"fh-identity", ExperimentKind::kFhIdentity},
      {"avg-chi", ExperimentKind::kAvgChi},
      {"avg-diffvalue", ExperimentKind::kAvgDiffValue},
      {"disc-bound", ExperimentKind::kDiscBound},
      {"jensen", ExperimentKind::kJensen},
      {"recurrence", ExperimentKind::kRecurrence},
      {"fit-offline", ExperimentKind::kFitOffline},
      {"lq-oracle", ExperimentKind::kLqOracle},
      {"policy-loop", ExperimentKind::kPolicyLoop},
      {"risk-expansion", ExperimentKind::kRiskExpansion},
  };
  return names;
}

[[noreturn]] void FieldError(const std::string& field, const std::string& msg) {
  throw ConfigError(field + ": " + msg);
}

double ReadNumber(const json& j, const std::string& field) {
  if (!j.is_number()) FieldError(field, "expected a number");
  return j.get<double>();
}

const json* Find(const json& obj, const std::string& key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

const json& Require(const json& obj, const std::string& key,
                    const std::string& field) {
  const json* j = Find(obj, key);
  if (j == nullptr) FieldError(field, "required field is missing");
  return *j;
}

// A number is a 1 x 1 matrix; otherwise a list of rows.
Matrix ReadMatrix(const json& j, const std::string& field) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array() || j.empty()) FieldError(field, "expected a matrix");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (!j[0].is_array() || j[0].empty()) {
    FieldError(field, "expected a list of rows");
  }
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      FieldError(field, "rows must have equal length");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = ReadNumber(row[static_cast<std::size_t>(c)], field);
    }
  }
  return m;
}

// A number is a 1-vector.
Vector ReadVector(const json& j, const std::string& field) {
  if (j.is_number()) return Vector::Constant(1, j.get<double>());
  if (!j.is_array() || j.empty()) FieldError(field, "expected a vector");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = ReadNumber(j[i], field);
  }
  return v;
}

std::vector<double> ReadList(const json& j, const std::string& field) {
  if (j.is_number()) return {j.get<double>()};
  if (!j.is_array() || j.empty()) FieldError(field, "expected a list");
  std::vector<double> out;
  for (const json& e : j) out.push_back(ReadNumber(e, field));
  return out;
}

double Option(const ExperimentConfig& cfg, const std::string& key,
              double fallback) {
  const json* j = Find(cfg.options, key);
  return j == nullptr ? fallback : ReadNumber(*j, "options." + key);
}

std::vector<double> OptionList(const ExperimentConfig& cfg,
                               const std::string& key,
                               std::vector<double> fallback) {
  const json* j = Find(cfg.options, key);
  return j == nullptr ? fallback : ReadList(*j, "options." + key);
}

int OptionInt(const ExperimentConfig& cfg, const std::string& key,
              int fallback) {
  const double v = Option(cfg, key, fallback);
  if (v != std::floor(v) || std::abs(v) > 2e9) {
    FieldError("options." + key, "expected an integer");
  }
  return static_cast<int>(v);
}

const std::map<ExperimentKind, std::set<std::string>>& AllowedOptions() {
  static const std::map<ExperimentKind, std::set<std::string>> allowed = {
      {ExperimentKind::kFhIdentity, {"rel_tol", "se_mult"}},
      {ExperimentKind::kAvgChi, {"rel_tol"}},
      {ExperimentKind::kAvgDiffValue, {"rel_tol", "x_ref", "chi"}},
      {ExperimentKind::kDiscBound, {"tail_eps", "se_mult"}},
      {ExperimentKind::kJensen,
       {"betas", "replicates", "restart_time", "tail_eps", "min_pass"}},
      {ExperimentKind::kRecurrence, {"segments", "chi_shift", "se_mult"}},
      {ExperimentKind::kFitOffline,
       {"segments_per_path", "length", "stride", "start", "method",
        "max_iters", "tol", "ridge", "chi", "rel_tol", "const_tol"}},
      {ExperimentKind::kLqOracle, {"tanh_horizon", "dre_horizon"}},
      {ExperimentKind::kPolicyLoop,
       {"policy_paths", "policy_dt", "policy_horizon", "policy_seed", "step",
        "grid_tol", "slope_points", "slope_tol", "value_tol"}},
      {ExperimentKind::kRiskExpansion, {"phis", "min_ratio"}},
  };
  return allowed;
}

bool NeedsMc(ExperimentKind kind) { return kind != ExperimentKind::kLqOracle; }

std::string FormatDouble(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string FormatPoint(const Vector& x) {
  std::string out;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (i > 0) out += ' ';
    out += FormatDouble(x[i]);
  }
  return out;
}

double QuadraticForm(const Matrix& m, const Vector& x) {
  return 0.5 * x.dot(m * x);
}

DiffusionModel ModelOf(const ExperimentConfig& cfg) {
  return DiffusionModel::Linear(cfg.system.drift, cfg.system.control,
                                cfg.system.noise);
}

StateCost StateCostOf(const ExperimentConfig& cfg) {
  const Matrix q = cfg.system.state_weight;
  return [q](const Vector& x) { return QuadraticForm(q, x); };
}

RiskCostModel CostOf(const ExperimentConfig& cfg, bool with_terminal) {
  RiskCostModel cost;
  cost.state_cost = StateCostOf(cfg);
  cost.control_weight = cfg.system.control_weight;
  cost.discount = cfg.discount;
  if (with_terminal && cfg.terminal.size() > 0 && !cfg.terminal.isZero(0.0)) {
    const Matrix m = cfg.terminal;
    cost.terminal_cost = [m](const Vector& x) { return QuadraticForm(m, x); };
  }
  return cost;
}

McConfig WithWorkers(McConfig mc, std::optional<int> workers) {
  if (workers) mc.worker_hint = workers;
  return mc;
}

ResultRow MakeRow(const std::string& label, const Vector& x, double param,
                  const ValueEstimate& est) {
  ResultRow row;
  row.label = label;
  row.point = FormatPoint(x);
  row.param = param;
  row.estimate = est.value;
  row.std_error = est.std_error;
  row.ess = est.ess;
  return row;
}

ResultRow MakeRow(const std::string& label, const Vector& x, double param,
                  double estimate) {
  ResultRow row;
  row.label = label;
  row.point = FormatPoint(x);
  row.param = param;
  row.estimate = estimate;
  return row;
}

void SetOracle(ResultRow& row, double oracle, bool pass) {
  row.oracle = oracle;
  row.has_oracle = true;
  row.pass = pass;
}

void NoteLowEss(RunResult& result, const ValueEstimate& est,
                const std::string& where) {
  if (est.low_ess) {
    result.notes.push_back("low effective sample size at " + where + ": " +
                           FormatDouble(est.ess));
  }
}

// Finite-horizon Feynman-Kac value against the differential Riccati oracle.
// One batch of costs per state serves every phi.
void RunFhIdentity(const ExperimentConfig& cfg, const DerivedQuantities& d,
                   std::optional<int> workers, RunResult& result) {
  const double rel_tol = Option(cfg, "rel_tol", 0.02);
  const double se_mult = Option(cfg, "se_mult", 3.0);
  const auto model = ModelOf(cfg);
  const auto cost = CostOf(cfg, true);
  const McConfig mc = WithWorkers(cfg.mc, workers);
  PathCostSpec spec;
  spec.state_cost = cost.state_cost;
  spec.terminal_cost = cost.terminal_cost;

  std::vector<DifferentialRiccatiSolution> oracles;
  for (const RiskParams& risk : d.risks) {
    oracles.push_back(SolveDifferentialRiccati(cfg.system, risk.phi,
                                               cfg.horizon, cfg.terminal));
  }
  for (const Vector& x : cfg.points) {
    const auto samples =
        SamplePathCosts(model, x, mc, spec, GeneratedNoise(mc.seed, mc.dt));
    const Vector costs = samples.costs.col(0);
    for (std::size_t i = 0; i < d.risks.size(); ++i) {
      const RiskParams& risk = d.risks[i];
      const ValueEstimate est = ExponentialAverage(costs, risk.exponent);
      const double oracle = LqFiniteHorizonValue(oracles[i], 0.0, x);
      ResultRow row = MakeRow("value", x, risk.phi, est);
      const double tol =
          std::max(se_mult * est.std_error, rel_tol * std::abs(oracle));
      SetOracle(row, oracle, std::abs(est.value - oracle) <= tol);
      result.rows.push_back(row);
      NoteLowEss(result, est, "x = " + row.point);
    }
  }
}

void RunAvgChi(const ExperimentConfig& cfg, const DerivedQuantities& d,
               std::optional<int> workers, RunResult& result) {
  const double rel_tol = Option(cfg, "rel_tol", 0.05);
  const auto model = ModelOf(cfg);
  const McConfig mc = WithWorkers(cfg.mc, workers);
  const StateCost q = StateCostOf(cfg);
  const Vector x = cfg.points.front();
  for (const RiskParams& risk : d.risks) {
    const ValueEstimate est =
        EstimateChi(model, q, risk.exponent, cfg.t1, cfg.t2, x, mc);
    const double oracle = SolveAlgebraicRiccati(cfg.system, risk.phi).chi;
    ResultRow row = MakeRow("chi", x, risk.exponent, est);
    SetOracle(row, oracle,
              std::abs(est.value - oracle) <= rel_tol * std::abs(oracle));
    result.rows.push_back(row);
  }
}

void RunAvgDiffValue(const ExperimentConfig& cfg, const DerivedQuantities& d,
                     std::optional<int> workers, RunResult& result) {
  const double rel_tol = Option(cfg, "rel_tol", 0.10);
  const auto model = ModelOf(cfg);
  const McConfig mc = WithWorkers(cfg.mc, workers);
  const StateCost q = StateCostOf(cfg);
  const Eigen::Index n = cfg.system.state_dim();
  Vector x_ref = Vector::Zero(n);
  if (const json* j = Find(cfg.options, "x_ref")) {
    x_ref = ReadVector(*j, "options.x_ref");
    if (x_ref.size() != n) FieldError("options.x_ref", "wrong dimension");
  }
  for (const RiskParams& risk : d.risks) {
    const RiccatiSolution sol = SolveAlgebraicRiccati(cfg.system, risk.phi);
    const double chi = Option(cfg, "chi", sol.chi);
    for (const Vector& x : cfg.points) {
      const ValueEstimate est = EstimateDiffValue(
          model, q, risk.exponent, x, x_ref, chi, cfg.horizon, mc);
      const double oracle =
          QuadraticForm(sol.cost_to_go, x) - QuadraticForm(sol.cost_to_go, x_ref);
      ResultRow row = MakeRow("diff_value", x, risk.exponent, est);
      SetOracle(row, oracle,
                std::abs(est.value - oracle) <= rel_tol * std::abs(oracle));
      result.rows.push_back(row);

      // Swapping the legs must negate the estimate exactly.
      const ValueEstimate swapped = EstimateDiffValue(
          model, q, risk.exponent, x_ref, x, chi, cfg.horizon, mc);
      ResultRow anti = MakeRow("antisymmetry", x, risk.exponent,
                               est.value + swapped.value);
      SetOracle(anti, 0.0, est.value == -swapped.value);
      result.rows.push_back(anti);
    }
  }
}

void RunDiscBound(const ExperimentConfig& cfg, const DerivedQuantities& d,
                  std::optional<int> workers, RunResult& result) {
  const double tail_eps = Option(cfg, "tail_eps", 1e-4);
  const double se_mult = Option(cfg, "se_mult", 2.0);
  const auto model = ModelOf(cfg);
  const McConfig mc = WithWorkers(cfg.mc, workers);
  const RiskCostModel cost = CostOf(cfg, false);
  for (const RiskParams& risk : d.risks) {
    const Matrix gain = SolveAlgebraicRiccati(cfg.system, risk.phi).gain;
    const Policy policy = [gain](double, const Vector& x) -> Vector {
      return -(gain * x);
    };
    for (std::size_t i = 0; i < cfg.points.size(); ++i) {
      const Vector& x = cfg.points[i];
      const DiscountedBound bound = EstimateDiscountedLowerBound(
          model, cost.state_cost, risk.exponent, cfg.discount, x, mc,
          tail_eps);
      const ValueEstimate value = EstimateValueUnderPolicy(
          model, cost, risk.phi, policy, x, bound.horizon, mc);
      ResultRow lower = MakeRow("lower_bound", x, risk.phi, bound.estimate);
      result.rows.push_back(lower);

      // The bound carries a truncation bias of at most tail_bias downward.
      const double gap = value.value - bound.estimate.value;
      const double se = std::hypot(value.std_error, bound.estimate.std_error);
      ResultRow row = MakeRow("policy_value", x, risk.phi, value);
      SetOracle(row, bound.estimate.value, gap > -se_mult * se);
      result.rows.push_back(row);

      ResultRow margin = MakeRow("gap", x, risk.phi, gap);
      margin.std_error = se;
      // Strictness is asked for at the largest state only.
      margin.pass = i + 1 < cfg.points.size() || gap > se_mult * se;
      result.rows.push_back(margin);
    }
  }
}

void RunJensen(const ExperimentConfig& cfg, const DerivedQuantities& d,
               std::optional<int> workers, RunResult& result) {
  const auto betas = OptionList(cfg, "betas", {0.5, 2.0, 1.0});
  const int replicates = OptionInt(cfg, "replicates", 20);
  const int min_pass = OptionInt(cfg, "min_pass", replicates - 1);
  const double restart = Option(cfg, "restart_time", 1.0);
  const double tail_eps = Option(cfg, "tail_eps", 1e-4);
  if (replicates < 1) FieldError("options.replicates", "must be positive");
  const auto model = ModelOf(cfg);
  const StateCost q = StateCostOf(cfg);
  for (const RiskParams& risk : d.risks) {
    for (const Vector& x : cfg.points) {
      for (const double beta : betas) {
        int ok = 0;
        double mean_gap = 0.0;
        for (int rep = 0; rep < replicates; ++rep) {
          McConfig mc = WithWorkers(cfg.mc, workers);
          mc.seed = cfg.mc.seed + static_cast<std::uint64_t>(rep);
          const JensenGap gap = ComputeJensenGap(
              model, q, risk.exponent, cfg.discount, restart, beta, x, mc,
              tail_eps);
          ok += gap.direction_ok ? 1 : 0;
          mean_gap += (gap.lhs - gap.rhs) / replicates;
        }
        ResultRow row = MakeRow("direction_ok", x, beta, ok);
        row.pass = beta == 1.0 ? ok == replicates : ok >= min_pass;
        result.rows.push_back(row);
        result.rows.push_back(MakeRow("mean_gap", x, beta, mean_gap));
      }
    }
  }
}

void RunRecurrence(const ExperimentConfig& cfg, const DerivedQuantities& d,
                   std::optional<int> workers, RunResult& result) {
  const auto segments = OptionList(cfg, "segments", {0.25, 0.5});
  const double shift = Option(cfg, "chi_shift", 0.1);
  const double se_mult = Option(cfg, "se_mult", 3.0);
  const auto model = ModelOf(cfg);
  const McConfig mc = WithWorkers(cfg.mc, workers);
  const StateCost q = StateCostOf(cfg);
  for (const RiskParams& risk : d.risks) {
    const RiccatiSolution sol = SolveAlgebraicRiccati(cfg.system, risk.phi);
    const double a = risk.exponent;
    const auto z = [&](const Vector& y) {
      return LqStationaryValues(sol, a, y).z;
    };
    for (const double length : segments) {
      for (const Vector& x : cfg.points) {
        const RecurrenceResidual exact =
            ComputeRecurrenceResidual(model, q, a, sol.chi, z, length, x, mc);
        ResultRow row = MakeRow("residual", x, length, exact.residual_rel);
        row.std_error = exact.std_error;
        SetOracle(row, 0.0,
                  std::abs(exact.residual_rel) <= se_mult * exact.std_error);
        result.rows.push_back(row);

        const RecurrenceResidual off = ComputeRecurrenceResidual(
            model, q, a, sol.chi + shift, z, length, x, mc);
        ResultRow pert = MakeRow("perturbed_residual", x, length,
                                 off.residual_rel);
        pert.std_error = off.std_error;
        pert.pass = std::abs(off.residual_rel) > se_mult * off.std_error;
        result.rows.push_back(pert);
      }
    }
  }
}

void RunFitOffline(const ExperimentConfig& cfg, const DerivedQuantities& d,
                   std::optional<int> workers, RunResult& result) {
  const int per_path = OptionInt(cfg, "segments_per_path", 100);
  const double length = Option(cfg, "length", 0.25);
  const double rel_tol = Option(cfg, "rel_tol", 0.10);
  const double const_tol = Option(cfg, "const_tol", 1e-6);
  const auto model = ModelOf(cfg);
  const Eigen::Index n = cfg.system.state_dim();
  Vector start = Vector::Zero(n);
  if (const json* j = Find(cfg.options, "start")) {
    start = ReadVector(*j, "options.start");
    if (start.size() != n) FieldError("options.start", "wrong dimension");
  }
  const double steps_real = length / cfg.mc.dt;
  const int length_steps = static_cast<int>(std::lround(steps_real));
  if (length_steps < 1 || std::abs(steps_real - length_steps) > 1e-9 * steps_real) {
    FieldError("options.length", "must be a multiple of mc.dt");
  }
  const int stride = OptionInt(cfg, "stride", length_steps);
  FitOptions fit;
  fit.max_iters = OptionInt(cfg, "max_iters", fit.max_iters);
  fit.tol = Option(cfg, "tol", fit.tol);
  fit.ridge = Option(cfg, "ridge", fit.ridge);
  if (const json* j = Find(cfg.options, "method")) {
    const std::string method = j->is_string() ? j->get<std::string>() : "";
    if (method == "log-link") {
      fit.method = FitMethod::kLogLink;
    } else if (method == "log-surrogate") {
      fit.method = FitMethod::kLogSurrogate;
    } else {
      FieldError("options.method", "expected \"log-link\" or \"log-surrogate\"");
    }
  }

  McConfig mc = WithWorkers(cfg.mc, workers);
  mc.steps = (per_path - 1) * stride + length_steps;
  const StateCost q = StateCostOf(cfg);
  const TrajectoryBatch batch = SimulateUncontrolled(model, start, mc);
  const SegmentDataset ds = BuildSegments(batch, q, length_steps, stride);

  for (const RiskParams& risk : d.risks) {
    const RiccatiSolution sol = SolveAlgebraicRiccati(cfg.system, risk.phi);
    const double chi = Option(cfg, "chi", sol.chi);
    const FitReport report = FitLogQuadratic(ds, risk.exponent, chi, fit);
    const FitQuality quality =
        EvaluateFit(report.params, ds, risk.exponent, chi, sol.cost_to_go);
    const Vector origin = Vector::Zero(n);

    ResultRow theta = MakeRow("theta_norm", origin, risk.phi,
                              report.params.theta.norm());
    SetOracle(theta, sol.cost_to_go.norm(), *quality.vs_oracle <= rel_tol);
    theta.ess = static_cast<double>(ds.size());
    result.rows.push_back(theta);
    result.rows.push_back(
        MakeRow("theta_rel_error", origin, risk.phi, *quality.vs_oracle));
    result.rows.push_back(
        MakeRow("offset", origin, risk.phi, report.params.offset));
    result.rows.push_back(MakeRow("mean_sq_residual", origin, risk.phi,
                                  quality.mean_sq_residual));
    result.rows.push_back(
        MakeRow("iterations", origin, risk.phi, report.iterations));

    // q equal to chi everywhere: z = 1 is an exact fixed point.
    SegmentDataset flat = ds;
    flat.q_integrals.setConstant(chi * ds.length);
    const FitReport flat_fit = FitLogQuadratic(flat, risk.exponent, chi, fit);
    ResultRow constant = MakeRow("constant_q_theta_norm", origin, risk.phi,
                                 flat_fit.params.theta.norm());
    SetOracle(constant, 0.0, flat_fit.params.theta.norm() <= const_tol);
    result.rows.push_back(constant);
  }
}

// Closed-form scalar Riccati quantities for the checks below. With
// w = phi sigma^2 - b^2 / r and D = sqrt(a^2 - w q):
//   stationary root S = (-a - D) / w (S = -q / 2a when w = 0),
//   S(t) with S(T) = 0: q tanh(D tau) / (D - a tanh(D tau)), tau = T - t.
struct ScalarRiccati {
  double a, q, w, d;

  static ScalarRiccati Of(const LqSystem& sys, double phi) {
    ScalarRiccati s;
    s.a = sys.drift(0, 0);
    s.q = sys.state_weight(0, 0);
    s.w = phi * sys.NoiseCovariance()(0, 0) - sys.ControlAuthority()(0, 0);
    s.d = std::sqrt(s.a * s.a - s.w * s.q);
    return s;
  }
  double Stationary() const {
    return w == 0.0 ? -q / (2.0 * a) : (-a - d) / w;
  }
  double Transient(double tau) const {
    const double th = std::tanh(d * tau);
    return q * th / (d - a * th);
  }
};

// Risk-neutral LQG by Kleinman policy iteration from the zero gain; an
// independent route to the phi = 0 Riccati solution for Hurwitz drifts.
Matrix RiskNeutralLqg(const LqSystem& sys) {
  const Matrix& a = sys.drift;
  const Matrix& b = sys.control;
  Matrix gain = Matrix::Zero(b.cols(), a.rows());
  Matrix p = Matrix::Zero(a.rows(), a.cols());
  for (int iter = 0; iter < 100; ++iter) {
    const Matrix closed = a - b * gain;
    const Matrix rhs =
        sys.state_weight + gain.transpose() * sys.control_weight * gain;
    const Matrix next = riccati_detail::SolveLyapunov(closed, Matrix(-rhs));
    gain = sys.control_weight.llt().solve(b.transpose() * next);
    const double change = (next - p).norm();
    p = next;
    if (change < 1e-14 * (1.0 + p.norm())) break;
  }
  return p;
}

void RunLqOracle(const ExperimentConfig& cfg, const DerivedQuantities& d,
                 RunResult& result) {
  const double dre_horizon = Option(cfg, "dre_horizon", 20.0);
  const double tanh_horizon = Option(cfg, "tanh_horizon", 2.0);
  const Eigen::Index n = cfg.system.state_dim();
  const Vector origin = Vector::Zero(n);
  const bool scalar = n == 1 && cfg.system.control.cols() == 1 &&
                      cfg.system.noise.cols() == 1;
  constexpr double kRootTol = 1e-9;
  constexpr double kDreTol = 1e-6;

  for (const RiskParams& risk : d.risks) {
    const double phi = risk.phi;
    const RiccatiSolution sol = SolveAlgebraicRiccati(cfg.system, phi);
    const Matrix& s = sol.cost_to_go;

    ResultRow s_row = MakeRow("S", origin, phi, s.norm());
    ResultRow chi_row = MakeRow("chi", origin, phi, sol.chi);
    if (scalar) {
      const ScalarRiccati closed = ScalarRiccati::Of(cfg.system, phi);
      const double root = closed.Stationary();
      const double chi = 0.5 * root * cfg.system.NoiseCovariance()(0, 0);
      s_row.estimate = s(0, 0);
      SetOracle(s_row, root, std::abs(s(0, 0) - root) <= kRootTol);
      SetOracle(chi_row, chi, std::abs(sol.chi - chi) <= kRootTol);
    }
    result.rows.push_back(s_row);
    result.rows.push_back(chi_row);
    result.rows.push_back(MakeRow("residual", origin, phi, sol.residual));

    const Matrix hamiltonian = SolveRiccatiHamiltonian(cfg.system, phi);
    ResultRow ham = MakeRow("hamiltonian_diff", origin, phi,
                            (hamiltonian - s).norm());
    SetOracle(ham, 0.0, (hamiltonian - s).norm() <= kRootTol * (1 + s.norm()));
    result.rows.push_back(ham);

    const auto dre = SolveDifferentialRiccati(cfg.system, phi, dre_horizon,
                                              Matrix::Zero(n, n));
    const double dre_diff = (dre.cost_to_go.front() - s).norm();
    ResultRow dre_row = MakeRow("dre_diff", origin, dre_horizon, dre_diff);
    SetOracle(dre_row, 0.0, dre_diff <= kDreTol);
    result.rows.push_back(dre_row);

    if (scalar) {
      const ScalarRiccati closed = ScalarRiccati::Of(cfg.system, phi);
      const auto finite = SolveDifferentialRiccati(
          cfg.system, phi, tanh_horizon, Matrix::Zero(1, 1));
      const double expected = closed.Transient(tanh_horizon);
      ResultRow row = MakeRow("tanh", origin, tanh_horizon,
                              finite.cost_to_go.front()(0, 0));
      SetOracle(row, expected,
                std::abs(finite.cost_to_go.front()(0, 0) - expected) <= kDreTol);
      result.rows.push_back(row);
    }

    if (phi == 0.0) {
      Eigen::ComplexEigenSolver<Matrix> eig(cfg.system.drift);
      if (eig.eigenvalues().real().maxCoeff() < 0.0) {
        const Matrix lqg = RiskNeutralLqg(cfg.system);
        ResultRow row =
            MakeRow("lqg_diff", origin, phi, (lqg - s).norm());
        SetOracle(row, 0.0, (lqg - s).norm() <= kRootTol * (1 + s.norm()));
        result.rows.push_back(row);
      } else {
        result.notes.push_back(
            "drift is not Hurwitz; policy iteration check skipped");
      }
    }
  }
}

void RunPolicyLoop(const ExperimentConfig& cfg, const DerivedQuantities& d,
                   std::optional<int> workers, RunResult& result) {
  const double slope_tol = Option(cfg, "slope_tol", 0.10);
  const double value_tol = Option(cfg, "value_tol", 0.05);
  const auto slope_points = OptionList(cfg, "slope_points", {-2, -1, 1, 2});
  const auto model = ModelOf(cfg);
  const Eigen::Index n = cfg.system.state_dim();
  if (n != 1) {
    FieldError("system", "policy-loop slope fit supports scalar systems only");
  }
  PolicyCacheConfig cache;
  cache.paths = OptionInt(cfg, "policy_paths", cache.paths);
  cache.dt = Option(cfg, "policy_dt", cache.dt);
  cache.horizon = Option(cfg, "policy_horizon", cache.horizon);
  cache.seed = static_cast<std::uint64_t>(
      Option(cfg, "policy_seed", static_cast<double>(cfg.mc.seed + 1)));
  cache.step = Option(cfg, "step", cache.step);
  cache.grid_tol = Option(cfg, "grid_tol", cache.grid_tol);
  cache.worker_hint = workers;
  const McConfig mc = WithWorkers(cfg.mc, workers);
  const RiskCostModel cost = CostOf(cfg, true);

  for (const RiskParams& risk : d.risks) {
    const RiccatiSolution sol = SolveAlgebraicRiccati(cfg.system, risk.phi);
    const auto policy = MakePicPolicy(model, CostOf(cfg, false), risk,
                                      PicMode::kAverageCost, cache);
    double xu = 0.0;
    double xx = 0.0;
    for (const double s : slope_points) {
      const Vector x = Vector::Constant(1, s);
      const Vector u = (*policy)(0.0, x);
      xu += s * u[0];
      xx += s * s;
    }
    const double slope = -xu / xx;
    const double gain = sol.gain(0, 0);
    ResultRow slope_row = MakeRow("gain", Vector::Zero(1), risk.phi, slope);
    SetOracle(slope_row, gain,
              std::abs(slope - gain) <= slope_tol * std::abs(gain));
    result.rows.push_back(slope_row);

    const auto oracle_dre = SolveDifferentialRiccati(
        cfg.system, risk.phi, cfg.horizon, cfg.terminal);
    const Policy law = policy->AsPolicy();
    for (const Vector& x : cfg.points) {
      const ValueEstimate value = EstimateValueUnderPolicy(
          model, cost, risk.phi, law, x, cfg.horizon, mc);
      const double oracle = LqFiniteHorizonValue(oracle_dre, 0.0, x);
      ResultRow row = MakeRow("closed_loop_value", x, risk.phi, value);
      SetOracle(row, oracle,
                std::abs(value.value - oracle) <= value_tol * std::abs(oracle));
      result.rows.push_back(row);
    }
    result.notes.push_back("policy cache cells: " +
                           std::to_string(policy->cache_size()));
  }
}

void RunRiskExpansion(const ExperimentConfig& cfg, std::optional<int> workers,
                      RunResult& result) {
  const auto phis = OptionList(cfg, "phis", {0.1, 0.05});
  const double min_ratio = Option(cfg, "min_ratio", 3.5);
  if (phis.size() != 2) FieldError("options.phis", "expected two values");
  const auto model = ModelOf(cfg);
  const auto cost = CostOf(cfg, true);
  const McConfig mc = WithWorkers(cfg.mc, workers);
  PathCostSpec spec;
  spec.state_cost = cost.state_cost;
  spec.terminal_cost = cost.terminal_cost;
  for (const Vector& x : cfg.points) {
    const auto samples =
        SamplePathCosts(model, x, mc, spec, GeneratedNoise(mc.seed, mc.dt));
    const Vector costs = samples.costs.col(0);
    double gaps[2];
    for (int i = 0; i < 2; ++i) {
      const RiskExpansion e = RiskExpansionCheck(costs, phis[i]);
      gaps[i] = std::abs(e.exact - e.expansion);
      ResultRow row = MakeRow("expansion_gap", x, phis[i], gaps[i]);
      row.oracle = e.exact;
      row.has_oracle = true;
      row.pass = true;
      result.rows.push_back(row);
      if (!e.in_regime) {
        result.notes.push_back("phi = " + FormatDouble(phis[i]) +
                               " is outside the small-phi regime");
      }
    }
    const double ratio = gaps[0] / gaps[1];
    ResultRow row = MakeRow("gap_ratio", x, phis[0] / phis[1], ratio);
    row.pass = ratio >= min_ratio;
    result.rows.push_back(row);
  }
}

std::uint64_t Fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const char* ErrorName(const std::exception& e) {
  if (dynamic_cast<const DimensionError*>(&e)) return "DimensionError";
  if (dynamic_cast<const DivergenceError*>(&e)) return "DivergenceError";
  if (dynamic_cast<const AssumptionViolation*>(&e)) return "AssumptionViolation";
  if (dynamic_cast<const DegenerateRisk*>(&e)) return "DegenerateRisk";
  if (dynamic_cast<const BreakdownError*>(&e)) return "BreakdownError";
  if (dynamic_cast<const NonStabilizing*>(&e)) return "NonStabilizing";
  if (dynamic_cast<const IllConditioned*>(&e)) return "IllConditioned";
  if (dynamic_cast<const NonConvergence*>(&e)) return "NonConvergence";
  if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const json::exception*>(&e)) return "ConfigError";
  return "Error";
}

void WriteFile(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace

std::string ToString(ExperimentKind kind) {
  for (const auto& [name, k] : KindNames()) {
    if (k == kind) return name;
  }
  return "unknown";
}

ExperimentKind ParseKind(const std::string& name) {
  const auto it = KindNames().find(name);
  if (it == KindNames().end()) {
    FieldError("kind", "unknown experiment kind \"" + name + "\"");
  }
  return it->second;
}

std::string ExperimentConfig::Digest() const {
  json canonical = document;
  canonical.erase("output");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(Fnv1a(canonical.dump())));
  return buf;
}

ExperimentConfig ParseConfig(const json& document) {
  if (!document.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> kTopLevel = {
      "kind", "system", "cost", "risk", "mc", "points", "options", "output"};
  for (const auto& [key, value] : document.items()) {
    if (!kTopLevel.count(key)) FieldError(key, "unknown field");
  }
  ExperimentConfig cfg;
  cfg.document = document;

  const json& kind = Require(document, "kind", "kind");
  if (!kind.is_string()) FieldError("kind", "expected a string");
  cfg.kind = ParseKind(kind.get<std::string>());

  const json& system = Require(document, "system", "system");
  const json* cost = Find(document, "cost");
  if (cost != nullptr && !cost->is_object()) FieldError("cost", "expected an object");
  if (system.is_string()) {
    if (system.get<std::string>() != "scalar-ou") {
      FieldError("system", "unknown builtin \"" + system.get<std::string>() + "\"");
    }
    cfg.system = LqSystem::ScalarOu();
  } else if (system.is_object()) {
    cfg.system.drift = ReadMatrix(Require(system, "A", "system.A"), "system.A");
    cfg.system.control = ReadMatrix(Require(system, "B", "system.B"), "system.B");
    cfg.system.noise =
        ReadMatrix(Require(system, "sigma", "system.sigma"), "system.sigma");
    if (cost == nullptr) FieldError("cost", "required field is missing");
    cfg.system.state_weight = ReadMatrix(Require(*cost, "Q", "cost.Q"), "cost.Q");
    cfg.system.control_weight =
        ReadMatrix(Require(*cost, "R", "cost.R"), "cost.R");
  } else {
    FieldError("system", "expected \"scalar-ou\" or an object");
  }
  const Eigen::Index n = cfg.system.drift.rows();
  cfg.terminal = Matrix::Zero(n, n);
  if (cost != nullptr) {
    if (const json* q = Find(*cost, "Q")) cfg.system.state_weight = ReadMatrix(*q, "cost.Q");
    if (const json* r = Find(*cost, "R")) {
      cfg.system.control_weight = ReadMatrix(*r, "cost.R");
    }
    if (const json* m = Find(*cost, "M")) cfg.terminal = ReadMatrix(*m, "cost.M");
    if (const json* a = Find(*cost, "alpha")) {
      cfg.discount = ReadNumber(*a, "cost.alpha");
      if (cfg.discount < 0.0) FieldError("cost.alpha", "must be nonnegative");
    }
  }
  cfg.system.Validate();
  if (cfg.terminal.rows() != n || cfg.terminal.cols() != n) {
    FieldError("cost.M", "must be n x n");
  }

  const json& risk = Require(document, "risk", "risk");
  if (!risk.is_object()) FieldError("risk", "expected an object");
  const json* phi = Find(risk, "phi");
  const json* phis = Find(risk, "phis");
  if ((phi == nullptr) == (phis == nullptr)) {
    FieldError("risk.phi", "give exactly one of risk.phi and risk.phis");
  }
  cfg.phis = phi != nullptr ? std::vector<double>{ReadNumber(*phi, "risk.phi")}
                            : ReadList(*phis, "risk.phis");
  if (const json* psi = Find(risk, "psi")) {
    if (psi->is_string()) {
      if (psi->get<std::string>() != "derive") {
        FieldError("risk.psi", "expected a number or \"derive\"");
      }
    } else {
      cfg.psi = ReadNumber(*psi, "risk.psi");
    }
  }

  if (const json* points = Find(document, "points")) {
    if (!points->is_array() || points->empty()) {
      FieldError("points", "expected a non-empty list");
    }
    for (const json& p : *points) {
      Vector x = ReadVector(p, "points");
      if (x.size() != n) FieldError("points", "state dimension mismatch");
      cfg.points.push_back(std::move(x));
    }
  } else {
    cfg.points.push_back(Vector::Zero(n));
  }

  if (const json* options = Find(document, "options")) {
    if (!options->is_object()) FieldError("options", "expected an object");
    cfg.options = *options;
    const auto& allowed = AllowedOptions().at(cfg.kind);
    for (const auto& [key, value] : options->items()) {
      if (!allowed.count(key)) FieldError("options." + key, "unknown option");
    }
  } else {
    cfg.options = json::object();
  }

  if (const json* output = Find(document, "output")) {
    if (!output->is_string()) FieldError("output", "expected a string");
    cfg.output = output->get<std::string>();
  } else {
    cfg.output = "out";
  }

  const json* mc = Find(document, "mc");
  if (NeedsMc(cfg.kind) && mc == nullptr) {
    FieldError("mc", "required field is missing");
  }
  if (mc != nullptr) {
    if (!mc->is_object()) FieldError("mc", "expected an object");
    const json& seed = Require(*mc, "seed", "mc.seed");
    if (!seed.is_number_integer() || seed.get<std::int64_t>() < 0) {
      FieldError("mc.seed", "expected a nonnegative integer");
    }
    cfg.mc.seed = seed.get<std::uint64_t>();
    const double paths = ReadNumber(Require(*mc, "paths", "mc.paths"), "mc.paths");
    if (paths != std::floor(paths) || paths < 2 || paths > 2e9) {
      FieldError("mc.paths", "expected an integer >= 2");
    }
    cfg.mc.paths = static_cast<int>(paths);
    cfg.mc.dt = ReadNumber(Require(*mc, "dt", "mc.dt"), "mc.dt");
    if (!(cfg.mc.dt > 0.0)) FieldError("mc.dt", "must be positive");
    if (const json* t = Find(*mc, "T")) cfg.horizon = ReadNumber(*t, "mc.T");
    if (const json* t = Find(*mc, "T1")) cfg.t1 = ReadNumber(*t, "mc.T1");
    if (const json* t = Find(*mc, "T2")) cfg.t2 = ReadNumber(*t, "mc.T2");
    cfg.mc.steps = 1;
    switch (cfg.kind) {
      case ExperimentKind::kFhIdentity:
      case ExperimentKind::kAvgDiffValue:
      case ExperimentKind::kPolicyLoop:
      case ExperimentKind::kRiskExpansion:
        Require(*mc, "T", "mc.T");
        if (!(cfg.horizon > 0.0)) FieldError("mc.T", "must be positive");
        cfg.mc = McConfig::ForHorizon(cfg.horizon, cfg.mc.dt, cfg.mc.paths,
                                      cfg.mc.seed);
        break;
      case ExperimentKind::kAvgChi:
        Require(*mc, "T1", "mc.T1");
        Require(*mc, "T2", "mc.T2");
        if (!(cfg.t1 > 0.0) || !(cfg.t2 > cfg.t1)) {
          FieldError("mc.T2", "need 0 < T1 < T2");
        }
        cfg.mc = McConfig::ForHorizon(cfg.t2, cfg.mc.dt, cfg.mc.paths,
                                      cfg.mc.seed);
        break;
      default:
        break;
    }
    cfg.mc.Validate();
  }
  if ((cfg.kind == ExperimentKind::kDiscBound ||
       cfg.kind == ExperimentKind::kJensen) &&
      !(cfg.discount > 0.0)) {
    FieldError("cost.alpha", "this kind needs a positive discount rate");
  }
  return cfg;
}

ExperimentConfig LoadConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json document;
  try {
    document = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return ParseConfig(document);
}

DerivedQuantities Derive(const ExperimentConfig& cfg) {
  DerivedQuantities d;
  const auto model = ModelOf(cfg);
  d.psi = ComputePsi(model, cfg.system.control_weight, cfg.points);
  if (cfg.psi && std::abs(*cfg.psi - d.psi) > 1e-8 * std::max(1.0, d.psi)) {
    std::ostringstream os;
    os << "risk.psi = " << FormatDouble(*cfg.psi)
       << " but B R^-1 B^T = psi Sigma gives psi = " << FormatDouble(d.psi);
    throw AssumptionViolation(os.str());
  }
  for (const double phi : cfg.phis) d.risks.push_back(RiskParams::Make(phi, d.psi));
  if (cfg.discount > 0.0) {
    double tail_eps = 1e-4;
    if (cfg.kind == ExperimentKind::kDiscBound ||
        cfg.kind == ExperimentKind::kJensen) {
      tail_eps = Option(cfg, "tail_eps", tail_eps);
    }
    d.truncation_horizon = std::log(1.0 / tail_eps) / cfg.discount;
  }
  return d;
}

RunResult RunExperiment(const ExperimentConfig& cfg,
                        std::optional<int> workers) {
  const DerivedQuantities d = Derive(cfg);
  RunResult result;
  result.kind = cfg.kind;
  result.digest = cfg.Digest();
  switch (cfg.kind) {
    case ExperimentKind::kFhIdentity:
      RunFhIdentity(cfg, d, workers, result);
      break;
    case ExperimentKind::kAvgChi:
      RunAvgChi(cfg, d, workers, result);
      break;
    case ExperimentKind::kAvgDiffValue:
      RunAvgDiffValue(cfg, d, workers, result);
      break;
    case ExperimentKind::kDiscBound:
      RunDiscBound(cfg, d, workers, result);
      break;
    case ExperimentKind::kJensen:
      RunJensen(cfg, d, workers, result);
      break;
    case ExperimentKind::kRecurrence:
      RunRecurrence(cfg, d, workers, result);
      break;
    case ExperimentKind::kFitOffline:
      RunFitOffline(cfg, d, workers, result);
      break;
    case ExperimentKind::kLqOracle:
      RunLqOracle(cfg, d, result);
      break;
    case ExperimentKind::kPolicyLoop:
      RunPolicyLoop(cfg, d, workers, result);
      break;
    case ExperimentKind::kRiskExpansion:
      RunRiskExpansion(cfg, workers, result);
      break;
  }
  for (const ResultRow& row : result.rows) result.pass = result.pass && row.pass;
  return result;
}

std::string ResultsCsv(const RunResult& result) {
  std::ostringstream out;
  out << "kind,label,point,param,estimate,std_error,ess,oracle,pass,"
         "config_digest\n";
  const std::string kind = ToString(result.kind);
  for (const ResultRow& row : result.rows) {
    out << kind << ',' << row.label << ',' << row.point << ','
        << FormatDouble(row.param) << ',' << FormatDouble(row.estimate) << ','
        << FormatDouble(row.std_error) << ',' << FormatDouble(row.ess) << ','
        << (row.has_oracle ? FormatDouble(row.oracle) : "") << ','
        << (row.pass ? "true" : "false") << ',' << result.digest << '\n';
  }
  return out.str();
}

json ValidationReport(const ExperimentConfig& cfg) {
  const DerivedQuantities d = Derive(cfg);
  json report;
  report["kind"] = ToString(cfg.kind);
  report["config_digest"] = cfg.Digest();
  report["psi"] = d.psi;
  json risks = json::array();
  for (const RiskParams& r : d.risks) {
    risks.push_back({{"phi", r.phi}, {"lambda", r.lambda}, {"A", r.exponent}});
  }
  report["risk"] = risks;
  if (d.truncation_horizon) {
    report["truncation_horizon"] = *d.truncation_horizon;
  }
  if (NeedsMc(cfg.kind)) {
    report["mc"] = {{"paths", cfg.mc.paths},
                    {"dt", cfg.mc.dt},
                    {"seed", cfg.mc.seed}};
  }
  return report;
}

int RunCommand(const std::filesystem::path& config_path,
               std::optional<int> workers,
               std::optional<std::filesystem::path> out_dir, std::ostream& out,
               std::ostream& err) {
  try {
    const ExperimentConfig cfg = LoadConfig(config_path);
    if (!workers) {
      workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    }
    if (*workers < 1) throw ConfigError("--workers must be at least 1");
    const auto start = std::chrono::steady_clock::now();
    const RunResult result = RunExperiment(cfg, workers);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();

    const std::filesystem::path dir = out_dir.value_or(cfg.output);
    std::filesystem::create_directories(dir);
    WriteFile(dir / "results.csv", ResultsCsv(result));
    json meta;
    meta["config"] = cfg.document;
    meta["config_digest"] = result.digest;
    meta["kind"] = ToString(cfg.kind);
    meta["version"] = RSPIC_VERSION;
    meta["workers"] = *workers;
    meta["pass"] = result.pass;
    meta["notes"] = result.notes;
    meta["timings"] = {{"run_seconds", seconds}};
    WriteFile(dir / "meta.json", meta.dump(2) + "\n");

    for (const std::string& note : result.notes) out << "note: " << note << '\n';
    out << ToString(cfg.kind) << ": " << (result.pass ? "pass" : "FAIL")
        << " (" << result.rows.size() << " rows, " << seconds << " s) -> "
        << (dir / "results.csv").string() << '\n';
    return result.pass ? 0 : 2;
  } catch (const std::exception& e) {
    err << "error: " << ErrorName(e) << ": " << e.what() << '\n';
    return 1;
  }
}

int ValidateCommand(const std::filesystem::path& config_path,
                    std::ostream& out, std::ostream& err) {
  try {
    const ExperimentConfig cfg = LoadConfig(config_path);
    out << ValidationReport(cfg).dump(2) << '\n';
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << ErrorName(e) << ": " << e.what() << '\n';
    return 1;
  }
}

}  // namespace rspic
