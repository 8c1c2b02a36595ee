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

#include <cmath>

#include <gtest/gtest.h>

#include "rspic/estimators.hpp"
#include "rspic/riccati.hpp"

namespace rspic {
namespace {

DiffusionModel ScalarOu() {
  return DiffusionModel::Linear(Matrix::Constant(1, 1, -1.0),
                                Matrix::Ones(1, 1), Matrix::Ones(1, 1));
}

StateCost HalfSquare() {
  return [](const Vector& x) { return 0.5 * x.squaredNorm(); };
}

StateCost Constant(double c) {
  return [c](const Vector&) { return c; };
}

RiskCostModel OuCost() {
  RiskCostModel cost;
  cost.state_cost = HalfSquare();
  cost.control_weight = Matrix::Ones(1, 1);
  return cost;
}

double FiniteHorizonOracle(double phi, double horizon, double x) {
  const auto sol = SolveDifferentialRiccati(LqSystem::ScalarOu(), phi, horizon,
                                            Matrix::Zero(1, 1));
  return LqFiniteHorizonValue(sol, 0.0, Vector::Constant(1, x));
}

TEST(ExponentialAverageTest, ConstantCosts) {
  const ValueEstimate est = ExponentialAverage(Vector::Constant(50, 1.25), -0.5);
  EXPECT_DOUBLE_EQ(est.value, 1.25);
  EXPECT_EQ(est.std_error, 0.0);
  EXPECT_DOUBLE_EQ(est.ess, 50.0);
  EXPECT_FALSE(est.low_ess);
}

TEST(ExponentialAverageTest, WeightsAndErrors) {
  Vector costs(4);
  costs << 0.0, 1.0, 2.0, 3.0;
  const ValueEstimate est = ExponentialAverage(costs, 1.0);
  const double mean_w = (1 + std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) / 4;
  EXPECT_NEAR(est.value, std::log(mean_w), 1e-14);
  EXPECT_GT(est.std_error, 0.0);
  EXPECT_GE(est.ess, 1.0);
  EXPECT_LE(est.ess, 4.0);
  // Risk-seeking certainty equivalent lies below the mean, risk-averse above.
  EXPECT_LT(ExponentialAverage(costs, -1.0).value, 1.5);
  EXPECT_GT(est.value, 1.5);
  EXPECT_THROW(ExponentialAverage(costs, 0.0), DegenerateRisk);
}

TEST(ExponentialAverageTest, FlagsLowEss) {
  Vector costs = Vector::Zero(1000);
  costs[0] = 100.0;
  EXPECT_TRUE(ExponentialAverage(costs, 1.0).low_ess);
}

TEST(ExponentialAverageTest, DifferenceOfIdenticalEstimates) {
  Vector costs(3);
  costs << 0.5, 0.1, 0.9;
  const ValueEstimate a = ExponentialAverage(costs, -0.5);
  const ValueEstimate d = Difference(a, a);
  EXPECT_EQ(d.value, 0.0);
  EXPECT_EQ(d.std_error, 0.0);
}

TEST(FiniteHorizonTest, ZeroCostIsExactlyZero) {
  RiskCostModel cost;
  cost.state_cost = Constant(0.0);
  cost.control_weight = Matrix::Ones(1, 1);
  const McConfig cfg = McConfig::ForHorizon(1.0, 0.01, 100, 3);
  const ValueEstimate est = EstimateFiniteHorizonValue(
      ScalarOu(), cost, RiskParams::Make(0.5, 1.0), Vector::Ones(1), 1.0, cfg);
  EXPECT_EQ(est.value, 0.0);
}

TEST(FiniteHorizonTest, MatchesRiccatiOracle) {
  const McConfig cfg = McConfig::ForHorizon(2.0, 2e-3, 20000, 17);
  for (const double phi : {0.0, 0.5}) {
    const ValueEstimate est = EstimateFiniteHorizonValue(
        ScalarOu(), OuCost(), RiskParams::Make(phi, 1.0), Vector::Ones(1), 2.0,
        cfg);
    const double oracle = FiniteHorizonOracle(phi, 2.0, 1.0);
    EXPECT_NEAR(est.value, oracle,
                std::max(3.0 * est.std_error, 0.02 * oracle))
        << "phi = " << phi;
  }
}

TEST(FiniteHorizonTest, RemainingHorizon) {
  const McConfig cfg = McConfig::ForHorizon(2.0, 0.01, 200, 5);
  const auto params = RiskParams::Make(0.5, 1.0);
  const auto a = EstimateFiniteHorizonValue(ScalarOu(), OuCost(), params,
                                            Vector::Ones(1), 2.0, cfg, 1.0);
  const auto b = EstimateFiniteHorizonValue(ScalarOu(), OuCost(), params,
                                            Vector::Ones(1), 1.0, cfg);
  EXPECT_EQ(a.value, b.value);
}

TEST(ChiTest, ConstantRate) {
  const McConfig cfg = McConfig::ForHorizon(2.0, 0.01, 50, 1);
  const ValueEstimate est =
      EstimateChi(ScalarOu(), Constant(0.7), -0.5, 1.0, 2.0, Vector::Zero(1), cfg);
  EXPECT_NEAR(est.value, 0.7, 1e-12);
  EXPECT_NEAR(est.std_error, 0.0, 1e-12);
}

TEST(ChiTest, ScalarOu) {
  const McConfig cfg = McConfig::ForHorizon(8.0, 0.01, 20000, 2);
  const ValueEstimate est = EstimateChi(ScalarOu(), HalfSquare(), -0.5, 4.0,
                                        8.0, Vector::Zero(1), cfg);
  EXPECT_NEAR(est.value, 0.224745, 0.05 * 0.224745);
}

TEST(DiffValueTest, SameStateIsExactlyZero) {
  const McConfig cfg = McConfig::ForHorizon(2.0, 0.01, 100, 1);
  const ValueEstimate est = EstimateDiffValue(
      ScalarOu(), HalfSquare(), -0.5, Vector::Ones(1), Vector::Ones(1),
      0.224745, 2.0, cfg);
  EXPECT_EQ(est.value, 0.0);
  EXPECT_EQ(est.std_error, 0.0);
}

TEST(DiffValueTest, MatchesQuadraticOracleAndIsAntisymmetric) {
  const McConfig cfg = McConfig::ForHorizon(8.0, 0.01, 10000, 4);
  const double s = std::sqrt(6.0) - 2.0;
  for (const double x : {1.0, 2.0}) {
    const Vector xv = Vector::Constant(1, x);
    const ValueEstimate est = EstimateDiffValue(
        ScalarOu(), HalfSquare(), -0.5, xv, Vector::Zero(1), 0.224745, 8.0, cfg);
    EXPECT_NEAR(est.value, 0.5 * s * x * x, 0.1 * 0.5 * s * x * x);
    const ValueEstimate swapped = EstimateDiffValue(
        ScalarOu(), HalfSquare(), -0.5, Vector::Zero(1), xv, 0.224745, 8.0, cfg);
    EXPECT_EQ(est.value, -swapped.value);
  }
}

TEST(DiscountedBoundTest, DeterministicRates) {
  const McConfig cfg = McConfig::ForHorizon(1.0, 0.01, 10, 1);
  const DiscountedBound zero = EstimateDiscountedLowerBound(
      ScalarOu(), Constant(0.0), -0.5, 0.2, Vector::Ones(1), cfg);
  EXPECT_EQ(zero.estimate.value, 0.0);
  const DiscountedBound flat = EstimateDiscountedLowerBound(
      ScalarOu(), Constant(0.3), -0.5, 0.2, Vector::Ones(1), cfg);
  EXPECT_NEAR(flat.horizon, std::log(1e4) / 0.2, 0.01);
  // Left-endpoint quadrature adds at most c dt.
  EXPECT_NEAR(flat.estimate.value + 0.3 * std::exp(-0.2 * flat.horizon) / 0.2,
              0.3 / 0.2, 0.3 * cfg.dt);
  EXPECT_LE(0.3 / 0.2 - flat.estimate.value, flat.tail_bias + 1e-12);
}

TEST(JensenTest, EqualityAtBetaOne) {
  const McConfig cfg = McConfig::ForHorizon(1.0, 0.05, 200, 3);
  const JensenGap gap = ComputeJensenGap(ScalarOu(), HalfSquare(), -0.5, 0.2,
                                         1.0, 1.0, Vector::Ones(1), cfg);
  EXPECT_EQ(gap.lhs, gap.rhs);
  EXPECT_TRUE(gap.direction_ok);
}

TEST(JensenTest, Direction) {
  const McConfig cfg = McConfig::ForHorizon(1.0, 0.02, 2000, 3);
  for (const double beta : {0.5, 2.0}) {
    const JensenGap gap = ComputeJensenGap(ScalarOu(), HalfSquare(), -0.5, 0.2,
                                           1.0, beta, Vector::Ones(1), cfg);
    EXPECT_TRUE(gap.direction_ok) << "beta = " << beta;
    EXPECT_EQ(gap.lhs <= gap.rhs, beta < 1.0);
  }
}

TEST(RecurrenceTest, ConstantRateAndUnitZ) {
  const McConfig cfg = McConfig::ForHorizon(1.0, 0.01, 100, 2);
  const RecurrenceResidual r = ComputeRecurrenceResidual(
      ScalarOu(), Constant(0.4), -0.5, 0.4, [](const Vector&) { return 1.0; },
      0.5, Vector::Ones(1), cfg);
  EXPECT_NEAR(r.residual_rel, 0.0, 1e-14);
}

TEST(RecurrenceTest, OracleAndPerturbedChi) {
  const RiccatiSolution sol = SolveAlgebraicRiccati(LqSystem::ScalarOu(), 0.5);
  const auto z = [&](const Vector& y) {
    return LqStationaryValues(sol, -0.5, y).z;
  };
  const McConfig cfg = McConfig::ForHorizon(0.5, 1e-3, 50000, 6);
  const RecurrenceResidual exact = ComputeRecurrenceResidual(
      ScalarOu(), HalfSquare(), -0.5, sol.chi, z, 0.5, Vector::Ones(1), cfg);
  EXPECT_LE(std::abs(exact.residual_rel), 3.0 * exact.std_error);
  const RecurrenceResidual off = ComputeRecurrenceResidual(
      ScalarOu(), HalfSquare(), -0.5, sol.chi + 0.1, z, 0.5, Vector::Ones(1),
      cfg);
  EXPECT_NEAR(off.residual_rel, -std::expm1(0.025), 4.0 * off.std_error);
  EXPECT_GT(std::abs(off.residual_rel), 3.0 * off.std_error);
}

TEST(PolicyValueTest, ZeroCostZeroPolicy) {
  RiskCostModel cost;
  cost.state_cost = Constant(0.0);
  cost.control_weight = Matrix::Ones(1, 1);
  const McConfig cfg = McConfig::ForHorizon(1.0, 0.01, 50, 2);
  const Policy zero = [](double, const Vector&) { return Vector::Zero(1); };
  for (const double phi : {0.0, 0.5}) {
    EXPECT_EQ(EstimateValueUnderPolicy(ScalarOu(), cost, phi, zero,
                                       Vector::Ones(1), 1.0, cfg)
                  .value,
              0.0);
  }
}

TEST(PolicyValueTest, StationaryGainAndCentralIdentity) {
  const double gain = std::sqrt(6.0) - 2.0;
  const Policy policy = [gain](double, const Vector& x) {
    return Vector(-gain * x);
  };
  const McConfig cfg = McConfig::ForHorizon(2.0, 2e-3, 20000, 12);
  const double oracle = FiniteHorizonOracle(0.5, 2.0, 1.0);
  const ValueEstimate controlled = EstimateValueUnderPolicy(
      ScalarOu(), OuCost(), 0.5, policy, Vector::Ones(1), 2.0, cfg);
  EXPECT_NEAR(controlled.value, oracle,
              std::max(3.0 * controlled.std_error, 0.03 * oracle));
  const ValueEstimate free = EstimateFiniteHorizonValue(
      ScalarOu(), OuCost(), RiskParams::Make(0.5, 1.0), Vector::Ones(1), 2.0,
      cfg);
  EXPECT_NEAR(free.value, oracle, std::max(3.0 * free.std_error, 0.02 * oracle));
}

TEST(PolicyValueTest, NoPolicyBeatsThePathIntegralValue) {
  const McConfig cfg = McConfig::ForHorizon(2.0, 0.01, 10000, 14);
  const ValueEstimate optimal = EstimateFiniteHorizonValue(
      ScalarOu(), OuCost(), RiskParams::Make(0.5, 1.0), Vector::Ones(1), 2.0,
      cfg);
  for (const double gain : {0.0, 0.2, 0.45, 1.0}) {
    const Policy policy = [gain](double, const Vector& x) {
      return Vector(-gain * x);
    };
    const ValueEstimate value = EstimateValueUnderPolicy(
        ScalarOu(), OuCost(), 0.5, policy, Vector::Ones(1), 2.0, cfg);
    EXPECT_GE(value.value,
              optimal.value - 3.0 * std::hypot(value.std_error,
                                               optimal.std_error))
        << "gain = " << gain;
  }
}

TEST(PolicyValueTest, RiskNeutralContinuity) {
  const Policy policy = [](double, const Vector& x) { return Vector(-0.4 * x); };
  const McConfig cfg = McConfig::ForHorizon(1.0, 0.01, 2000, 15);
  const double neutral = EstimateValueUnderPolicy(
      ScalarOu(), OuCost(), 0.0, policy, Vector::Ones(1), 1.0, cfg).value;
  const double small = EstimateValueUnderPolicy(
      ScalarOu(), OuCost(), 1e-6, policy, Vector::Ones(1), 1.0, cfg).value;
  EXPECT_LE(std::abs(small - neutral), 1e-3 * (1.0 + std::abs(neutral)));
}

TEST(ChiTest, IndependentOfInitialState) {
  const McConfig cfg = McConfig::ForHorizon(8.0, 0.01, 20000, 2);
  const ValueEstimate at0 = EstimateChi(ScalarOu(), HalfSquare(), -0.5, 4.0,
                                        8.0, Vector::Zero(1), cfg);
  const ValueEstimate at2 = EstimateChi(ScalarOu(), HalfSquare(), -0.5, 4.0,
                                        8.0, Vector::Constant(1, 2.0), cfg);
  EXPECT_NEAR(at0.value, at2.value,
              2.0 * std::hypot(at0.std_error, at2.std_error));
}

TEST(FiniteHorizonTest, StandardErrorScalesWithSampleSize) {
  double ratio = 0.0;
  const int reps = 5;
  for (int rep = 0; rep < reps; ++rep) {
    const auto se = [&](int paths) {
      const McConfig cfg =
          McConfig::ForHorizon(1.0, 0.01, paths, 100 + static_cast<std::uint64_t>(rep));
      return EstimateFiniteHorizonValue(ScalarOu(), OuCost(),
                                        RiskParams::Make(0.5, 1.0),
                                        Vector::Ones(1), 1.0, cfg)
          .std_error;
    };
    ratio += se(4000) / se(8000) / reps;
  }
  EXPECT_NEAR(ratio, std::sqrt(2.0), 0.2 * std::sqrt(2.0));
}

TEST(SamplePathCostsTest, IndependentOfWorkers) {
  McConfig cfg = McConfig::ForHorizon(1.0, 0.01, 64, 8);
  PathCostSpec spec;
  spec.state_cost = HalfSquare();
  spec.checkpoints = {50};
  cfg.worker_hint = 1;
  const auto a = SamplePathCosts(ScalarOu(), Vector::Ones(1), cfg, spec,
                                 GeneratedNoise(cfg.seed, cfg.dt));
  cfg.worker_hint = 3;
  const auto b = SamplePathCosts(ScalarOu(), Vector::Ones(1), cfg, spec,
                                 GeneratedNoise(cfg.seed, cfg.dt));
  EXPECT_EQ(a.costs, b.costs);
  EXPECT_EQ(a.final_states, b.final_states);
  EXPECT_EQ(a.costs.cols(), 2);
}

}  // namespace
}  // namespace rspic
