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
#include <vector>

#include <gtest/gtest.h>

#include "rspic/risk.hpp"

namespace rspic {
namespace {

TEST(LambdaTest, Values) {
  EXPECT_DOUBLE_EQ(LambdaOf(0.5, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(LambdaOf(0.0, 1.0), 1.0);
  EXPECT_THROW(LambdaOf(1.0, 1.0), DegenerateRisk);
  EXPECT_THROW(LambdaOf(0.5, 0.0), ConfigError);
  const RiskParams p = RiskParams::Make(0.5, 1.0);
  EXPECT_DOUBLE_EQ(p.exponent, -0.5);
  EXPECT_DOUBLE_EQ(p.lambda, 2.0);
  EXPECT_DOUBLE_EQ(p.exponent, -1.0 / p.lambda);
}

TEST(ComputePsiTest, ScalarCases) {
  const std::vector<Vector> probes = {Vector::Zero(1), Vector::Ones(1)};
  const auto unit = DiffusionModel::Linear(Matrix::Constant(1, 1, -1.0),
                                           Matrix::Ones(1, 1), Matrix::Ones(1, 1));
  EXPECT_DOUBLE_EQ(ComputePsi(unit, Matrix::Ones(1, 1), probes), 1.0);

  const auto scaled = DiffusionModel::Linear(
      Matrix::Constant(1, 1, -1.0), Matrix::Constant(1, 1, 2.0),
      Matrix::Constant(1, 1, std::sqrt(2.0)));
  EXPECT_NEAR(ComputePsi(scaled, Matrix::Constant(1, 1, 2.0), probes), 1.0,
              1e-15);
}

TEST(ComputePsiTest, StructuralMismatch) {
  Matrix b(2, 1);
  b << 1.0, 0.0;
  const auto model =
      DiffusionModel::Linear(-Matrix::Identity(2, 2), b, Matrix::Identity(2, 2));
  const std::vector<Vector> probes = {Vector::Zero(2)};
  EXPECT_THROW(ComputePsi(model, Matrix::Ones(1, 1), probes),
               AssumptionViolation);
}

TEST(ComputePsiTest, StateDependentControlMatrix) {
  // B(x) = 1 + x^2 breaks proportionality away from the origin.
  const DiffusionModel model(
      1, 1, [](const Vector& x, Vector& out) { out = -x; },
      [](const Vector& x, Matrix& out) { out(0, 0) = 1.0 + x.squaredNorm(); },
      Matrix::Ones(1, 1));
  const std::vector<Vector> origin = {Vector::Zero(1)};
  EXPECT_DOUBLE_EQ(ComputePsi(model, Matrix::Ones(1, 1), origin), 1.0);
  const std::vector<Vector> probes = {Vector::Zero(1), Vector::Ones(1)};
  EXPECT_THROW(ComputePsi(model, Matrix::Ones(1, 1), probes),
               AssumptionViolation);
}

TEST(RiskCostModelTest, Validation) {
  RiskCostModel cost;
  cost.state_cost = [](const Vector& x) { return x[0]; };
  cost.control_weight = Matrix::Constant(1, 1, -1.0);
  EXPECT_THROW(cost.Validate(), AssumptionViolation);
  cost.control_weight = Matrix::Ones(1, 1);
  EXPECT_NO_THROW(cost.Validate());
  const std::vector<Vector> probes = {Vector::Ones(1), -Vector::Ones(1)};
  EXPECT_THROW(cost.CheckNonnegative(probes), AssumptionViolation);
}

TEST(RiskExpansionTest, ConstantSample) {
  const Vector costs = Vector::Constant(10, 1.7);
  for (const double phi : {-0.3, 0.1, 2.0}) {
    const RiskExpansion e = RiskExpansionCheck(costs, phi);
    EXPECT_NEAR(e.exact, 1.7, 1e-14);
    EXPECT_NEAR(e.expansion, 1.7, 1e-14);
  }
}

TEST(RiskExpansionTest, TwoPointDistribution) {
  Vector costs(2);
  costs << 0.0, 1.0;
  const RiskExpansion e = RiskExpansionCheck(costs, 0.1);
  EXPECT_NEAR(e.exact, 10.0 * std::log((1.0 + std::exp(0.1)) / 2.0), 1e-14);
  EXPECT_NEAR(e.exact, 0.51249, 1e-5);
  EXPECT_NEAR(e.expansion, 0.5125, 1e-14);
  EXPECT_LE(std::abs(e.exact - e.expansion), 1e-3);
}

TEST(RiskExpansionTest, RiskNeutralLimit) {
  Vector costs(5);
  costs << 0.3, 1.2, 0.7, 2.5, 0.1;
  const double mean = costs.mean();
  const double var = (costs.array() - mean).square().mean();
  const RiskExpansion e = RiskExpansionCheck(costs, 1e-8);
  EXPECT_NEAR(e.exact, mean, 1e-6 * var);
}

TEST(RiskExpansionTest, GapShrinksQuadratically) {
  Vector costs(6);
  costs << 0.2, 0.9, 1.4, 0.5, 2.0, 0.7;
  const auto gap = [&](double phi) {
    const RiskExpansion e = RiskExpansionCheck(costs, phi);
    return std::abs(e.exact - e.expansion);
  };
  EXPECT_GT(gap(0.1) / gap(0.05), 3.5);
}

}  // namespace
}  // namespace rspic
