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
#include <sstream>

#include <gtest/gtest.h>

#include "rspic/riccati.hpp"
#include "rspic/stationary_fit.hpp"

namespace rspic {
namespace {

DiffusionModel ScalarOu() {
  return DiffusionModel::Linear(Matrix::Constant(1, 1, -1.0),
                                Matrix::Ones(1, 1), Matrix::Ones(1, 1));
}

StateCost HalfSquare() {
  return [](const Vector& x) { return 0.5 * x.squaredNorm(); };
}

const double kS = std::sqrt(6.0) - 2.0;
const double kChi = 0.5 * kS;

SegmentDataset OuSegments(int paths, int per_path, std::uint64_t seed) {
  const McConfig cfg =
      McConfig::ForHorizon(0.25 * per_path, 0.01, paths, seed);
  const auto batch = SimulateUncontrolled(ScalarOu(), Vector::Zero(1), cfg);
  return BuildSegments(batch, HalfSquare(), 25, 25);
}

TEST(BuildSegmentsTest, Counting) {
  // Two paths of 100 steps: 10 disjoint or 91 overlapping windows each.
  const McConfig cfg = McConfig::ForHorizon(1.0, 0.01, 2, 3);
  const auto batch = SimulateUncontrolled(ScalarOu(), Vector::Zero(1), cfg);
  const SegmentDataset disjoint = BuildSegments(batch, HalfSquare(), 10, 10);
  EXPECT_EQ(disjoint.size(), 2 * 10);
  EXPECT_DOUBLE_EQ(disjoint.length, 0.1);
  const SegmentDataset overlapping = BuildSegments(batch, HalfSquare(), 10, 1);
  EXPECT_EQ(overlapping.size(), 2 * 91);
  EXPECT_EQ(overlapping.starts(0, 91), batch.states[1](0, 0));
  EXPECT_EQ(overlapping.starts(0, 5), batch.states[0](0, 5));
  EXPECT_EQ(overlapping.ends(0, 5), batch.states[0](0, 15));
  const SegmentDataset none = BuildSegments(batch, HalfSquare(), 200, 1);
  EXPECT_EQ(none.size(), 0);
}

TEST(BuildSegmentsTest, ZeroRate) {
  const McConfig cfg = McConfig::ForHorizon(1.0, 0.01, 2, 3);
  const auto batch = SimulateUncontrolled(ScalarOu(), Vector::Ones(1), cfg);
  const SegmentDataset ds =
      BuildSegments(batch, [](const Vector&) { return 0.0; }, 10, 5);
  EXPECT_TRUE(ds.q_integrals.isZero(0.0));
}

TEST(SegmentCsvTest, RoundTrip) {
  const SegmentDataset ds = OuSegments(2, 5, 4);
  std::stringstream buffer;
  ds.WriteCsv(buffer);
  EXPECT_EQ(buffer.str().substr(0, buffer.str().find('\n')),
            "x_start_0,q_integral,x_end_0,L");
  const SegmentDataset back = SegmentDataset::ReadCsv(buffer);
  EXPECT_EQ(back.starts, ds.starts);
  EXPECT_EQ(back.ends, ds.ends);
  EXPECT_EQ(back.q_integrals, ds.q_integrals);
  EXPECT_EQ(back.length, ds.length);
}

TEST(FitTest, RecoversRiccatiSolution) {
  const SegmentDataset ds = OuSegments(200, 100, 11);
  const FitReport fit = FitLogQuadratic(ds, -0.5, kChi);
  EXPECT_NEAR(fit.params.theta(0, 0), kS, 0.1 * kS);
  const FitQuality quality =
      EvaluateFit(fit.params, ds, -0.5, kChi, Matrix::Constant(1, 1, kS));
  ASSERT_TRUE(quality.vs_oracle.has_value());
  EXPECT_LE(*quality.vs_oracle, 0.1);
}

TEST(FitTest, LogSurrogateIsBiasedTowardRiskNeutral) {
  // Least squares on log targets ignores the exponential averaging and
  // lands near the risk-neutral fixed point, well away from S.
  const SegmentDataset ds = OuSegments(200, 100, 11);
  FitOptions options;
  options.method = FitMethod::kLogSurrogate;
  const FitReport surrogate = FitLogQuadratic(ds, -0.5, kChi, options);
  const FitReport link = FitLogQuadratic(ds, -0.5, kChi);
  EXPECT_GT(std::abs(surrogate.params.theta(0, 0) - kS),
            std::abs(link.params.theta(0, 0) - kS));
}

TEST(FitTest, ConstantRateGivesFlatZ) {
  SegmentDataset ds = OuSegments(20, 50, 2);
  ds.q_integrals.setConstant(kChi * ds.length);
  for (const FitMethod method :
       {FitMethod::kLogLink, FitMethod::kLogSurrogate}) {
    FitOptions options;
    options.method = method;
    const FitReport fit = FitLogQuadratic(ds, -0.5, kChi, options);
    EXPECT_LE(fit.params.theta.norm(), 1e-6);
    EXPECT_LE(std::abs(fit.params.offset), 1e-6);
  }
}

TEST(FitTest, ShiftCovariance) {
  const SegmentDataset ds = OuSegments(100, 100, 21);
  SegmentDataset shifted = ds;
  shifted.q_integrals.array() += 0.3 * ds.length;
  const FitReport a = FitLogQuadratic(ds, -0.5, kChi);
  const FitReport b = FitLogQuadratic(shifted, -0.5, kChi + 0.3);
  EXPECT_NEAR(a.params.theta(0, 0), b.params.theta(0, 0), 1e-6);
}

TEST(FitTest, SymmetricInTwoDimensions) {
  const auto model = DiffusionModel::Linear(-Matrix::Identity(2, 2),
                                            Matrix::Identity(2, 2),
                                            Matrix::Identity(2, 2));
  const McConfig cfg = McConfig::ForHorizon(25.0, 0.01, 40, 3);
  const auto batch = SimulateUncontrolled(model, Vector::Zero(2), cfg);
  const SegmentDataset ds = BuildSegments(batch, HalfSquare(), 25, 25);
  const FitReport fit = FitLogQuadratic(ds, -0.5, 2.0 * kChi);
  EXPECT_EQ(fit.params.theta, fit.params.theta.transpose());
  EXPECT_NEAR(fit.params.theta(0, 0), kS, 0.15 * kS);
  EXPECT_NEAR(fit.params.theta(1, 1), kS, 0.15 * kS);
}

TEST(FitTest, SingleStartIsIllConditioned) {
  SegmentDataset ds = OuSegments(10, 10, 5);
  ds.starts.setConstant(0.7);
  EXPECT_THROW(FitLogQuadratic(ds, -0.5, kChi), IllConditioned);
}

TEST(FitTest, TooFewSegments) {
  const SegmentDataset ds = OuSegments(2, 5, 5);
  EXPECT_THROW(FitLogQuadratic(ds, -0.5, kChi), ConfigError);
}

TEST(FitTest, ReportsNonConvergence) {
  const SegmentDataset ds = OuSegments(20, 50, 7);
  FitOptions options;
  options.max_iters = 1;
  try {
    FitLogQuadratic(ds, -0.5, kChi, options);
    FAIL() << "expected NonConvergence";
  } catch (const NonConvergence& e) {
    EXPECT_GT(e.final_residual(), 0.0);
  }
}

TEST(FitQualityTest, ResidualIsSmallestNearTruth) {
  QuadraticLogZParams truth;
  truth.theta = Matrix::Constant(1, 1, kS);
  QuadraticLogZParams off = truth;
  off.theta(0, 0) += 0.2;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const SegmentDataset ds = OuSegments(20, 50, seed);
    const FitQuality at = EvaluateFit(truth, ds, -0.5, kChi);
    const FitQuality away = EvaluateFit(off, ds, -0.5, kChi);
    EXPECT_GT(at.mean_sq_residual, 0.0);
    EXPECT_GT(away.mean_sq_residual, at.mean_sq_residual) << "seed " << seed;
    EXPECT_FALSE(at.vs_oracle.has_value());
  }
}

}  // namespace
}  // namespace rspic
