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
#include <limits>

#include <Eigen/Core>

namespace rspic {

// log(mean(exp(values))) evaluated around the maximum. -inf entries are
// allowed; if every entry is -inf the result is -inf.
template <typename Derived>
typename Derived::Scalar LogMeanExp(const Eigen::DenseBase<Derived>& values) {
  using Scalar = typename Derived::Scalar;
  const auto count = values.size();
  if (count == 0) return -std::numeric_limits<Scalar>::infinity();
  const Scalar shift = values.maxCoeff();
  if (shift == -std::numeric_limits<Scalar>::infinity()) return shift;
  Scalar sum = 0;
  for (Eigen::Index i = 0; i < count; ++i) {
    sum += std::exp(values.derived().coeff(i) - shift);
  }
  return shift + std::log(sum / static_cast<Scalar>(count));
}

template <typename Derived>
typename Derived::Scalar SampleMean(const Eigen::DenseBase<Derived>& values) {
  return values.sum() / static_cast<typename Derived::Scalar>(values.size());
}

// Unbiased (K - 1) sample variance.
template <typename Derived>
typename Derived::Scalar SampleVariance(
    const Eigen::DenseBase<Derived>& values) {
  using Scalar = typename Derived::Scalar;
  const auto count = values.size();
  if (count < 2) return Scalar(0);
  const Scalar mean = SampleMean(values);
  Scalar acc = 0;
  for (Eigen::Index i = 0; i < count; ++i) {
    const Scalar d = values.derived().coeff(i) - mean;
    acc += d * d;
  }
  return acc / static_cast<Scalar>(count - 1);
}

}  // namespace rspic
