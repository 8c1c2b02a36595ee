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

#include <stdexcept>
#include <string>

namespace rspic {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent vector/matrix sizes between a model and its inputs.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A simulated state left the admissible box or became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// The noise/control proportionality (or another structural assumption)
// does not hold. The message carries the worst residual.
class AssumptionViolation : public Error {
 public:
  using Error::Error;
};

// The log-transform exponent phi - psi vanishes.
class DegenerateRisk : public Error {
 public:
  using Error::Error;
};

// Riccati integration blew up: phi is at or beyond the breakdown point.
class BreakdownError : public Error {
 public:
  using Error::Error;
};

class NonStabilizing : public Error {
 public:
  using Error::Error;
};

class IllConditioned : public Error {
 public:
  using Error::Error;
};

class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, double final_residual)
      : Error(what), final_residual_(final_residual) {}
  double final_residual() const { return final_residual_; }

 private:
  double final_residual_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace rspic
