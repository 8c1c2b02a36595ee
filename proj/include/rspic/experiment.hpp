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

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rspic/riccati.hpp"
#include "rspic/risk.hpp"
#include "rspic/sde.hpp"

namespace rspic {

enum class ExperimentKind {
  kFhIdentity,
  kAvgChi,
  kAvgDiffValue,
  kDiscBound,
  kJensen,
  kRecurrence,
  kFitOffline,
  kLqOracle,
  kPolicyLoop,
  kRiskExpansion,
};

std::string ToString(ExperimentKind kind);
ExperimentKind ParseKind(const std::string& name);

// One experiment, resolved from a JSON document. The raw document is kept
// for meta.json and for the digest.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kLqOracle;
  nlohmann::json document;

  LqSystem system;  // linear dynamics, q(x) = 1/2 x^T Q x
  Matrix terminal;  // M, zero by default
  double discount = 0.0;

  std::vector<double> phis;
  std::optional<double> psi;  // absent: derive from B R^-1 B^T = psi Sigma

  McConfig mc;
  double horizon = 0.0;  // mc.T
  double t1 = 0.0;       // mc.T1
  double t2 = 0.0;       // mc.T2

  std::vector<Vector> points;
  nlohmann::json options;  // kind-specific knobs
  std::string output;

  // Canonical JSON without "output", hashed with 64-bit FNV-1a.
  std::string Digest() const;
};

ExperimentConfig ParseConfig(const nlohmann::json& document);
ExperimentConfig LoadConfig(const std::filesystem::path& path);

struct DerivedQuantities {
  double psi = 0.0;
  std::vector<RiskParams> risks;  // one per phi
  std::optional<double> truncation_horizon;
};

// Checks the psi and lambda preconditions without simulating.
DerivedQuantities Derive(const ExperimentConfig& cfg);

struct ResultRow {
  std::string label;
  std::string point;  // evaluation state, space separated
  double param = 0.0; // phi, A, beta, T ... depending on the row
  double estimate = 0.0;
  double std_error = 0.0;
  double ess = 0.0;
  double oracle = 0.0;
  bool has_oracle = false;
  bool pass = true;
};

struct RunResult {
  ExperimentKind kind = ExperimentKind::kLqOracle;
  std::string digest;
  std::vector<ResultRow> rows;
  bool pass = true;
  std::vector<std::string> notes;
};

RunResult RunExperiment(const ExperimentConfig& cfg,
                        std::optional<int> workers = std::nullopt);

// Header: kind,label,point,param,estimate,std_error,ess,oracle,pass,digest.
// Numbers carry 17 significant digits.
std::string ResultsCsv(const RunResult& result);

nlohmann::json ValidationReport(const ExperimentConfig& cfg);

// CLI entry points. Return the process exit code: 0 pass, 2 criterion
// failed, 1 could not run.
int RunCommand(const std::filesystem::path& config_path,
               std::optional<int> workers,
               std::optional<std::filesystem::path> out_dir, std::ostream& out,
               std::ostream& err);
int ValidateCommand(const std::filesystem::path& config_path,
                    std::ostream& out, std::ostream& err);

}  // namespace rspic
