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

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rspic/experiment.hpp"

namespace {

namespace fs = std::filesystem;

const std::map<std::string, std::string>& Configs() {
  static const std::map<std::string, std::string> configs = {
      {"A1", "a1_fh_identity.json"},  {"A2", "a2_avg_chi.json"},
      {"A3", "a3_diff_value.json"},   {"A4", "a4_jensen.json"},
      {"A5", "a5_disc_bound.json"},   {"A6", "a6_recurrence.json"},
      {"A7", "a7_lq_oracle.json"},    {"A8", "a8_policy_loop.json"},
      {"A9", "a9_fit_offline.json"},  {"A10", "a10_risk_expansion.json"},
  };
  return configs;
}

std::string Slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool RunCriterion(const std::string& id, const fs::path& configs) {
  const auto start = std::chrono::steady_clock::now();
  const rspic::ExperimentConfig cfg =
      rspic::LoadConfig(configs / Configs().at(id));
  const rspic::RunResult result = rspic::RunExperiment(cfg);
  const double seconds = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - start)
                             .count();
  int passed = 0;
  for (const auto& row : result.rows) {
    passed += row.pass ? 1 : 0;
    if (!row.pass) {
      std::printf("  failed row %s point=%s param=%.6g estimate=%.9g se=%.3g",
                  row.label.c_str(), row.point.c_str(), row.param,
                  row.estimate, row.std_error);
      if (row.has_oracle) std::printf(" oracle=%.9g", row.oracle);
      std::printf("\n");
    }
  }
  std::printf("%s %s %s: %d/%zu rows pass (%.1f s)\n", id.c_str(),
              result.pass ? "PASS" : "FAIL",
              rspic::ToString(result.kind).c_str(), passed,
              result.rows.size(), seconds);
  return result.pass;
}

// The same configs under one and three workers must give identical bytes.
bool RunDeterminism(const fs::path& configs, const fs::path& work) {
  const std::vector<std::string> ids = {"A6", "A9", "A10"};
  bool ok = true;
  std::ostringstream sink;
  for (const auto& id : ids) {
    const fs::path config = configs / Configs().at(id);
    const fs::path one = work / (id + "_w1");
    const fs::path three = work / (id + "_w3");
    const int rc1 = rspic::RunCommand(config, 1, one, sink, sink);
    const int rc3 = rspic::RunCommand(config, 3, three, sink, sink);
    const bool same = rc1 != 1 && rc3 != 1 &&
                      Slurp(one / "results.csv") == Slurp(three / "results.csv");
    if (!same) std::printf("  %s differs between 1 and 3 workers\n", id.c_str());
    ok = ok && same;
  }
  std::printf("A11 %s determinism: %zu configs byte-identical at 1 and 3 "
              "workers\n",
              ok ? "PASS" : "FAIL", ids.size());
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: rspic_acceptance <A1..A11|all> <configs dir> "
                 "[work dir]\n";
    return 1;
  }
  const std::string which = argv[1];
  const fs::path configs = argv[2];
  const fs::path work =
      argc > 3 ? fs::path(argv[3]) : fs::temp_directory_path() / "rspic_acceptance";
  std::vector<std::string> ids;
  if (which == "all") {
    for (int i = 1; i <= 11; ++i) ids.push_back("A" + std::to_string(i));
  } else {
    ids.push_back(which);
  }
  bool ok = true;
  try {
    for (const auto& id : ids) {
      if (id == "A11") {
        ok = RunDeterminism(configs, work) && ok;
      } else if (Configs().count(id) != 0) {
        ok = RunCriterion(id, configs) && ok;
      } else {
        std::cerr << "unknown criterion " << id << "\n";
        return 1;
      }
      std::fflush(stdout);
    }
  } catch (const std::exception& e) {
    std::printf("%s FAIL error: %s\n", which.c_str(), e.what());
    return 1;
  }
  return ok ? 0 : 2;
}
