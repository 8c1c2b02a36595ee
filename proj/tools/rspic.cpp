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

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rspic/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Risk-sensitive path integral control experiments"};
  app.set_version_flag("--version", RSPIC_VERSION);
  app.require_subcommand(1);

  std::string run_config;
  std::optional<int> workers;
  std::optional<std::string> out_dir;
  auto* run = app.add_subcommand("run", "Run one experiment config");
  run->add_option("config", run_config, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--workers", workers,
                  "Worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber);
  run->add_option("--out", out_dir, "Output directory (default: config output)");

  std::string validate_config;
  auto* validate =
      app.add_subcommand("validate", "Check a config and print derived values");
  validate->add_option("config", validate_config, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*run) {
    std::optional<std::filesystem::path> dir;
    if (out_dir) dir = *out_dir;
    return rspic::RunCommand(run_config, workers, dir, std::cout, std::cerr);
  }
  return rspic::ValidateCommand(validate_config, std::cout, std::cerr);
}
