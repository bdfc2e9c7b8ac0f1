#pragma once

#include "gsde/config.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace gsde {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitNumerical = 3,
  kExitSolverPrecondition = 4,
  kExitVerifyFailed = 5,
};

/// Runs one of estimate / pde / verify / bounds on a raw (unnormalized) config,
/// writing its outputs under out_dir. Errors are reported on `log` and mapped
/// to exit codes; nothing throws.
int run_command(const std::string& command, const nlohmann::json& raw_config, const std::string& out_dir,
                std::optional<std::uint64_t> seed, std::ostream& log);

/// `gsde <estimate|pde|verify|bounds> --config <path> [--out <dir>] [--seed <u64>]`
int run_cli(int argc, char** argv);

}  // namespace gsde
