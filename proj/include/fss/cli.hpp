#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "fss/trainer.hpp"

namespace fss::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitRuntime = 3;

/// Overrides applied on top of the task defaults: config file first, then flags.
struct TrainOverrides {
  std::optional<std::filesystem::path> config_file;
  bool no_multi_patch = false;
  bool no_style = false;
  std::optional<std::uint64_t> seed;
};

/// Resolves the training configuration and collects warnings (e.g. --no-style with s2i).
TrainConfig resolve_train_config(Task task, const TrainOverrides& overrides, std::vector<std::string>* warnings = nullptr);

/// Runs the command line; machine output goes to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fss::cli
