#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "lungnet_cli/run_config.hpp"

namespace lungnet::cli {

struct CommandOptions {
    bool dry_run = false;
};

// Each command throws a lungnet error on failure and writes only under
// config.output_dir. Progress and results go to `out`.
void cmd_split(const RunConfig& config, const CommandOptions& options, std::ostream& out);
void cmd_extract(const RunConfig& config, const CommandOptions& options, std::ostream& out);
void cmd_train(const RunConfig& config, const CommandOptions& options, std::ostream& out);
void cmd_evaluate(const RunConfig& config, const CommandOptions& options, std::ostream& out);
void cmd_predict(const RunConfig& config, const CommandOptions& options, const std::vector<std::filesystem::path>& images,
                 std::ostream& out);
void cmd_featmaps(const RunConfig& config, const CommandOptions& options, const std::filesystem::path& image,
                  std::ostream& out);

// Renders a report from a confusion-matrix CSV into output_dir/report.*.
void cmd_report(const RunConfig& config, const std::filesystem::path& confusion_csv, std::ostream& out);

// Seeded random backbone weights, for dry runs and smoke tests.
void cmd_init_weights(const RunConfig& config, const std::filesystem::path& path, std::ostream& out);

// Writes the backbone's tensor-name/shape inventory as JSON.
void cmd_inventory(const std::filesystem::path& path, std::ostream& out);

// Compares the backbone against golden fixtures; throws NumericError when
// any fixture is outside tolerance.
void cmd_crosscheck(const RunConfig& config, const std::filesystem::path& fixtures, std::ostream& out);

using EnvLookup = std::function<const char*(const char*)>;

// Full command-line entry point. Returns the process exit status:
// 0 success, 1 runtime failure, 2 usage or configuration error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err, const EnvLookup& env);

}  // namespace lungnet::cli
