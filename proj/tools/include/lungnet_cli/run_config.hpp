#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lungnet/dataset.hpp"
#include "lungnet/featmap.hpp"
#include "lungnet/head.hpp"
#include "lungnet/metrics.hpp"

namespace lungnet::cli {

/// Everything a subcommand needs. Resolved from, in increasing precedence:
/// built-in defaults, a flat `key = value` file, LUNGNET_<KEY> environment
/// variables, and command-line overrides.
struct RunConfig {
    std::filesystem::path dataset_root;
    std::filesystem::path weights;
    std::filesystem::path output_dir = "lungnet_out";
    std::uint64_t seed = 0;
    SplitFractions fractions;
    TrainConfig train;
    std::vector<std::string> class_names{"benign", "adenocarcinoma", "squamous"};
    std::vector<std::string> taps;  // empty: default taps
    std::vector<ReportFormat> report_formats{ReportFormat::text, ReportFormat::csv, ReportFormat::json};
    int threads = 0;  // 0: hardware concurrency
    std::size_t extract_batch = 25;
    bool augment_flips = false;
    bool occlusion = false;
    std::size_t occlusion_patch = 32;
    std::size_t occlusion_stride = 32;
    ChannelReduce aggregation = ChannelReduce::mean;

    // Throws ConfigError for unknown keys or unparsable values.
    void set(std::string_view key, std::string_view value);

    // Flat key = value text, one line per key, in a stable order. Parsing it
    // back with apply_file_text() reproduces this config.
    std::string to_text() const;

    int resolved_threads() const;

    // Artifact locations, all under output_dir.
    std::filesystem::path manifest_path() const { return output_dir / "manifest.json"; }
    std::filesystem::path cache_path(Split split) const;
    std::filesystem::path head_path() const { return output_dir / "head.tensors"; }
    std::filesystem::path head_meta_path() const { return output_dir / "head.json"; }
    std::filesystem::path history_path() const { return output_dir / "history.json"; }
    std::filesystem::path eval_dir() const { return output_dir / "evaluation"; }
    std::filesystem::path featmap_dir() const { return output_dir / "featmaps"; }
};

// Every key accepted by RunConfig::set.
const std::vector<std::string>& config_keys();

// `key = value` lines; blank lines and lines starting with '#' are ignored.
// Throws ConfigError naming the line on malformed input.
std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text);

// Collects LUNGNET_<KEY> variables for every known key from `lookup`.
template <typename Lookup>
std::vector<std::pair<std::string, std::string>> env_overrides(Lookup&& lookup) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& key : config_keys()) {
        std::string var = "LUNGNET_";
        for (char ch : key) {
            var += static_cast<char>(ch >= 'a' && ch <= 'z' ? ch - 'a' + 'A' : ch);
        }
        if (const char* v = lookup(var.c_str())) {
            out.emplace_back(key, v);
        }
    }
    return out;
}

struct ConfigSources {
    std::string file_text;  // empty when no config file
    std::vector<std::pair<std::string, std::string>> env;
    std::vector<std::pair<std::string, std::string>> command_line;
};

RunConfig resolve_config(const ConfigSources& sources);

}  // namespace lungnet::cli
