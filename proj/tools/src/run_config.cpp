#include "lungnet_cli/run_config.hpp"

#include <charconv>
#include <sstream>
#include <thread>

#include "lungnet/errors.hpp"

namespace lungnet::cli {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const std::string item = trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start));
        if (!item.empty()) {
            out.push_back(item);
        }
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

template <typename T>
T parse_integer(std::string_view key, std::string_view text) {
    T v{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ConfigError("config '" + std::string(key) + "': '" + std::string(text) + "' is not a valid integer");
    }
    return v;
}

double parse_double(std::string_view key, std::string_view text) {
    const std::string s(text);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) {
        throw ConfigError("config '" + std::string(key) + "': '" + s + "' is not a number");
    }
    return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw ConfigError("config '" + std::string(key) + "': '" + std::string(text) + "' is not a boolean");
}

template <typename F>
auto rethrow_as_config(std::string_view key, F&& f) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("config '" + std::string(key) + "': " + e.what());
    }
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& s : items) {
        out += (out.empty() ? "" : ",") + s;
    }
    return out;
}

// Shortest text that parses back to the same double.
std::string number(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys{
        "dataset_root", "weights",       "output_dir",     "seed",          "train_fraction",  "val_fraction",
        "test_fraction", "learning_rate", "batch_size",     "max_epochs",    "patience",        "optimizer",
        "activation",   "hidden_width",  "class_names",    "taps",          "report_formats",  "threads",
        "extract_batch", "augment_flips", "occlusion",      "occlusion_patch", "occlusion_stride", "aggregation"};
    return keys;
}

void RunConfig::set(std::string_view key, std::string_view raw) {
    const std::string value = trim(raw);
    if (key == "dataset_root") {
        dataset_root = value;
    } else if (key == "weights") {
        weights = value;
    } else if (key == "output_dir") {
        if (value.empty()) {
            throw ConfigError("config 'output_dir' must not be empty");
        }
        output_dir = value;
    } else if (key == "seed") {
        seed = parse_integer<std::uint64_t>(key, value);
        train.seed = seed;
    } else if (key == "train_fraction") {
        fractions.train = parse_double(key, value);
    } else if (key == "val_fraction") {
        fractions.val = parse_double(key, value);
    } else if (key == "test_fraction") {
        fractions.test = parse_double(key, value);
    } else if (key == "learning_rate") {
        train.learning_rate = parse_double(key, value);
    } else if (key == "batch_size") {
        train.batch_size = parse_integer<std::size_t>(key, value);
    } else if (key == "max_epochs") {
        train.max_epochs = parse_integer<std::size_t>(key, value);
    } else if (key == "patience") {
        train.patience = parse_integer<std::size_t>(key, value);
    } else if (key == "optimizer") {
        train.optimizer = parse_optimizer(value);
    } else if (key == "activation") {
        train.activation = parse_activation(value);
    } else if (key == "hidden_width") {
        train.hidden_width = parse_integer<std::size_t>(key, value);
    } else if (key == "class_names") {
        class_names = split_list(value);
        if (class_names.size() < 2) {
            throw ConfigError("config 'class_names' needs at least two names");
        }
        train.num_classes = class_names.size();
    } else if (key == "taps") {
        taps = split_list(value);
    } else if (key == "report_formats") {
        report_formats.clear();
        for (const auto& f : split_list(value)) {
            report_formats.push_back(rethrow_as_config(key, [&] { return parse_report_format(f); }));
        }
    } else if (key == "threads") {
        threads = parse_integer<int>(key, value);
        if (threads < 0) {
            throw ConfigError("config 'threads' must be non-negative");
        }
    } else if (key == "extract_batch") {
        extract_batch = parse_integer<std::size_t>(key, value);
        if (extract_batch == 0) {
            throw ConfigError("config 'extract_batch' must be positive");
        }
    } else if (key == "augment_flips") {
        augment_flips = parse_bool(key, value);
    } else if (key == "occlusion") {
        occlusion = parse_bool(key, value);
    } else if (key == "occlusion_patch") {
        occlusion_patch = parse_integer<std::size_t>(key, value);
    } else if (key == "occlusion_stride") {
        occlusion_stride = parse_integer<std::size_t>(key, value);
    } else if (key == "aggregation") {
        if (value == "mean") {
            aggregation = ChannelReduce::mean;
        } else if (value == "max") {
            aggregation = ChannelReduce::max;
        } else {
            throw ConfigError("config 'aggregation': expected mean or max, got '" + value + "'");
        }
    } else {
        throw ConfigError("unknown config key '" + std::string(key) + "'");
    }
}

std::string RunConfig::to_text() const {
    std::vector<std::string> formats;
    for (auto f : report_formats) {
        formats.emplace_back(f == ReportFormat::text ? "text" : f == ReportFormat::csv ? "csv" : "json");
    }
    std::ostringstream out;
    out << "dataset_root = " << dataset_root.string() << '\n'
        << "weights = " << weights.string() << '\n'
        << "output_dir = " << output_dir.string() << '\n'
        << "seed = " << seed << '\n'
        << "train_fraction = " << number(fractions.train) << '\n'
        << "val_fraction = " << number(fractions.val) << '\n'
        << "test_fraction = " << number(fractions.test) << '\n'
        << "learning_rate = " << number(train.learning_rate) << '\n'
        << "batch_size = " << train.batch_size << '\n'
        << "max_epochs = " << train.max_epochs << '\n'
        << "patience = " << train.patience << '\n'
        << "optimizer = " << to_string(train.optimizer) << '\n'
        << "activation = " << to_string(train.activation) << '\n'
        << "hidden_width = " << train.hidden_width << '\n'
        << "class_names = " << join(class_names) << '\n'
        << "taps = " << join(taps) << '\n'
        << "report_formats = " << join(formats) << '\n'
        << "threads = " << threads << '\n'
        << "extract_batch = " << extract_batch << '\n'
        << "augment_flips = " << (augment_flips ? "true" : "false") << '\n'
        << "occlusion = " << (occlusion ? "true" : "false") << '\n'
        << "occlusion_patch = " << occlusion_patch << '\n'
        << "occlusion_stride = " << occlusion_stride << '\n'
        << "aggregation = " << (aggregation == ChannelReduce::mean ? "mean" : "max") << '\n';
    return out.str();
}

int RunConfig::resolved_threads() const {
    if (threads > 0) {
        return threads;
    }
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

std::filesystem::path RunConfig::cache_path(Split split) const {
    return output_dir / "features" / (std::string(to_string(split)) + ".tensors");
}

std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        ++line_no;
        const std::string line = trim(text.substr(start, end - start));
        start = end + 1;
        if (line.empty() || line.front() == '#') {
            if (end == text.size()) break;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value, got '" + line + "'");
        }
        const std::string key = trim(std::string_view(line).substr(0, eq));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": missing key");
        }
        out.emplace_back(key, trim(std::string_view(line).substr(eq + 1)));
        if (end == text.size()) break;
    }
    return out;
}

RunConfig resolve_config(const ConfigSources& sources) {
    RunConfig cfg;
    for (const auto& [k, v] : parse_config_text(sources.file_text)) {
        cfg.set(k, v);
    }
    for (const auto& [k, v] : sources.env) {
        cfg.set(k, v);
    }
    for (const auto& [k, v] : sources.command_line) {
        cfg.set(k, v);
    }
    return cfg;
}

}  // namespace lungnet::cli
