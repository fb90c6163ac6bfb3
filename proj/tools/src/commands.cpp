#include "lungnet_cli/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lungnet/backbone.hpp"
#include "lungnet/errors.hpp"
#include "lungnet/featmap.hpp"
#include "lungnet/golden.hpp"
#include "lungnet/weights_store.hpp"

namespace lungnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr Split kSplits[] = {Split::train, Split::val, Split::test};

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) {
        throw InputError("cannot write '" + path.string() + "'");
    }
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open '" + path.string() + "'");
    }
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void record_config(const RunConfig& config, std::string_view command) {
    write_text(config.output_dir / ("run_" + std::string(command) + ".cfg"),
               "# resolved configuration for '" + std::string(command) + "'\n" + config.to_text());
}

void require(const fs::path& path, std::string_view what) {
    if (path.empty()) {
        throw ConfigError(std::string(what) + " is not configured");
    }
}

void require_file(const fs::path& path, std::string_view what) {
    if (!fs::is_regular_file(path)) {
        throw InputError(std::string(what) + " '" + path.string() + "' does not exist");
    }
}

struct LoadedBackbone {
    BackboneGraph graph;
    std::string fingerprint;
};

LoadedBackbone load_backbone(const RunConfig& config) {
    require(config.weights, "weights");
    require_file(config.weights, "weights file");
    const NamedTensorStore store = load_container(config.weights);
    return {build_resnet50v2(store), fingerprint(store)};
}

struct HeadMeta {
    std::string fingerprint;
    std::vector<std::string> class_names;
    Activation activation = Activation::relu;
};

void save_head_meta(const HeadMeta& meta, const FitResult& fit, const fs::path& path) {
    json doc;
    doc["fingerprint"] = meta.fingerprint;
    doc["class_names"] = meta.class_names;
    doc["activation"] = std::string(to_string(meta.activation));
    doc["best_epoch"] = fit.best_epoch;
    doc["stopped_epoch"] = fit.stopped_epoch;
    write_text(path, doc.dump(1) + "\n");
}

HeadMeta load_head_meta(const fs::path& path) {
    require_file(path, "head metadata");
    try {
        const json doc = json::parse(read_text(path));
        return {doc.at("fingerprint").get<std::string>(), doc.at("class_names").get<std::vector<std::string>>(),
                parse_activation(doc.at("activation").get<std::string>())};
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

struct LoadedHead {
    HeadParams params;
    HeadMeta meta;
};

LoadedHead load_trained_head(const RunConfig& config) {
    require_file(config.head_path(), "head");
    LoadedHead h{load_head(config.head_path()), load_head_meta(config.head_meta_path())};
    if (h.params.num_classes() != h.meta.class_names.size()) {
        throw FormatError("head has " + std::to_string(h.params.num_classes()) + " outputs but its metadata lists " +
                          std::to_string(h.meta.class_names.size()) + " classes");
    }
    if (h.params.num_classes() != config.class_names.size()) {
        throw InputError("head predicts " + std::to_string(h.params.num_classes()) +
                         " classes, configuration names " + std::to_string(config.class_names.size()));
    }
    return h;
}

FeatureCache load_cache(const RunConfig& config, Split split) {
    const fs::path path = config.cache_path(split);
    require_file(path, std::string(to_string(split)) + " feature cache");
    FeatureCache cache = load_feature_cache(path);
    if (cache.class_names.size() != config.class_names.size()) {
        throw InputError(path.string() + " has " + std::to_string(cache.class_names.size()) +
                         " classes, configuration names " + std::to_string(config.class_names.size()));
    }
    return cache;
}

void check_same_source(const FeatureCache& a, const FeatureCache& b) {
    if (a.fingerprint != b.fingerprint) {
        throw InputError(std::string(to_string(a.split)) + " and " + std::string(to_string(b.split)) +
                         " caches come from different weights (" + a.fingerprint + " vs " + b.fingerprint + ")");
    }
    if (a.class_names != b.class_names) {
        throw InputError(std::string(to_string(a.split)) + " and " + std::string(to_string(b.split)) +
                         " caches disagree on class names");
    }
}

std::vector<ClassSpec> configured_classes(const RunConfig& config) {
    std::vector<ClassSpec> classes = default_classes();
    if (config.class_names.size() != classes.size()) {
        throw ConfigError("class_names lists " + std::to_string(config.class_names.size()) +
                          " classes; the dataset layout has " + std::to_string(classes.size()));
    }
    for (std::size_t i = 0; i < classes.size(); ++i) {
        classes[i].name = config.class_names[i];
    }
    return classes;
}

std::string tap_file_name(const std::string& tap) {
    std::string out = tap;
    for (char& ch : out) {
        if (ch == '/') ch = '_';
    }
    return out + ".pgm";
}

const char* format_extension(ReportFormat f) {
    return f == ReportFormat::text ? "txt" : f == ReportFormat::csv ? "csv" : "json";
}

void write_reports(const RunConfig& config, const ClassReport& report, const fs::path& dir, std::ostream& out) {
    for (ReportFormat f : config.report_formats) {
        const fs::path path = dir / (std::string("report.") + format_extension(f));
        write_text(path, render_report(report, f));
        out << "wrote " << path.string() << '\n';
    }
}

}  // namespace

void cmd_split(const RunConfig& config, const CommandOptions& options, std::ostream& out) {
    require(config.dataset_root, "dataset_root");
    const auto classes = configured_classes(config);
    const DatasetManifest indexed = index_dataset(config.dataset_root, classes);
    for (const auto& issue : indexed.issues) {
        out << "skipped " << issue.path.string() << ": " << issue.reason << '\n';
    }
    const DatasetManifest m = stratified_split(indexed, config.fractions, config.seed);
    for (std::size_t c = 0; c < m.class_names.size(); ++c) {
        const int label = static_cast<int>(c);
        out << m.class_names[c] << ": train=" << m.count(label, Split::train) << " val=" << m.count(label, Split::val)
            << " test=" << m.count(label, Split::test) << '\n';
    }
    out << "train=" << m.count(Split::train) << " val=" << m.count(Split::val) << " test=" << m.count(Split::test)
        << '\n';
    if (options.dry_run) {
        out << "dry run: manifest not written\n";
        return;
    }
    fs::create_directories(config.output_dir);
    save_manifest(m, config.manifest_path());
    record_config(config, "split");
    out << "wrote " << config.manifest_path().string() << '\n';
}

void cmd_extract(const RunConfig& config, const CommandOptions& options, std::ostream& out) {
    require_file(config.manifest_path(), "manifest");
    const DatasetManifest m = load_manifest(config.manifest_path());
    if (m.class_names != config.class_names) {
        throw InputError("manifest classes do not match the configured class_names");
    }
    const LoadedBackbone backbone = load_backbone(config);
    out << "weights " << config.weights.string() << " fingerprint " << backbone.fingerprint << " ("
        << backbone.graph.parameter_count() << " parameters)\n";
    if (options.dry_run) {
        for (Split s : kSplits) {
            out << "would extract " << m.count(s) << " " << to_string(s) << " images\n";
        }
        return;
    }
    fs::create_directories(config.cache_path(Split::train).parent_path());
    ExtractOptions ex;
    ex.batch_size = config.extract_batch;
    ex.threads = config.resolved_threads();
    ex.augment_flips = config.augment_flips;
    ex.seed = config.seed;
    for (Split s : kSplits) {
        const std::string name(to_string(s));
        std::size_t next_report = 0;
        ex.progress = [&](std::size_t done, std::size_t total) {
            if (done >= next_report || done == total) {
                out << "extract " << name << ' ' << done << '/' << total << '\n' << std::flush;
                next_report = done + std::max<std::size_t>(total / 10, 1);
            }
        };
        const FeatureCache cache = extract_and_cache(backbone.graph, backbone.fingerprint, m, s, config.cache_path(s), ex);
        out << "wrote " << config.cache_path(s).string() << " [" << cache.features.rows() << ','
            << cache.features.cols() << "]\n";
    }
    record_config(config, "extract");
}

void cmd_train(const RunConfig& config, const CommandOptions& options, std::ostream& out) {
    config.train.validate();
    const FeatureCache train = load_cache(config, Split::train);
    const FeatureCache val = load_cache(config, Split::val);
    check_same_source(train, val);
    out << "lr=" << config.train.learning_rate << " batch=" << config.train.batch_size
        << " max_epochs=" << config.train.max_epochs << '\n';
    out << "patience=" << config.train.patience << " optimizer=" << to_string(config.train.optimizer)
        << " activation=" << to_string(config.train.activation) << " hidden=" << config.train.hidden_width
        << " seed=" << config.train.seed << '\n';
    out << "train " << train.size() << " x " << train.features.cols() << ", val " << val.size() << '\n';
    if (options.dry_run) {
        out << "dry run: no training\n";
        return;
    }
    const FitResult fit_result = fit(train, val, config.train);
    for (const auto& e : fit_result.history) {
        out << "epoch " << e.epoch << " loss=" << fixed4(e.train_loss) << " acc=" << fixed4(e.train_accuracy)
            << " val_loss=" << fixed4(e.val_loss) << " val_acc=" << fixed4(e.val_accuracy) << '\n';
    }
    out << "stopped at epoch " << fit_result.stopped_epoch << " (best epoch " << fit_result.best_epoch << ")\n";
    fs::create_directories(config.output_dir);
    save_head(fit_result.params, config.head_path());
    save_head_meta({train.fingerprint, train.class_names, config.train.activation}, fit_result,
                   config.head_meta_path());
    save_history(fit_result.history, config.history_path());
    record_config(config, "train");
    out << "wrote " << config.head_path().string() << '\n';
}

void cmd_evaluate(const RunConfig& config, const CommandOptions& options, std::ostream& out) {
    const LoadedHead head = load_trained_head(config);
    const FeatureCache test = load_cache(config, Split::test);
    if (test.fingerprint != head.meta.fingerprint) {
        throw InputError("test cache fingerprint " + test.fingerprint + " does not match the head's training weights " +
                         head.meta.fingerprint);
    }
    if (test.features.cols() != head.params.input_width()) {
        throw ShapeError("test features are " + std::to_string(test.features.cols()) + " wide, head expects " +
                         std::to_string(head.params.input_width()));
    }
    out << "test " << test.size() << " samples\n";
    if (options.dry_run) {
        out << "dry run: no evaluation\n";
        return;
    }
    const Prediction pred = predict(head.params, test.features, head.meta.activation);
    const ConfusionMatrix cm = confusion_matrix(test.labels, pred.labels, config.class_names.size(), config.class_names);
    const ClassReport report = classification_report(cm);

    std::ostringstream csv;
    csv << "path,true,predicted";
    for (const auto& n : config.class_names) csv << ",p_" << n;
    csv << '\n' << std::setprecision(9);
    for (std::size_t i = 0; i < test.size(); ++i) {
        csv << test.paths[i] << ',' << test.labels[i] << ',' << pred.labels[i];
        for (float p : pred.probs.row(i)) csv << ',' << p;
        csv << '\n';
    }
    write_text(config.eval_dir() / "predictions.csv", csv.str());
    write_text(config.eval_dir() / "confusion.csv", render_confusion_csv(cm));
    write_reports(config, report, config.eval_dir(), out);
    record_config(config, "evaluate");
    out << render_report(report, ReportFormat::text);
    out << "accuracy=" << fixed4(report.accuracy) << '\n';
}

void cmd_predict(const RunConfig& config, const CommandOptions& options, const std::vector<fs::path>& images,
                 std::ostream& out) {
    if (images.empty()) {
        throw ConfigError("predict needs at least one image");
    }
    const LoadedBackbone backbone = load_backbone(config);
    const LoadedHead head = load_trained_head(config);
    if (head.meta.fingerprint != backbone.fingerprint) {
        throw InputError("head was trained on features from weights " + head.meta.fingerprint + ", not " +
                         backbone.fingerprint);
    }
    for (const auto& img : images) require_file(img, "image");
    if (options.dry_run) {
        out << "dry run: " << images.size() << " images ready\n";
        return;
    }
    std::ostringstream csv;
    csv << "path,predicted";
    for (const auto& n : config.class_names) csv << ",p_" << n;
    csv << '\n' << std::setprecision(9);
    for (const auto& img : images) {
        const Matrix feats = backbone.graph.forward_features(load_and_preprocess(img), config.resolved_threads());
        const Prediction p = predict(head.params, feats, head.meta.activation);
        out << img.string() << '\t' << config.class_names[static_cast<std::size_t>(p.labels[0])];
        csv << img.string() << ',' << config.class_names[static_cast<std::size_t>(p.labels[0])];
        for (std::size_t k = 0; k < p.probs.cols(); ++k) {
            out << '\t' << fixed4(p.probs(0, k));
            csv << ',' << p.probs(0, k);
        }
        out << '\n';
        csv << '\n';
    }
    write_text(config.output_dir / "predict.csv", csv.str());
    record_config(config, "predict");
}

void cmd_featmaps(const RunConfig& config, const CommandOptions& options, const fs::path& image, std::ostream& out) {
    require(image, "image");
    const LoadedBackbone backbone = load_backbone(config);
    const std::vector<std::string> taps = config.taps.empty() ? default_taps() : config.taps;
    for (const auto& t : taps) {
        backbone.graph.tap_shape(t);  // throws LookupError listing valid taps
    }
    std::optional<LoadedHead> head;
    if (config.occlusion) {
        head = load_trained_head(config);
    }
    const Tensor4 x = load_and_preprocess(image);
    if (options.dry_run) {
        out << "dry run: " << taps.size() << " taps" << (config.occlusion ? " plus occlusion" : "") << '\n';
        return;
    }
    const fs::path dir = config.featmap_dir() / image.stem();
    fs::create_directories(dir);
    const auto acts = backbone.graph.forward_with_taps(x, taps);
    for (const auto& t : taps) {
        ActivationMap map = channel_map(acts.at(t), config.aggregation);
        map.tap = t;
        map.source = image.string();
        const fs::path path = dir / tap_file_name(t);
        write_pgm(normalize_to_u8(map), path);
        out << "wrote " << path.string() << " (" << map.width << 'x' << map.height << ")\n";
    }
    if (head) {
        OcclusionOptions occ;
        occ.patch_size = config.occlusion_patch;
        occ.stride = config.occlusion_stride;
        occ.threads = config.resolved_threads();
        const ActivationMap map = occlusion_map(backbone.graph, head->params, x, occ, head->meta.activation);
        const fs::path path = dir / "occlusion.pgm";
        write_pgm(normalize_to_u8(map), path);
        out << "wrote " << path.string() << " (" << map.width << 'x' << map.height << ")\n";
    }
    record_config(config, "featmaps");
}

void cmd_report(const RunConfig& config, const fs::path& confusion_csv, std::ostream& out) {
    require_file(confusion_csv, "confusion matrix");
    const ConfusionMatrix cm = parse_confusion_csv(read_text(confusion_csv));
    const ClassReport report = classification_report(cm);
    write_reports(config, report, config.output_dir, out);
    out << render_report(report, ReportFormat::text);
    out << "accuracy=" << fixed4(report.accuracy) << '\n';
}

void cmd_init_weights(const RunConfig& config, const fs::path& path, std::ostream& out) {
    const fs::path target = path.empty() ? config.output_dir / "random_weights.tensors" : path;
    if (!target.parent_path().empty()) {
        fs::create_directories(target.parent_path());
    }
    const NamedTensorStore store = random_resnet50v2_store(config.seed);
    save_container(store, target);
    out << "wrote " << target.string() << " fingerprint " << fingerprint(store) << '\n';
}

void cmd_inventory(const fs::path& path, std::ostream& out) {
    const ManifestExpectation inv = resnet50v2_expectation();
    if (!path.parent_path().empty()) {
        fs::create_directories(path.parent_path());
    }
    save_expectation(inv, path);
    std::size_t total = 0;
    for (const auto& t : inv.tensors) total += element_count(t.shape);
    out << "wrote " << path.string() << ": " << inv.tensors.size() << " tensors, " << total << " parameters\n";
}

void cmd_crosscheck(const RunConfig& config, const fs::path& fixtures, std::ostream& out) {
    const LoadedBackbone backbone = load_backbone(config);
    require_file(fixtures, "golden fixtures");
    const auto results = compare_golden(backbone.graph, parse_golden_fixtures(load_container(fixtures)));
    bool ok = true;
    for (const auto& r : results) {
        const bool pass = within_golden_tolerance(r);
        ok = ok && pass;
        out << (pass ? "PASS " : "FAIL ") << r.id << " features mean rel err " << std::scientific
            << std::setprecision(3) << r.feature_mean_rel_error << '\n';
        for (const auto& [tap, e] : r.tap_max_error) {
            out << "     " << r.id << ' ' << tap << " max err " << e << '\n';
        }
        out << std::defaultfloat;
    }
    if (!ok) {
        throw NumericError("backbone disagrees with golden fixtures beyond tolerance");
    }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err, const EnvLookup& env) {
    CLI::App app{"Lung histopathology classifier: frozen ResNet-50v2 features with a trained dense head."};
    app.name("lungnet");
    app.require_subcommand(1);

    fs::path config_file;
    std::vector<std::string> sets;
    CommandOptions options;
    std::vector<std::pair<std::string, std::string>> flags;
    auto flag = [&](const std::string& key) {
        return [&flags, key](const std::string& v) { flags.emplace_back(key, v); };
    };
    app.add_option("-c,--config", config_file, "Flat key = value configuration file");
    app.add_option("--set", sets, "Override a configuration key (key=value); repeatable");
    app.add_flag("--dry-run", options.dry_run, "Validate inputs without running the computation");
    app.add_option_function<std::string>("--threads", flag("threads"), "Worker threads (0: all cores)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.add_option_function<std::string>("--output-dir", flag("output_dir"), "Directory for all artifacts")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.add_option_function<std::string>("--weights", flag("weights"), "Backbone weight container")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.add_option_function<std::string>("--dataset-root", flag("dataset_root"), "Dataset root directory")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.add_option_function<std::string>("--seed", flag("seed"), "Random seed")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.fallthrough();

    auto* split = app.add_subcommand("split", "Index the dataset and write a stratified split manifest");
    auto* extract = app.add_subcommand("extract", "Extract backbone features for every split");
    auto* train = app.add_subcommand("train", "Train the classification head on cached features");
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate the head on the test cache");
    std::vector<std::string> predict_images;
    auto* predict_cmd = app.add_subcommand("predict", "Classify image files");
    predict_cmd->add_option("images", predict_images, "Image files")->required();
    std::string featmap_image;
    auto* featmaps = app.add_subcommand("featmaps", "Write feature-map PGMs for one image");
    featmaps->add_option("image", featmap_image, "Image file")->required();
    std::string confusion;
    auto* report = app.add_subcommand("report", "Render a classification report from a confusion-matrix CSV");
    report->add_option("confusion", confusion, "Confusion matrix CSV")->required();
    std::string weights_out;
    auto* init = app.add_subcommand("init-weights", "Write seeded random backbone weights");
    init->add_option("path", weights_out, "Output container (default: <output_dir>/random_weights.tensors)");
    std::string inventory_out;
    auto* inventory = app.add_subcommand("inventory", "Write the backbone tensor inventory JSON");
    inventory->add_option("path", inventory_out, "Output JSON path")->required();
    std::string fixtures;
    auto* crosscheck = app.add_subcommand("crosscheck", "Compare the backbone against golden fixtures");
    crosscheck->add_option("fixtures", fixtures, "Golden fixture container")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        ConfigSources sources;
        if (!config_file.empty()) {
            sources.file_text = read_text(config_file);
        }
        sources.env = env_overrides([&](const char* name) { return env ? env(name) : nullptr; });
        sources.command_line = flags;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("--set expects key=value, got '" + s + "'");
            }
            sources.command_line.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
        const RunConfig config = resolve_config(sources);

        if (split->parsed()) {
            cmd_split(config, options, out);
        } else if (extract->parsed()) {
            cmd_extract(config, options, out);
        } else if (train->parsed()) {
            cmd_train(config, options, out);
        } else if (evaluate->parsed()) {
            cmd_evaluate(config, options, out);
        } else if (predict_cmd->parsed()) {
            cmd_predict(config, options, {predict_images.begin(), predict_images.end()}, out);
        } else if (featmaps->parsed()) {
            cmd_featmaps(config, options, featmap_image, out);
        } else if (report->parsed()) {
            cmd_report(config, confusion, out);
        } else if (init->parsed()) {
            cmd_init_weights(config, weights_out, out);
        } else if (inventory->parsed()) {
            cmd_inventory(inventory_out, out);
        } else if (crosscheck->parsed()) {
            cmd_crosscheck(config, fixtures, out);
        }
    } catch (const ConfigError& e) {
        err << "lungnet: configuration error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "lungnet: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace lungnet::cli
