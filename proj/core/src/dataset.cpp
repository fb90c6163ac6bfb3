#include "lungnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "json.hpp"
#include "lungnet/errors.hpp"
#include "lungnet/parallel.hpp"
#include "lungnet/rng.hpp"
#include "lungnet/weights_store.hpp"

namespace fs = std::filesystem;

namespace lungnet {

namespace {

using json = nlohmann::ordered_json;

// Cheap format probe by magic bytes; decoding happens at extraction time.
std::string probe_image(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        return "cannot open file";
    }
    unsigned char magic[8] = {};
    in.read(reinterpret_cast<char*>(magic), sizeof(magic));
    const auto got = static_cast<std::size_t>(in.gcount());
    auto starts = [&](std::initializer_list<unsigned char> sig) {
        return got >= sig.size() && std::equal(sig.begin(), sig.end(), magic);
    };
    if (starts({0xFF, 0xD8, 0xFF}) || starts({0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A}) || starts({'B', 'M'}) ||
        starts({'I', 'I', 0x2A, 0x00}) || starts({'M', 'M', 0x00, 0x2A}) || starts({'P', '3'}) ||
        starts({'P', '6'}) || starts({'P', '2'}) || starts({'P', '5'})) {
        return {};
    }
    return got == 0 ? "empty file" : "unrecognized image format";
}

json manifest_counts(const DatasetManifest& m) {
    json counts = {{"total", m.records.size()},
                   {"train", m.count(Split::train)},
                   {"val", m.count(Split::val)},
                   {"test", m.count(Split::test)},
                   {"unassigned", m.count(Split::none)},
                   {"issues", m.issues.size()}};
    json per_class = json::object();
    for (std::size_t c = 0; c < m.class_names.size(); ++c) {
        const int label = static_cast<int>(c);
        per_class[m.class_names[c]] = {{"total", m.class_count(label)},
                                       {"train", m.count(label, Split::train)},
                                       {"val", m.count(label, Split::val)},
                                       {"test", m.count(label, Split::test)}};
    }
    counts["per_class"] = per_class;
    return counts;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open '" + path.string() + "'");
    }
    try {
        return json::parse(in);
    } catch (const json::exception& err) {
        throw InputError(path.string() + ": malformed JSON: " + err.what());
    }
}

void write_json(const json& doc, const fs::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot open '" + path.string() + "' for writing");
    }
    out << doc.dump(1) << '\n';
    if (!out) {
        throw InputError("write to '" + path.string() + "' failed");
    }
}

}  // namespace

std::string_view to_string(Split split) {
    switch (split) {
        case Split::train:
            return "train";
        case Split::val:
            return "val";
        case Split::test:
            return "test";
        case Split::none:
            break;
    }
    return "none";
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    if (text == "test") return Split::test;
    if (text == "none") return Split::none;
    throw InputError("unknown split '" + std::string(text) + "'");
}

std::vector<ClassSpec> default_classes() {
    return {{"benign", "lung_n"}, {"adenocarcinoma", "lung_aca"}, {"squamous", "lung_scc"}};
}

std::size_t DatasetManifest::count(Split split) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [&](const SampleRecord& r) { return r.split == split; }));
}

std::size_t DatasetManifest::count(int label, Split split) const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const SampleRecord& r) {
        return r.label == label && r.split == split;
    }));
}

std::size_t DatasetManifest::class_count(int label) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [&](const SampleRecord& r) { return r.label == label; }));
}

std::vector<const SampleRecord*> DatasetManifest::records_in(Split split) const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : records) {
        if (r.split == split) {
            out.push_back(&r);
        }
    }
    return out;
}

DatasetManifest index_dataset(const fs::path& root, std::span<const ClassSpec> classes) {
    const std::vector<ClassSpec> defaults = default_classes();
    if (classes.empty()) {
        classes = defaults;
    }
    if (!fs::is_directory(root)) {
        throw InputError("dataset root '" + root.string() + "' is not a directory");
    }
    DatasetManifest manifest;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const fs::path dir = root / classes[c].directory;
        if (!fs::is_directory(dir)) {
            throw InputError("class directory '" + dir.string() + "' for class '" + classes[c].name + "' is missing");
        }
        manifest.class_names.push_back(classes[c].name);

        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string name = entry.path().filename().string();
            if (name.empty() || name.front() == '.' || entry.is_directory()) {
                continue;
            }
            files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end(),
                  [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });

        std::size_t accepted = 0;
        for (const auto& file : files) {
            const std::string problem = probe_image(file);
            if (!problem.empty()) {
                manifest.issues.push_back({file, problem});
                continue;
            }
            manifest.records.push_back({file, static_cast<int>(c), Split::none});
            ++accepted;
        }
        if (accepted == 0) {
            throw InputError("class '" + classes[c].name + "' (" + dir.string() + ") contains no readable images");
        }
    }
    return manifest;
}

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& f) {
    const std::array<double, 3> fr{f.train, f.val, f.test};
    for (double v : fr) {
        if (!(v > 0.0)) {
            throw InputError("split fractions must be positive");
        }
    }
    if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9) {
        throw InputError("split fractions must sum to 1");
    }
    std::array<std::size_t, 3> counts{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        // The epsilon absorbs representation error such as 0.15 * 5000 = 749.999...
        counts[i] = static_cast<std::size_t>(std::floor(fr[i] * static_cast<double>(n) + 1e-9));
        assigned += counts[i];
    }
    for (std::size_t i = 0; assigned < n; i = (i + 1) % 3, ++assigned) {
        ++counts[i];
    }
    return counts;
}

DatasetManifest stratified_split(DatasetManifest manifest, const SplitFractions& fractions, std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t c = 0; c < manifest.class_names.size(); ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < manifest.records.size(); ++i) {
            if (manifest.records[i].label == static_cast<int>(c)) {
                members.push_back(i);
            }
        }
        const auto counts = split_counts(members.size(), fractions);
        if (counts[0] == 0 || counts[1] == 0 || counts[2] == 0) {
            throw InputError("class '" + manifest.class_names[c] + "' has " + std::to_string(members.size()) +
                             " samples, too few to give every split at least one");
        }
        rng.shuffle(members.begin(), members.end());
        for (std::size_t j = 0; j < members.size(); ++j) {
            const Split s = j < counts[0] ? Split::train : j < counts[0] + counts[1] ? Split::val : Split::test;
            manifest.records[members[j]].split = s;
        }
    }
    manifest.seed = seed;
    manifest.fractions = fractions;
    return manifest;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
    json doc;
    doc["class_names"] = m.class_names;
    doc["seed"] = m.seed;
    doc["fractions"] = {m.fractions.train, m.fractions.val, m.fractions.test};
    doc["counts"] = manifest_counts(m);
    json records = json::array();
    for (const auto& r : m.records) {
        records.push_back({{"path", r.path.string()}, {"label", r.label}, {"split", std::string(to_string(r.split))}});
    }
    doc["records"] = std::move(records);
    json issues = json::array();
    for (const auto& e : m.issues) {
        issues.push_back({{"path", e.path.string()}, {"reason", e.reason}});
    }
    doc["issues"] = std::move(issues);
    write_json(doc, path);
}

DatasetManifest load_manifest(const fs::path& path) {
    const json doc = read_json(path);
    DatasetManifest m;
    try {
        m.class_names = doc.at("class_names").get<std::vector<std::string>>();
        m.seed = doc.at("seed").get<std::uint64_t>();
        const auto fr = doc.at("fractions").get<std::vector<double>>();
        if (fr.size() != 3) {
            throw InputError(path.string() + ": fractions needs three values");
        }
        m.fractions = {fr[0], fr[1], fr[2]};
        for (const auto& r : doc.at("records")) {
            SampleRecord rec{r.at("path").get<std::string>(), r.at("label").get<int>(),
                             parse_split(r.at("split").get<std::string>())};
            if (rec.label < 0 || static_cast<std::size_t>(rec.label) >= m.class_names.size()) {
                throw InputError(path.string() + ": record label " + std::to_string(rec.label) + " out of range");
            }
            m.records.push_back(std::move(rec));
        }
        if (doc.contains("issues")) {
            for (const auto& e : doc.at("issues")) {
                m.issues.push_back({e.at("path").get<std::string>(), e.at("reason").get<std::string>()});
            }
        }
    } catch (const json::exception& err) {
        throw InputError(path.string() + ": invalid manifest: " + err.what());
    }
    return m;
}

RgbImage decode_image(const fs::path& path) {
    const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty() || bgr.type() != CV_8UC3) {
        throw InputError("cannot decode image '" + path.string() + "'");
    }
    RgbImage img;
    img.height = static_cast<std::size_t>(bgr.rows);
    img.width = static_cast<std::size_t>(bgr.cols);
    img.pixels.resize(img.height * img.width * 3);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* src = bgr.ptr<std::uint8_t>(y);
        std::uint8_t* dst = img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3;
        for (int x = 0; x < bgr.cols; ++x) {
            dst[3 * x + 0] = src[3 * x + 2];
            dst[3 * x + 1] = src[3 * x + 1];
            dst[3 * x + 2] = src[3 * x + 0];
        }
    }
    return img;
}

std::vector<float> resize_bilinear(std::span<const float> src, std::size_t in_h, std::size_t in_w,
                                   std::size_t channels, std::size_t out_h, std::size_t out_w) {
    if (src.size() != in_h * in_w * channels || in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0) {
        throw ShapeError("resize_bilinear: inconsistent dimensions");
    }
    struct Tap {
        std::size_t lo;
        std::size_t hi;
        float frac;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t i = 0; i < out; ++i) {
            const double pos = std::max((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0);
            const auto lo = std::min(static_cast<std::size_t>(pos), in - 1);
            const std::size_t hi = std::min(lo + 1, in - 1);
            t[i] = {lo, hi, static_cast<float>(pos - static_cast<double>(lo))};
        }
        return t;
    };
    const auto ty = taps(in_h, out_h);
    const auto tx = taps(in_w, out_w);
    std::vector<float> out(out_h * out_w * channels);
    for (std::size_t y = 0; y < out_h; ++y) {
        const float* r0 = src.data() + ty[y].lo * in_w * channels;
        const float* r1 = src.data() + ty[y].hi * in_w * channels;
        const float fy = ty[y].frac;
        for (std::size_t x = 0; x < out_w; ++x) {
            const std::size_t x0 = tx[x].lo * channels;
            const std::size_t x1 = tx[x].hi * channels;
            const float fx = tx[x].frac;
            float* d = out.data() + (y * out_w + x) * channels;
            for (std::size_t ch = 0; ch < channels; ++ch) {
                const float top = r0[x0 + ch] + (r0[x1 + ch] - r0[x0 + ch]) * fx;
                const float bottom = r1[x0 + ch] + (r1[x1 + ch] - r1[x0 + ch]) * fx;
                d[ch] = top + (bottom - top) * fy;
            }
        }
    }
    return out;
}

Tensor4 preprocess(const RgbImage& image, std::size_t size) {
    if (image.pixels.size() != image.height * image.width * 3 || image.pixels.empty()) {
        throw InputError("preprocess: image buffer does not match its dimensions");
    }
    std::vector<float> raw(image.pixels.begin(), image.pixels.end());
    std::vector<float> resized = resize_bilinear(raw, image.height, image.width, 3, size, size);
    for (float& v : resized) {
        v = std::clamp(v / 127.5f - 1.0f, -1.0f, 1.0f);
    }
    return Tensor4({1, size, size, 3}, std::move(resized));
}

Tensor4 load_and_preprocess(const fs::path& path, std::size_t size) { return preprocess(decode_image(path), size); }

void flip_horizontal(Tensor4& image) {
    for (std::size_t i = 0; i < image.n(); ++i) {
        for (std::size_t y = 0; y < image.h(); ++y) {
            for (std::size_t x = 0; x < image.w() / 2; ++x) {
                std::swap_ranges(image.pixel(i, y, x), image.pixel(i, y, x) + image.c(),
                                 image.pixel(i, y, image.w() - 1 - x));
            }
        }
    }
}

void flip_vertical(Tensor4& image) {
    const std::size_t row = image.w() * image.c();
    for (std::size_t i = 0; i < image.n(); ++i) {
        for (std::size_t y = 0; y < image.h() / 2; ++y) {
            std::swap_ranges(image.pixel(i, y, 0), image.pixel(i, y, 0) + row, image.pixel(i, image.h() - 1 - y, 0));
        }
    }
}

void FeatureCache::validate() const {
    if (features.rows() != labels.size() || paths.size() != labels.size()) {
        throw FormatError("feature cache: " + std::to_string(features.rows()) + " feature rows, " +
                          std::to_string(labels.size()) + " labels, " + std::to_string(paths.size()) +
                          " paths disagree");
    }
}

fs::path sidecar_path(const fs::path& cache_path) {
    fs::path p = cache_path;
    p += ".json";
    return p;
}

void save_feature_cache(const FeatureCache& cache, const fs::path& path) {
    cache.validate();
    NamedTensorStore store;
    store.add("features", {cache.features.rows(), cache.features.cols()},
              std::vector<float>(cache.features.data().begin(), cache.features.data().end()));
    store.add("labels", {cache.labels.size()}, std::vector<float>(cache.labels.begin(), cache.labels.end()));
    save_container(store, path);

    json side;
    side["split"] = std::string(to_string(cache.split));
    side["fingerprint"] = cache.fingerprint;
    side["feature_width"] = cache.features.cols();
    side["class_names"] = cache.class_names;
    side["paths"] = cache.paths;
    write_json(side, sidecar_path(path));
}

FeatureCache load_feature_cache(const fs::path& path) {
    const NamedTensorStore store = load_container(path);
    const TensorEntry& feats = store.get("features");
    const TensorEntry& labels = store.get("labels");
    if (feats.shape.size() != 2 || labels.shape.size() != 1) {
        throw FormatError(path.string() + ": features must be [N, width] and labels [N]");
    }
    FeatureCache cache;
    cache.features = Matrix(feats.shape[0], feats.shape[1], feats.data);
    for (float v : labels.data) {
        if (v != std::floor(v) || v < 0.0f) {
            throw FormatError(path.string() + ": labels must be non-negative integers");
        }
        cache.labels.push_back(static_cast<int>(v));
    }
    const json side = read_json(sidecar_path(path));
    try {
        cache.split = parse_split(side.at("split").get<std::string>());
        cache.fingerprint = side.at("fingerprint").get<std::string>();
        cache.class_names = side.at("class_names").get<std::vector<std::string>>();
        cache.paths = side.at("paths").get<std::vector<std::string>>();
    } catch (const json::exception& err) {
        throw FormatError(sidecar_path(path).string() + ": " + err.what());
    }
    cache.validate();
    return cache;
}

FeatureCache extract_and_cache(const BackboneGraph& backbone, const std::string& weights_fingerprint,
                               const DatasetManifest& manifest, Split split, const fs::path& out_path,
                               const ExtractOptions& options) {
    const auto records = manifest.records_in(split);
    if (records.empty()) {
        throw InputError("split '" + std::string(to_string(split)) + "' has no records");
    }
    const std::size_t batch_size = std::max<std::size_t>(options.batch_size, 1);
    const Shape4 in = backbone.input_shape();

    FeatureCache cache;
    cache.features = Matrix(records.size(), backbone.feature_width());
    cache.class_names = manifest.class_names;
    cache.fingerprint = weights_fingerprint;
    cache.split = split;

    for (std::size_t begin = 0; begin < records.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, records.size());
        Tensor4 batch({end - begin, in.h, in.w, in.c});
        parallel_for(end - begin, options.threads, [&](std::size_t j) {
            const std::size_t idx = begin + j;
            Tensor4 img = load_and_preprocess(records[idx]->path, in.h);
            if (img.w() != in.w || img.c() != in.c) {
                throw ShapeError("preprocessed image does not match the backbone input");
            }
            if (options.augment_flips && split == Split::train) {
                Rng rng(options.seed ^ (0x9e3779b97f4a7c15ULL * (idx + 1)));
                if (rng.uniform() < 0.5) {
                    flip_horizontal(img);
                }
                if (rng.uniform() < 0.5) {
                    flip_vertical(img);
                }
            }
            std::copy(img.data().begin(), img.data().end(), batch.pixel(j, 0, 0));
        });
        const Matrix feats = backbone.forward_features(batch, options.threads);
        for (std::size_t j = 0; j < feats.rows(); ++j) {
            std::copy(feats.row(j).begin(), feats.row(j).end(), cache.features.row(begin + j).begin());
        }
        if (options.progress) {
            options.progress(end, records.size());
        }
    }
    for (const auto* r : records) {
        cache.labels.push_back(r->label);
        cache.paths.push_back(r->path.string());
    }
    save_feature_cache(cache, out_path);
    return cache;
}

}  // namespace lungnet
