#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lungnet/backbone.hpp"
#include "lungnet/tensor.hpp"

namespace lungnet {

enum class Split { none, train, val, test };

std::string_view to_string(Split split);
// Accepts "train", "val", "test", "none"; throws InputError otherwise.
Split parse_split(std::string_view text);

struct ClassSpec {
    std::string name;       // label name used in reports
    std::string directory;  // subdirectory of the dataset root
};

// benign=0 (lung_n), adenocarcinoma=1 (lung_aca), squamous=2 (lung_scc).
std::vector<ClassSpec> default_classes();

struct SampleRecord {
    std::filesystem::path path;
    int label = 0;
    Split split = Split::none;
};

// A file under a class directory that could not be opened or is not a
// recognized raster format. Never assigned to a split.
struct IndexIssue {
    std::filesystem::path path;
    std::string reason;
};

struct SplitFractions {
    double train = 0.68;
    double val = 0.17;
    double test = 0.15;
};

struct DatasetManifest {
    std::vector<std::string> class_names;
    std::vector<SampleRecord> records;
    std::vector<IndexIssue> issues;
    std::uint64_t seed = 0;
    SplitFractions fractions;

    std::size_t count(Split split) const;
    std::size_t count(int label, Split split) const;
    std::size_t class_count(int label) const;
    std::vector<const SampleRecord*> records_in(Split split) const;
};

// Files within each class are ordered lexicographically by name; hidden files
// are skipped. Throws InputError for a missing class directory or a class
// without any readable image.
DatasetManifest index_dataset(const std::filesystem::path& root,
                              std::span<const ClassSpec> classes = {});

// Per-class sample counts for (train, val, test): floor(fraction * n), then the
// remainder handed out one at a time in train, val, test order.
std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& fractions);

// Shuffles each class with the seeded generator and tags the first counts[0]
// as train, the next counts[1] as val, the rest as test. Record order is kept.
DatasetManifest stratified_split(DatasetManifest manifest, const SplitFractions& fractions, std::uint64_t seed);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct RgbImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major
};

// Throws InputError naming the path when the file does not decode.
RgbImage decode_image(const std::filesystem::path& path);

// Bilinear resampling with half-pixel centers (align-corners off), edge clamp.
std::vector<float> resize_bilinear(std::span<const float> src, std::size_t in_h, std::size_t in_w,
                                   std::size_t channels, std::size_t out_h, std::size_t out_w);

// Resize to size×size and map pixel p in [0, 255] to p / 127.5 - 1.
Tensor4 preprocess(const RgbImage& image, std::size_t size = kInputSize);
Tensor4 load_and_preprocess(const std::filesystem::path& path, std::size_t size = kInputSize);

void flip_horizontal(Tensor4& image);
void flip_vertical(Tensor4& image);

struct FeatureCache {
    Matrix features;
    std::vector<int> labels;
    std::vector<std::string> paths;
    std::vector<std::string> class_names;
    std::string fingerprint;  // of the extracting backbone's weight store
    Split split = Split::none;

    std::size_t size() const { return labels.size(); }
    void validate() const;
};

// <cache>.json holds paths, class names, split, and fingerprint.
std::filesystem::path sidecar_path(const std::filesystem::path& cache_path);

// Tensors "features" [N, width] and "labels" [N] in the container format plus
// the sidecar.
void save_feature_cache(const FeatureCache& cache, const std::filesystem::path& path);
FeatureCache load_feature_cache(const std::filesystem::path& path);

struct ExtractOptions {
    std::size_t batch_size = 25;
    int threads = 1;
    // Random horizontal/vertical flips on training images, seeded per record.
    bool augment_flips = false;
    std::uint64_t seed = 0;
    std::function<void(std::size_t done, std::size_t total)> progress;
};

// Features for every record of `split`, in manifest order, written to
// `out_path` (and its sidecar).
FeatureCache extract_and_cache(const BackboneGraph& backbone, const std::string& weights_fingerprint,
                               const DatasetManifest& manifest, Split split, const std::filesystem::path& out_path,
                               const ExtractOptions& options = {});

}  // namespace lungnet
