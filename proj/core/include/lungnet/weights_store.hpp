#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace lungnet {

using TensorShape = std::vector<std::size_t>;

std::string to_string(const TensorShape& shape);
std::size_t element_count(const TensorShape& shape);

struct TensorEntry {
    std::string name;
    TensorShape shape;
    std::vector<float> data;
};

/// Ordered name → f32 tensor map, the in-memory form of a tensor container.
///
/// On disk a container is:
///   u64 little-endian header length N
///   N bytes of UTF-8 JSON: {"<name>": {"dtype": "F32", "shape": [...],
///                                      "data_offsets": [begin, end]}, ...}
///   payload: raw little-endian f32 data, offsets relative to the payload start
/// The byte ranges must tile the payload exactly. Entry order is preserved.
class NamedTensorStore {
public:
    // Throws FormatError on an invalid/duplicate name or a size mismatch.
    void add(std::string name, TensorShape shape, std::vector<float> data);

    bool contains(const std::string& name) const { return index_.contains(name); }
    // Throws LookupError when absent.
    const TensorEntry& get(const std::string& name) const;

    const std::vector<TensorEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::size_t total_elements() const;

private:
    std::vector<TensorEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Throws FormatError (naming the offending field) or InputError when the
// file cannot be opened.
NamedTensorStore load_container(const std::filesystem::path& path);
void save_container(const NamedTensorStore& store, const std::filesystem::path& path);

// Same format, in memory.
std::string encode_container(const NamedTensorStore& store);
NamedTensorStore decode_container(std::span<const char> bytes);

// Stable 64-bit FNV-1a digest over names, shapes, and payload bits, as hex.
std::string fingerprint(const NamedTensorStore& store);

struct TensorExpectation {
    std::string name;
    TensorShape shape;
};

struct ManifestExpectation {
    std::vector<TensorExpectation> tensors;
};

// Expectation files are JSON arrays of {"name": ..., "shape": [...]}.
ManifestExpectation load_expectation(const std::filesystem::path& path);
void save_expectation(const ManifestExpectation& expectation, const std::filesystem::path& path);

struct ShapeMismatch {
    std::string name;
    TensorShape expected;
    TensorShape actual;
};

struct ValidationReport {
    std::vector<std::string> missing;
    std::vector<std::string> unexpected;
    std::vector<ShapeMismatch> mismatched;

    bool ok() const { return missing.empty() && unexpected.empty() && mismatched.empty(); }
    std::string describe() const;
};

// Name lists in the report are sorted, so the result is independent of
// entry order on either side.
ValidationReport validate_manifest(const NamedTensorStore& store, const ManifestExpectation& expectation);

}  // namespace lungnet
