#include "lungnet/weights_store.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lungnet/errors.hpp"

namespace lungnet {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::size_t kHeaderLengthBytes = 8;
constexpr const char* kDTypeF32 = "F32";

bool valid_name(const std::string& name) {
    if (name.empty()) {
        return false;
    }
    return std::none_of(name.begin(), name.end(), [](char ch) {
        const auto u = static_cast<unsigned char>(ch);
        return u < 0x20 || u == 0x7f;
    });
}

std::string encode_header(const NamedTensorStore& store) {
    ordered_json header = ordered_json::object();
    std::uint64_t offset = 0;
    for (const auto& e : store.entries()) {
        const std::uint64_t bytes = e.data.size() * sizeof(float);
        header[e.name] = {{"dtype", kDTypeF32}, {"shape", e.shape}, {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    return header.dump();
}

struct ParsedEntry {
    std::string name;
    TensorShape shape;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
};

// Parses and validates the header against a payload of `payload_size` bytes.
std::vector<ParsedEntry> parse_header(std::string_view text, std::uint64_t payload_size) {
    std::set<std::string> seen;
    std::string duplicate;
    ordered_json::parser_callback_t reject_duplicates = [&](int depth, ordered_json::parse_event_t event,
                                                            ordered_json& parsed) {
        if (depth == 1 && event == ordered_json::parse_event_t::key) {
            const auto key = parsed.get<std::string>();
            if (!seen.insert(key).second && duplicate.empty()) {
                duplicate = key;
            }
        }
        return true;
    };

    ordered_json header;
    try {
        header = ordered_json::parse(text.begin(), text.end(), reject_duplicates);
    } catch (const ordered_json::parse_error& err) {
        throw FormatError(std::string("header: malformed JSON: ") + err.what());
    }
    if (!duplicate.empty()) {
        throw FormatError("header: duplicate tensor name '" + duplicate + "'");
    }
    if (!header.is_object()) {
        throw FormatError("header: expected a JSON object");
    }

    std::vector<ParsedEntry> entries;
    entries.reserve(header.size());
    for (const auto& [name, info] : header.items()) {
        const std::string where = "tensor '" + name + "'";
        if (!valid_name(name)) {
            throw FormatError("header: invalid tensor name '" + name + "'");
        }
        if (!info.is_object()) {
            throw FormatError(where + ": entry is not an object");
        }
        if (!info.contains("dtype") || !info["dtype"].is_string()) {
            throw FormatError(where + ": missing dtype");
        }
        if (info["dtype"].get<std::string>() != kDTypeF32) {
            throw FormatError(where + ": unknown dtype '" + info["dtype"].get<std::string>() + "'");
        }
        if (!info.contains("shape") || !info["shape"].is_array()) {
            throw FormatError(where + ": missing shape");
        }
        ParsedEntry e;
        e.name = name;
        for (const auto& d : info["shape"]) {
            if (!d.is_number_unsigned()) {
                throw FormatError(where + ": shape entries must be non-negative integers");
            }
            e.shape.push_back(d.get<std::size_t>());
        }
        const auto& offsets = info.contains("data_offsets") ? info["data_offsets"] : ordered_json();
        if (!offsets.is_array() || offsets.size() != 2 || !offsets[0].is_number_unsigned() ||
            !offsets[1].is_number_unsigned()) {
            throw FormatError(where + ": data_offsets must be [begin, end]");
        }
        e.begin = offsets[0].get<std::uint64_t>();
        e.end = offsets[1].get<std::uint64_t>();
        if (e.end < e.begin) {
            throw FormatError(where + ": data_offsets end precedes begin");
        }
        if (e.end - e.begin != element_count(e.shape) * sizeof(float)) {
            throw FormatError(where + ": data_offsets span " + std::to_string(e.end - e.begin) +
                              " bytes but shape " + to_string(e.shape) + " needs " +
                              std::to_string(element_count(e.shape) * sizeof(float)));
        }
        if (e.end > payload_size) {
            throw FormatError(where + ": data_offsets end " + std::to_string(e.end) + " beyond payload of " +
                              std::to_string(payload_size) + " bytes");
        }
        entries.push_back(std::move(e));
    }

    std::vector<const ParsedEntry*> by_offset;
    for (const auto& e : entries) {
        by_offset.push_back(&e);
    }
    std::stable_sort(by_offset.begin(), by_offset.end(), [](const ParsedEntry* a, const ParsedEntry* b) {
        return a->begin != b->begin ? a->begin < b->begin : a->end < b->end;
    });
    std::uint64_t cursor = 0;
    for (const ParsedEntry* e : by_offset) {
        if (e->begin < cursor) {
            throw FormatError("tensor '" + e->name + "': data_offsets overlap a previous tensor");
        }
        if (e->begin > cursor) {
            throw FormatError("tensor '" + e->name + "': data_offsets leave a gap at byte " + std::to_string(cursor));
        }
        cursor = e->end;
    }
    if (cursor != payload_size) {
        throw FormatError("payload: " + std::to_string(payload_size - cursor) +
                          " trailing bytes not covered by any tensor");
    }
    return entries;
}

std::uint64_t read_header_length(const char* bytes) {
    std::uint64_t n = 0;
    std::memcpy(&n, bytes, sizeof(n));
    return n;
}

}  // namespace

std::string to_string(const TensorShape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out += (i ? "," : "") + std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t element_count(const TensorShape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

void NamedTensorStore::add(std::string name, TensorShape shape, std::vector<float> data) {
    if (!valid_name(name)) {
        throw FormatError("invalid tensor name '" + name + "'");
    }
    if (contains(name)) {
        throw FormatError("duplicate tensor name '" + name + "'");
    }
    if (data.size() != element_count(shape)) {
        throw FormatError("tensor '" + name + "': " + std::to_string(data.size()) + " values for shape " +
                          to_string(shape));
    }
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(shape), std::move(data)});
}

const TensorEntry& NamedTensorStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw LookupError("no tensor named '" + name + "'");
    }
    return entries_[it->second];
}

std::size_t NamedTensorStore::total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        n += e.data.size();
    }
    return n;
}

std::string encode_container(const NamedTensorStore& store) {
    const std::string header = encode_header(store);
    const std::uint64_t n = header.size();
    std::string out(kHeaderLengthBytes, '\0');
    std::memcpy(out.data(), &n, sizeof(n));
    out += header;
    for (const auto& e : store.entries()) {
        out.append(reinterpret_cast<const char*>(e.data.data()), e.data.size() * sizeof(float));
    }
    return out;
}

NamedTensorStore decode_container(std::span<const char> bytes) {
    if (bytes.size() < kHeaderLengthBytes) {
        throw FormatError("header length: file shorter than the 8-byte length field");
    }
    const std::uint64_t n = read_header_length(bytes.data());
    if (n > bytes.size() - kHeaderLengthBytes) {
        throw FormatError("header length: " + std::to_string(n) + " exceeds the " +
                          std::to_string(bytes.size() - kHeaderLengthBytes) + " bytes that follow it");
    }
    const std::uint64_t payload_size = bytes.size() - kHeaderLengthBytes - n;
    const auto entries = parse_header(std::string_view(bytes.data() + kHeaderLengthBytes, n), payload_size);
    const char* payload = bytes.data() + kHeaderLengthBytes + n;

    NamedTensorStore store;
    for (const auto& e : entries) {
        std::vector<float> data(element_count(e.shape));
        std::memcpy(data.data(), payload + e.begin, e.end - e.begin);
        store.add(e.name, e.shape, std::move(data));
    }
    return store;
}

NamedTensorStore load_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open container '" + path.string() + "'");
    }
    std::error_code ec;
    const std::uint64_t file_size = std::filesystem::file_size(path, ec);
    if (ec) {
        throw InputError("cannot stat container '" + path.string() + "': " + ec.message());
    }
    try {
        if (file_size < kHeaderLengthBytes) {
            throw FormatError("header length: file shorter than the 8-byte length field");
        }
        char length_bytes[kHeaderLengthBytes];
        in.read(length_bytes, kHeaderLengthBytes);
        const std::uint64_t n = read_header_length(length_bytes);
        if (n > file_size - kHeaderLengthBytes) {
            throw FormatError("header length: " + std::to_string(n) + " exceeds the " +
                              std::to_string(file_size - kHeaderLengthBytes) + " bytes that follow it");
        }
        std::string header(n, '\0');
        in.read(header.data(), static_cast<std::streamsize>(n));
        const std::uint64_t payload_size = file_size - kHeaderLengthBytes - n;
        const auto entries = parse_header(header, payload_size);

        // Payload is read in offset order straight into each tensor.
        std::vector<const ParsedEntry*> by_offset;
        for (const auto& e : entries) {
            by_offset.push_back(&e);
        }
        std::sort(by_offset.begin(), by_offset.end(),
                  [](const ParsedEntry* a, const ParsedEntry* b) { return a->begin < b->begin; });
        std::map<std::string, std::vector<float>> data;
        for (const ParsedEntry* e : by_offset) {
            std::vector<float> values(element_count(e->shape));
            in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(e->end - e->begin));
            if (!in) {
                throw FormatError("tensor '" + e->name + "': payload truncated");
            }
            data.emplace(e->name, std::move(values));
        }

        NamedTensorStore store;
        for (const auto& e : entries) {
            store.add(e.name, e.shape, std::move(data.at(e.name)));
        }
        return store;
    } catch (const FormatError& err) {
        throw FormatError(path.string() + ": " + err.what());
    }
}

void save_container(const NamedTensorStore& store, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw InputError("cannot open '" + path.string() + "' for writing");
    }
    const std::string header = encode_header(store);
    const std::uint64_t n = header.size();
    char length_bytes[kHeaderLengthBytes];
    std::memcpy(length_bytes, &n, sizeof(n));
    out.write(length_bytes, kHeaderLengthBytes);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& e : store.entries()) {
        out.write(reinterpret_cast<const char*>(e.data.data()),
                  static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    out.flush();
    if (!out) {
        throw InputError("write to '" + path.string() + "' failed");
    }
}

std::string fingerprint(const NamedTensorStore& store) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& e : store.entries()) {
        mix(e.name.data(), e.name.size() + 1);
        for (std::size_t d : e.shape) {
            const std::uint64_t d64 = d;
            mix(&d64, sizeof(d64));
        }
        mix(e.data.data(), e.data.size() * sizeof(float));
    }
    std::ostringstream out;
    out << std::hex;
    out.width(16);
    out.fill('0');
    out << h;
    return out.str();
}

ManifestExpectation load_expectation(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open expectation file '" + path.string() + "'");
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& err) {
        throw FormatError(path.string() + ": malformed JSON: " + err.what());
    }
    if (!doc.is_array()) {
        throw FormatError(path.string() + ": expected a JSON array of {name, shape}");
    }
    ManifestExpectation expectation;
    for (const auto& item : doc) {
        if (!item.is_object() || !item.contains("name") || !item.contains("shape")) {
            throw FormatError(path.string() + ": every item needs name and shape");
        }
        TensorExpectation t{item["name"].get<std::string>(), item["shape"].get<TensorShape>()};
        if (t.shape.empty() || std::find(t.shape.begin(), t.shape.end(), 0) != t.shape.end()) {
            throw FormatError(path.string() + ": '" + t.name + "' needs a positive-dim shape");
        }
        expectation.tensors.push_back(std::move(t));
    }
    return expectation;
}

void save_expectation(const ManifestExpectation& expectation, const std::filesystem::path& path) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::array();
    for (const auto& t : expectation.tensors) {
        doc.push_back({{"name", t.name}, {"shape", t.shape}});
    }
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot open '" + path.string() + "' for writing");
    }
    out << doc.dump(1) << '\n';
    if (!out) {
        throw InputError("write to '" + path.string() + "' failed");
    }
}

std::string ValidationReport::describe() const {
    if (ok()) {
        return "manifest ok";
    }
    std::ostringstream out;
    for (const auto& name : missing) {
        out << "missing: " << name << '\n';
    }
    for (const auto& name : unexpected) {
        out << "unexpected: " << name << '\n';
    }
    for (const auto& m : mismatched) {
        out << "shape mismatch: " << m.name << " expected " << to_string(m.expected) << " got "
            << to_string(m.actual) << '\n';
    }
    return out.str();
}

ValidationReport validate_manifest(const NamedTensorStore& store, const ManifestExpectation& expectation) {
    ValidationReport report;
    std::set<std::string> expected_names;
    for (const auto& t : expectation.tensors) {
        expected_names.insert(t.name);
        if (!store.contains(t.name)) {
            report.missing.push_back(t.name);
        } else if (store.get(t.name).shape != t.shape) {
            report.mismatched.push_back({t.name, t.shape, store.get(t.name).shape});
        }
    }
    for (const auto& e : store.entries()) {
        if (!expected_names.contains(e.name)) {
            report.unexpected.push_back(e.name);
        }
    }
    std::sort(report.missing.begin(), report.missing.end());
    std::sort(report.unexpected.begin(), report.unexpected.end());
    std::sort(report.mismatched.begin(), report.mismatched.end(),
              [](const ShapeMismatch& a, const ShapeMismatch& b) { return a.name < b.name; });
    return report;
}

}  // namespace lungnet
