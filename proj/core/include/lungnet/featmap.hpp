#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lungnet/backbone.hpp"
#include "lungnet/head.hpp"
#include "lungnet/tensor.hpp"

namespace lungnet {

struct ActivationMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> values;  // row-major
    std::string tap;
    std::string source;

    float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

enum class ChannelReduce { mean, max };

// Per-pixel reduction over channels of a 1×h×w×c activation.
ActivationMap channel_map(const Tensor4& activation, ChannelReduce reduce = ChannelReduce::mean);
ActivationMap channel_mean_map(const Tensor4& activation);

struct GrayImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;

    bool operator==(const GrayImage&) const = default;
};

// Min-max scaling to [0, 255], rounding half up. A constant map renders as 128.
GrayImage normalize_to_u8(const ActivationMap& map);

struct OcclusionOptions {
    std::size_t patch_size = 32;
    std::size_t stride = 32;
    float fill = 0.0f;  // preprocessed value; 0.0 is pixel 127.5
    int threads = 1;
};

// For each patch position (row-major over the grid), replaces the patch with
// `fill`, reruns backbone + head, and records p(original class) - p(occluded).
// Throws InputError when the patch or stride does not fit the image.
ActivationMap occlusion_map(const BackboneGraph& backbone, const HeadParams& head, const Tensor4& image,
                            const OcclusionOptions& options, Activation activation = Activation::relu);

// Binary PGM: "P5\n<w> <h>\n255\n" then row-major bytes.
void write_pgm(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace lungnet
