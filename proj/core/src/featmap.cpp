#include "lungnet/featmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lungnet/errors.hpp"
#include "lungnet/parallel.hpp"

namespace lungnet {

ActivationMap channel_map(const Tensor4& activation, ChannelReduce reduce) {
    if (activation.n() != 1) {
        throw ShapeError("channel_map expects a single image, got batch of " + std::to_string(activation.n()));
    }
    if (activation.c() == 0) {
        throw ShapeError("channel_map needs at least one channel");
    }
    ActivationMap map;
    map.height = activation.h();
    map.width = activation.w();
    map.values.resize(map.height * map.width);
    const std::size_t c = activation.c();
    for (std::size_t y = 0; y < map.height; ++y) {
        for (std::size_t x = 0; x < map.width; ++x) {
            const float* px = activation.pixel(0, y, x);
            float v = 0.0f;
            if (reduce == ChannelReduce::max) {
                v = *std::max_element(px, px + c);
            } else {
                double acc = 0.0;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    acc += px[ch];
                }
                v = static_cast<float>(acc / static_cast<double>(c));
            }
            map.values[y * map.width + x] = v;
        }
    }
    return map;
}

ActivationMap channel_mean_map(const Tensor4& activation) { return channel_map(activation, ChannelReduce::mean); }

GrayImage normalize_to_u8(const ActivationMap& map) {
    GrayImage img{map.height, map.width, std::vector<std::uint8_t>(map.values.size(), 128)};
    if (map.values.empty()) {
        return img;
    }
    const auto [lo_it, hi_it] = std::minmax_element(map.values.begin(), map.values.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!(hi > lo)) {
        return img;
    }
    const double range = hi - lo;
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        const double scaled = (static_cast<double>(map.values[i]) - lo) * 255.0 / range;
        img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::floor(scaled + 0.5), 0.0, 255.0));
    }
    return img;
}

ActivationMap occlusion_map(const BackboneGraph& backbone, const HeadParams& head, const Tensor4& image,
                            const OcclusionOptions& options, Activation activation) {
    if (image.n() != 1) {
        throw InputError("occlusion_map expects a single image");
    }
    if (options.patch_size == 0 || options.stride == 0) {
        throw InputError("occlusion patch size and stride must be positive");
    }
    if (options.patch_size > image.h() || options.patch_size > image.w() || options.stride > image.h() ||
        options.stride > image.w()) {
        throw InputError("occlusion patch " + std::to_string(options.patch_size) + " / stride " +
                         std::to_string(options.stride) + " exceeds the " + std::to_string(image.h()) + "x" +
                         std::to_string(image.w()) + " image");
    }

    auto class_probs = [&](const Tensor4& x) {
        return predict(head, backbone.forward_features(x), activation).probs;
    };
    const Matrix base = class_probs(image);
    const auto target = static_cast<std::size_t>(argmax(base.row(0)));
    const float base_p = base(0, target);

    ActivationMap map;
    map.height = (image.h() - options.patch_size) / options.stride + 1;
    map.width = (image.w() - options.patch_size) / options.stride + 1;
    map.values.assign(map.height * map.width, 0.0f);
    map.tap = "occlusion";

    parallel_for(map.values.size(), options.threads, [&](std::size_t cell) {
        const std::size_t y0 = (cell / map.width) * options.stride;
        const std::size_t x0 = (cell % map.width) * options.stride;
        Tensor4 occluded = image;
        for (std::size_t y = y0; y < y0 + options.patch_size; ++y) {
            for (std::size_t x = x0; x < x0 + options.patch_size; ++x) {
                std::fill_n(occluded.pixel(0, y, x), occluded.c(), options.fill);
            }
        }
        map.values[cell] = base_p - class_probs(occluded)(0, target);
    });
    return map;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
    if (image.pixels.size() != image.height * image.width) {
        throw ShapeError("write_pgm: pixel buffer does not match " + std::to_string(image.width) + "x" +
                         std::to_string(image.height));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw InputError("cannot open '" + path.string() + "' for writing");
    }
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) {
        throw InputError("write to '" + path.string() + "' failed");
    }
}

GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open '" + path.string() + "'");
    }
    std::string magic;
    std::size_t width = 0;
    std::size_t height = 0;
    int maxval = 0;
    in >> magic >> width >> height >> maxval;
    if (magic != "P5" || !in || maxval != 255) {
        throw FormatError(path.string() + ": not an 8-bit binary PGM");
    }
    in.get();  // single whitespace after maxval
    GrayImage img{height, width, std::vector<std::uint8_t>(width * height)};
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
        throw FormatError(path.string() + ": pixel data truncated");
    }
    return img;
}

}  // namespace lungnet
