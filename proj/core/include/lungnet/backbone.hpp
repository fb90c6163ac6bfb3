#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lungnet/errors.hpp"
#include "lungnet/kernels.hpp"
#include "lungnet/tensor.hpp"
#include "lungnet/weights_store.hpp"

namespace lungnet {

inline constexpr float kBatchNormEpsilon = 1.001e-5f;
inline constexpr std::size_t kInputSize = 224;
inline constexpr std::size_t kInputChannels = 3;
inline constexpr std::size_t kFeatureWidth = 2048;
inline constexpr std::size_t kResNet50V2Parameters = 23'564'800;

// Raised when a weight store does not match the architecture inventory.
class ManifestError : public InputError {
public:
    explicit ManifestError(ValidationReport report)
        : InputError("weight store does not match the backbone inventory:\n" + report.describe()),
          report_(std::move(report)) {}

    const ValidationReport& report() const { return report_; }

private:
    ValidationReport report_;
};

enum class NodeKind { input, conv, batchnorm, relu, zero_pad, maxpool, add, global_avg_pool };

struct PoolSpec {
    std::size_t kh = 1;
    std::size_t kw = 1;
    std::size_t sh = 1;
    std::size_t sw = 1;
    Padding padding = Padding::valid();
};

struct Node {
    std::string name;
    NodeKind kind = NodeKind::input;
    std::vector<std::size_t> inputs;
    ConvParams conv;
    BatchNormParams bn;
    PoolSpec pool;
    Padding pad;
    Shape4 shape;  // per-image output shape (n = 1)
};

using NodeId = std::size_t;

/// Immutable feed-forward layer graph. Every node is a tap point: its
/// activation can be captured by name during a forward pass.
class BackboneGraph {
public:
    const std::vector<Node>& nodes() const { return nodes_; }
    const Shape4& input_shape() const { return nodes_.front().shape; }
    std::size_t feature_width() const { return nodes_[output_].shape.c; }

    bool has_tap(const std::string& name) const { return by_name_.contains(name); }
    std::vector<std::string> tap_names() const;
    // Per-image output shape of a tap; throws LookupError for unknown names.
    Shape4 tap_shape(const std::string& name) const;

    std::size_t parameter_count() const;

    // n×h×w×c batch matching input_shape() → n×feature_width. Images are
    // processed independently, so `threads` has no numeric effect.
    Matrix forward_features(const Tensor4& batch, int threads = 1) const;

    // Single image; returns the requested activations. Throws LookupError
    // listing valid names for unknown taps.
    std::map<std::string, Tensor4> forward_with_taps(const Tensor4& image, std::span<const std::string> taps) const;

private:
    friend class GraphBuilder;

    NodeId find_tap(const std::string& name) const;

    Tensor4 run(const Tensor4& image, const std::vector<bool>& keep, std::vector<Tensor4>* kept) const;

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> by_name_;
    std::vector<NodeId> last_use_;
    NodeId output_ = 0;
};

/// Appends nodes in topological order and infers per-image shapes as it goes,
/// so shape errors surface at build time.
class GraphBuilder {
public:
    GraphBuilder(std::size_t h, std::size_t w, std::size_t c);

    NodeId input() const { return 0; }
    const Shape4& shape(NodeId id) const { return nodes_.at(id).shape; }

    NodeId conv(std::string name, NodeId in, ConvParams params);
    NodeId batchnorm(std::string name, NodeId in, BatchNormParams params);
    NodeId relu(std::string name, NodeId in);
    NodeId zero_pad(std::string name, NodeId in, std::size_t top, std::size_t bottom, std::size_t left,
                    std::size_t right);
    NodeId maxpool(std::string name, NodeId in, PoolSpec spec);
    NodeId add(std::string name, NodeId a, NodeId b);
    NodeId global_avg_pool(std::string name, NodeId in);

    // `output` must be a global_avg_pool node.
    BackboneGraph finish(NodeId output) &&;

private:
    NodeId push(Node node);

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> by_name_;
};

// Inventory of tensor names and shapes the ResNet-50v2 feature extractor binds.
ManifestExpectation resnet50v2_expectation();

// Reads <prefix>/{gamma,beta,moving_mean,moving_var}.
BatchNormParams batchnorm_from_store(const NamedTensorStore& store, const std::string& prefix);

// One pre-activation bottleneck unit:
//   preact = relu(bn(x))
//   shortcut = conv1x1(preact) if projection, maxpool1x1/stride(x) if stride > 1, else x
//   residual = conv1x1(4w) ∘ relu∘bn∘conv3x3/stride ∘ relu∘bn∘conv1x1(w) (preact)
//   out = shortcut + residual
NodeId append_bottleneck_block(GraphBuilder& builder, const NamedTensorStore& store, const std::string& prefix,
                               NodeId in, std::size_t width, std::size_t stride, bool projection);

// Validates the store against resnet50v2_expectation() first; throws
// ManifestError with the report on mismatch.
BackboneGraph build_resnet50v2(const NamedTensorStore& store);

std::size_t count_parameters(const BackboneGraph& graph);

// Stem conv, the last block of each stage, and the final pre-pool activation.
std::vector<std::string> default_taps();

// Randomly initialized store with the full inventory (He-uniform kernels,
// near-identity batch-norm statistics). For tests, benchmarks, and dry runs
// without pretrained weights.
NamedTensorStore random_resnet50v2_store(std::uint64_t seed);

}  // namespace lungnet
