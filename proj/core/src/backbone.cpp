#include "lungnet/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "lungnet/parallel.hpp"
#include "lungnet/rng.hpp"

namespace lungnet {

namespace {

struct StageSpec {
    const char* name;
    std::size_t width;
    std::size_t blocks;
    std::size_t stride;  // applied by the last block of the stage
};

constexpr StageSpec kStages[] = {
    {"stage2", 64, 3, 2},
    {"stage3", 128, 4, 2},
    {"stage4", 256, 6, 2},
    {"stage5", 512, 3, 1},
};

constexpr std::size_t kStemWidth = 64;

std::string block_prefix(const StageSpec& stage, std::size_t block) {
    return std::string(stage.name) + "/block" + std::to_string(block);
}

std::vector<float> tensor_data(const NamedTensorStore& store, const std::string& name, const TensorShape& shape) {
    const TensorEntry& e = store.get(name);
    if (e.shape != shape) {
        throw ShapeError("tensor '" + name + "' has shape " + to_string(e.shape) + ", expected " + to_string(shape));
    }
    return e.data;
}

ConvParams conv_from_store(const NamedTensorStore& store, const std::string& prefix, std::size_t k,
                           std::size_t c_in, std::size_t c_out, std::size_t stride, Padding padding, bool bias) {
    ConvParams p;
    p.kh = k;
    p.kw = k;
    p.c_in = c_in;
    p.c_out = c_out;
    p.kernel = tensor_data(store, prefix + "/kernel", {k, k, c_in, c_out});
    if (bias) {
        p.bias = tensor_data(store, prefix + "/bias", {c_out});
    }
    p.stride_h = stride;
    p.stride_w = stride;
    p.padding = padding;
    return p;
}

void add_bn_expectation(ManifestExpectation& m, const std::string& prefix, std::size_t c) {
    for (const char* field : {"gamma", "beta", "moving_mean", "moving_var"}) {
        m.tensors.push_back({prefix + "/" + field, {c}});
    }
}

void add_conv_expectation(ManifestExpectation& m, const std::string& prefix, std::size_t k, std::size_t c_in,
                          std::size_t c_out, bool bias) {
    m.tensors.push_back({prefix + "/kernel", {k, k, c_in, c_out}});
    if (bias) {
        m.tensors.push_back({prefix + "/bias", {c_out}});
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// GraphBuilder

GraphBuilder::GraphBuilder(std::size_t h, std::size_t w, std::size_t c) {
    Node in;
    in.name = "input";
    in.kind = NodeKind::input;
    in.shape = {1, h, w, c};
    push(std::move(in));
}

NodeId GraphBuilder::push(Node node) {
    if (node.name.empty() || by_name_.contains(node.name)) {
        throw InputError("graph node name '" + node.name + "' is empty or already used");
    }
    for (NodeId id : node.inputs) {
        if (id >= nodes_.size()) {
            throw InputError("graph node '" + node.name + "' refers to an unknown input");
        }
    }
    const NodeId id = nodes_.size();
    by_name_.emplace(node.name, id);
    nodes_.push_back(std::move(node));
    return id;
}

NodeId GraphBuilder::conv(std::string name, NodeId in, ConvParams params) {
    params.validate();
    const Shape4 s = shape(in);
    if (s.c != params.c_in) {
        throw ShapeError("node '" + name + "': input has " + std::to_string(s.c) + " channels, kernel expects " +
                         std::to_string(params.c_in));
    }
    const auto g = window_geometry(s.h, s.w, params.kh, params.kw, params.stride_h, params.stride_w, params.padding);
    Node n;
    n.name = std::move(name);
    n.kind = NodeKind::conv;
    n.inputs = {in};
    n.shape = {1, g.out_h, g.out_w, params.c_out};
    n.conv = std::move(params);
    return push(std::move(n));
}

NodeId GraphBuilder::batchnorm(std::string name, NodeId in, BatchNormParams params) {
    params.validate();
    if (shape(in).c != params.channels()) {
        throw ShapeError("node '" + name + "': batch-norm over " + std::to_string(params.channels()) +
                         " channels applied to " + std::to_string(shape(in).c));
    }
    Node n;
    n.name = std::move(name);
    n.kind = NodeKind::batchnorm;
    n.inputs = {in};
    n.shape = shape(in);
    n.bn = std::move(params);
    return push(std::move(n));
}

NodeId GraphBuilder::relu(std::string name, NodeId in) {
    Node n;
    n.name = std::move(name);
    n.kind = NodeKind::relu;
    n.inputs = {in};
    n.shape = shape(in);
    return push(std::move(n));
}

NodeId GraphBuilder::zero_pad(std::string name, NodeId in, std::size_t top, std::size_t bottom, std::size_t left,
                              std::size_t right) {
    Node n;
    n.name = std::move(name);
    n.kind = NodeKind::zero_pad;
    n.inputs = {in};
    n.pad = Padding::explicit_pads(top, bottom, left, right);
    const Shape4 s = shape(in);
    n.shape = {1, s.h + top + bottom, s.w + left + right, s.c};
    return push(std::move(n));
}

NodeId GraphBuilder::maxpool(std::string name, NodeId in, PoolSpec spec) {
    const Shape4 s = shape(in);
    const auto g = window_geometry(s.h, s.w, spec.kh, spec.kw, spec.sh, spec.sw, spec.padding);
    Node n;
    n.name = std::move(name);
    n.kind = NodeKind::maxpool;
    n.inputs = {in};
    n.pool = spec;
    n.shape = {1, g.out_h, g.out_w, s.c};
    return push(std::move(n));
}

NodeId GraphBuilder::add(std::string name, NodeId a, NodeId b) {
    if (shape(a) != shape(b)) {
        throw ShapeError("node '" + name + "': cannot add " + to_string(shape(a)) + " and " + to_string(shape(b)));
    }
    Node n;
    n.name = std::move(name);
    n.kind = NodeKind::add;
    n.inputs = {a, b};
    n.shape = shape(a);
    return push(std::move(n));
}

NodeId GraphBuilder::global_avg_pool(std::string name, NodeId in) {
    Node n;
    n.name = std::move(name);
    n.kind = NodeKind::global_avg_pool;
    n.inputs = {in};
    n.shape = {1, 1, 1, shape(in).c};
    return push(std::move(n));
}

BackboneGraph GraphBuilder::finish(NodeId output) && {
    if (output >= nodes_.size() || nodes_[output].kind != NodeKind::global_avg_pool) {
        throw InputError("graph output must be a global average pool node");
    }
    BackboneGraph g;
    g.last_use_.assign(nodes_.size(), 0);
    for (NodeId id = 0; id < nodes_.size(); ++id) {
        g.last_use_[id] = id;
        for (NodeId in : nodes_[id].inputs) {
            g.last_use_[in] = std::max(g.last_use_[in], id);
        }
    }
    g.nodes_ = std::move(nodes_);
    g.by_name_ = std::move(by_name_);
    g.output_ = output;
    return g;
}

// ---------------------------------------------------------------------------
// BackboneGraph

std::vector<std::string> BackboneGraph::tap_names() const {
    std::vector<std::string> names;
    names.reserve(nodes_.size());
    for (const auto& n : nodes_) {
        names.push_back(n.name);
    }
    return names;
}

NodeId BackboneGraph::find_tap(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) {
        std::string valid;
        for (const auto& n : nodes_) {
            valid += (valid.empty() ? "" : ", ") + n.name;
        }
        throw LookupError("unknown tap '" + name + "'; valid taps: " + valid);
    }
    return it->second;
}

Shape4 BackboneGraph::tap_shape(const std::string& name) const { return nodes_[find_tap(name)].shape; }

std::size_t BackboneGraph::parameter_count() const {
    std::size_t total = 0;
    for (const auto& n : nodes_) {
        if (n.kind == NodeKind::conv) {
            total += n.conv.parameter_count();
        } else if (n.kind == NodeKind::batchnorm) {
            total += n.bn.parameter_count();
        }
    }
    return total;
}

Tensor4 BackboneGraph::run(const Tensor4& image, const std::vector<bool>& keep, std::vector<Tensor4>* kept) const {
    std::vector<std::optional<Tensor4>> acts(nodes_.size());
    acts[0] = image;
    for (NodeId id = 1; id <= output_; ++id) {
        const Node& node = nodes_[id];
        const Tensor4& x = *acts[node.inputs.front()];
        switch (node.kind) {
            case NodeKind::conv:
                acts[id] = conv2d(x, node.conv);
                break;
            case NodeKind::batchnorm:
                acts[id] = batchnorm_inference(x, node.bn);
                break;
            case NodeKind::relu:
                acts[id] = lungnet::relu(x);
                break;
            case NodeKind::zero_pad:
                acts[id] = zero_pad2d(x, node.pad.top, node.pad.bottom, node.pad.left, node.pad.right);
                break;
            case NodeKind::maxpool:
                acts[id] = maxpool2d(x, node.pool.kh, node.pool.kw, node.pool.sh, node.pool.sw, node.pool.padding);
                break;
            case NodeKind::add:
                acts[id] = lungnet::add(x, *acts[node.inputs[1]]);
                break;
            case NodeKind::global_avg_pool: {
                Matrix pooled = global_avg_pool(x);
                acts[id] = Tensor4({x.n(), 1, 1, x.c()}, std::vector<float>(pooled.data().begin(), pooled.data().end()));
                break;
            }
            case NodeKind::input:
                break;
        }
        if (kept != nullptr && keep[id]) {
            (*kept)[id] = *acts[id];
        }
        for (NodeId in : node.inputs) {
            if (last_use_[in] == id) {
                acts[in].reset();
            }
        }
    }
    if (kept != nullptr && keep[0]) {
        (*kept)[0] = image;
    }
    return std::move(*acts[output_]);
}

Matrix BackboneGraph::forward_features(const Tensor4& batch, int threads) const {
    const Shape4& in = input_shape();
    if (batch.h() != in.h || batch.w() != in.w || batch.c() != in.c) {
        throw ShapeError("backbone expects n x " + std::to_string(in.h) + " x " + std::to_string(in.w) + " x " +
                         std::to_string(in.c) + " input, got " + to_string(batch.shape()));
    }
    const std::size_t width = feature_width();
    Matrix features(batch.n(), width);
    parallel_for(batch.n(), threads, [&](std::size_t i) {
        const Tensor4 pooled = run(batch.image(i), {}, nullptr);
        std::copy(pooled.data().begin(), pooled.data().end(), features.row(i).begin());
    });
    return features;
}

std::map<std::string, Tensor4> BackboneGraph::forward_with_taps(const Tensor4& image,
                                                                std::span<const std::string> taps) const {
    const Shape4& in = input_shape();
    if (image.shape() != in) {
        throw ShapeError("forward_with_taps expects a single " + to_string(in) + " image, got " +
                         to_string(image.shape()));
    }
    std::vector<bool> keep(nodes_.size(), false);
    for (const auto& tap : taps) {
        keep[find_tap(tap)] = true;
    }
    std::vector<Tensor4> kept(nodes_.size());
    run(image, keep, &kept);
    std::map<std::string, Tensor4> out;
    for (const auto& tap : taps) {
        out[tap] = kept[by_name_.at(tap)];
    }
    return out;
}

// ---------------------------------------------------------------------------
// ResNet-50v2

BatchNormParams batchnorm_from_store(const NamedTensorStore& store, const std::string& prefix) {
    BatchNormParams bn;
    bn.gamma = store.get(prefix + "/gamma").data;
    bn.beta = store.get(prefix + "/beta").data;
    bn.moving_mean = store.get(prefix + "/moving_mean").data;
    bn.moving_var = store.get(prefix + "/moving_var").data;
    bn.eps = kBatchNormEpsilon;
    return bn;
}

NodeId append_bottleneck_block(GraphBuilder& builder, const NamedTensorStore& store, const std::string& prefix,
                               NodeId in, std::size_t width, std::size_t stride, bool projection) {
    const std::size_t c_in = builder.shape(in).c;
    const std::size_t c_out = 4 * width;

    NodeId preact = builder.batchnorm(prefix + "/preact_bn", in, batchnorm_from_store(store, prefix + "/preact_bn"));
    preact = builder.relu(prefix + "/preact_relu", preact);

    NodeId shortcut = in;
    if (projection) {
        shortcut = builder.conv(prefix + "/shortcut", preact,
                                conv_from_store(store, prefix + "/shortcut", 1, c_in, c_out, stride, Padding::valid(),
                                                true));
    } else if (stride > 1) {
        shortcut = builder.maxpool(prefix + "/shortcut", in, {1, 1, stride, stride, Padding::valid()});
    }

    NodeId x = builder.conv(prefix + "/conv1", preact,
                            conv_from_store(store, prefix + "/conv1", 1, c_in, width, 1, Padding::valid(), false));
    x = builder.batchnorm(prefix + "/bn1", x, batchnorm_from_store(store, prefix + "/bn1"));
    x = builder.relu(prefix + "/relu1", x);
    x = builder.conv(prefix + "/conv2", x,
                     conv_from_store(store, prefix + "/conv2", 3, width, width, stride,
                                     Padding::explicit_pads(1, 1, 1, 1), false));
    x = builder.batchnorm(prefix + "/bn2", x, batchnorm_from_store(store, prefix + "/bn2"));
    x = builder.relu(prefix + "/relu2", x);
    x = builder.conv(prefix + "/conv3", x,
                     conv_from_store(store, prefix + "/conv3", 1, width, c_out, 1, Padding::valid(), true));
    return builder.add(prefix + "/out", shortcut, x);
}

ManifestExpectation resnet50v2_expectation() {
    ManifestExpectation m;
    add_conv_expectation(m, "stem/conv", 7, kInputChannels, kStemWidth, true);
    std::size_t c_in = kStemWidth;
    for (const auto& stage : kStages) {
        const std::size_t c_out = 4 * stage.width;
        for (std::size_t b = 1; b <= stage.blocks; ++b) {
            const std::string p = block_prefix(stage, b);
            add_bn_expectation(m, p + "/preact_bn", c_in);
            if (b == 1) {
                add_conv_expectation(m, p + "/shortcut", 1, c_in, c_out, true);
            }
            add_conv_expectation(m, p + "/conv1", 1, c_in, stage.width, false);
            add_bn_expectation(m, p + "/bn1", stage.width);
            add_conv_expectation(m, p + "/conv2", 3, stage.width, stage.width, false);
            add_bn_expectation(m, p + "/bn2", stage.width);
            add_conv_expectation(m, p + "/conv3", 1, stage.width, c_out, true);
            c_in = c_out;
        }
    }
    add_bn_expectation(m, "post/bn", c_in);
    return m;
}

BackboneGraph build_resnet50v2(const NamedTensorStore& store) {
    ValidationReport report = validate_manifest(store, resnet50v2_expectation());
    if (!report.ok()) {
        throw ManifestError(std::move(report));
    }

    GraphBuilder b(kInputSize, kInputSize, kInputChannels);
    // Stem: 7x7/2 conv on a 3-pixel zero border, then 3x3/2 max-pool on a
    // 1-pixel zero border.
    NodeId x = b.conv("stem/conv", b.input(),
                      conv_from_store(store, "stem/conv", 7, kInputChannels, kStemWidth, 2,
                                      Padding::explicit_pads(3, 3, 3, 3), true));
    x = b.zero_pad("stem/pool_pad", x, 1, 1, 1, 1);
    x = b.maxpool("stem/pool", x, {3, 3, 2, 2, Padding::valid()});

    for (const auto& stage : kStages) {
        for (std::size_t blk = 1; blk <= stage.blocks; ++blk) {
            const std::size_t stride = blk == stage.blocks ? stage.stride : 1;
            x = append_bottleneck_block(b, store, block_prefix(stage, blk), x, stage.width, stride, blk == 1);
        }
    }

    x = b.batchnorm("post/bn", x, batchnorm_from_store(store, "post/bn"));
    x = b.relu("post/relu", x);
    x = b.global_avg_pool("pool", x);
    return std::move(b).finish(x);
}

std::size_t count_parameters(const BackboneGraph& graph) { return graph.parameter_count(); }

std::vector<std::string> default_taps() {
    std::vector<std::string> taps{"stem/conv"};
    for (const auto& stage : kStages) {
        taps.push_back(block_prefix(stage, stage.blocks) + "/out");
    }
    taps.emplace_back("post/relu");
    return taps;
}

NamedTensorStore random_resnet50v2_store(std::uint64_t seed) {
    Rng rng(seed);
    NamedTensorStore store;
    for (const auto& t : resnet50v2_expectation().tensors) {
        std::vector<float> data(element_count(t.shape));
        const std::string& name = t.name;
        auto fill = [&](double lo, double hi) {
            for (float& v : data) {
                v = static_cast<float>(rng.uniform(lo, hi));
            }
        };
        if (name.ends_with("/kernel")) {
            const double fan_in = static_cast<double>(t.shape[0] * t.shape[1] * t.shape[2]);
            double limit = std::sqrt(6.0 / fan_in);
            if (name.find("/conv3/") != std::string::npos) {
                limit *= 0.25;  // keeps residual growth across 16 blocks modest
            }
            fill(-limit, limit);
        } else if (name.ends_with("/bias") || name.ends_with("/beta") || name.ends_with("/moving_mean")) {
            fill(-0.1, 0.1);
        } else if (name.ends_with("/gamma")) {
            fill(0.8, 1.2);
        } else {
            fill(0.5, 1.5);  // moving_var
        }
        store.add(name, t.shape, std::move(data));
    }
    return store;
}

}  // namespace lungnet
