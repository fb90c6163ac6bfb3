#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <set>

#include "lungnet/backbone.hpp"
#include "lungnet/golden.hpp"
#include "lungnet/head.hpp"
#include "lungnet/rng.hpp"
#include "oracles.hpp"

using namespace lungnet;

namespace {

const NamedTensorStore& shared_store() {
    static const NamedTensorStore store = random_resnet50v2_store(11);
    return store;
}

const BackboneGraph& shared_graph() {
    static const BackboneGraph graph = build_resnet50v2(shared_store());
    return graph;
}

NamedTensorStore without(const NamedTensorStore& src, const std::string& drop) {
    NamedTensorStore out;
    for (const auto& e : src.entries()) {
        if (e.name != drop) out.add(e.name, e.shape, e.data);
    }
    return out;
}

// Tensors for one bottleneck block named <prefix>/..., random values.
NamedTensorStore block_store(Rng& rng, const std::string& prefix, std::size_t c_in, std::size_t width,
                             bool projection) {
    NamedTensorStore s;
    auto add_bn = [&](const std::string& name, std::size_t c) {
        s.add(name + "/gamma", {c}, oracle::random_vector(rng, c, 0.5, 1.5));
        s.add(name + "/beta", {c}, oracle::random_vector(rng, c, -0.5, 0.5));
        s.add(name + "/moving_mean", {c}, oracle::random_vector(rng, c, -0.5, 0.5));
        s.add(name + "/moving_var", {c}, oracle::random_vector(rng, c, 0.2, 2.0));
    };
    add_bn(prefix + "/preact_bn", c_in);
    if (projection) {
        s.add(prefix + "/shortcut/kernel", {1, 1, c_in, 4 * width}, oracle::random_vector(rng, c_in * 4 * width));
        s.add(prefix + "/shortcut/bias", {4 * width}, oracle::random_vector(rng, 4 * width));
    }
    s.add(prefix + "/conv1/kernel", {1, 1, c_in, width}, oracle::random_vector(rng, c_in * width));
    add_bn(prefix + "/bn1", width);
    s.add(prefix + "/conv2/kernel", {3, 3, width, width}, oracle::random_vector(rng, 9 * width * width));
    add_bn(prefix + "/bn2", width);
    s.add(prefix + "/conv3/kernel", {1, 1, width, 4 * width}, oracle::random_vector(rng, width * 4 * width));
    s.add(prefix + "/conv3/bias", {4 * width}, oracle::random_vector(rng, 4 * width));
    return s;
}

void zero(NamedTensorStore& s, const std::string& name) {
    const auto& e = s.get(name);
    NamedTensorStore out;
    for (const auto& x : s.entries()) {
        out.add(x.name, x.shape, x.name == name ? std::vector<float>(e.data.size(), 0.0f) : x.data);
    }
    s = std::move(out);
}

// Wraps a tiny single-block graph so its output is observable as a tap.
BackboneGraph block_graph(const NamedTensorStore& s, std::size_t h, std::size_t w, std::size_t c_in,
                          std::size_t width, std::size_t stride, bool projection) {
    GraphBuilder b(h, w, c_in);
    const NodeId out = append_bottleneck_block(b, s, "blk", b.input(), width, stride, projection);
    return std::move(b).finish(b.global_avg_pool("pool", out));
}

Tensor4 tap(const BackboneGraph& g, const Tensor4& x, const std::string& name) {
    const std::vector<std::string> taps{name};
    return g.forward_with_taps(x, taps).at(name);
}

Tensor4 to_tensor(const std::vector<double>& v, Shape4 s) {
    Tensor4 t(s);
    for (std::size_t i = 0; i < v.size(); ++i) t.data()[i] = static_cast<float>(v[i]);
    return t;
}

std::vector<double> relu(std::vector<double> v) {
    for (double& x : v) x = std::max(x, 0.0);
    return v;
}

ConvParams conv_of(const NamedTensorStore& s, const std::string& name, std::size_t k, std::size_t stride,
                   Padding pad, bool bias) {
    const auto& kern = s.get(name + "/kernel");
    ConvParams p;
    p.kh = p.kw = k;
    p.c_in = kern.shape[2];
    p.c_out = kern.shape[3];
    p.kernel = kern.data;
    if (bias) p.bias = s.get(name + "/bias").data;
    p.stride_h = p.stride_w = stride;
    p.padding = pad;
    return p;
}

// Composes the block from scalar oracle loops.
std::vector<double> oracle_block(const NamedTensorStore& s, const Tensor4& x, std::size_t width, std::size_t stride,
                                 bool projection) {
    const Shape4 in = x.shape();
    const Tensor4 pre = to_tensor(relu(oracle::batchnorm(x, batchnorm_from_store(s, "blk/preact_bn"))), in);
    const Tensor4 a = to_tensor(oracle::conv2d(pre, conv_of(s, "blk/conv1", 1, 1, Padding::valid(), false)),
                                {1, in.h, in.w, width});
    const Tensor4 a2 = to_tensor(relu(oracle::batchnorm(a, batchnorm_from_store(s, "blk/bn1"))), a.shape());
    const std::size_t oh = (in.h + 2 - 3) / stride + 1;
    const std::size_t ow = (in.w + 2 - 3) / stride + 1;
    const Tensor4 b = to_tensor(
        oracle::conv2d(a2, conv_of(s, "blk/conv2", 3, stride, Padding::explicit_pads(1, 1, 1, 1), false)),
        {1, oh, ow, width});
    const Tensor4 b2 = to_tensor(relu(oracle::batchnorm(b, batchnorm_from_store(s, "blk/bn2"))), b.shape());
    std::vector<double> out = oracle::conv2d(b2, conv_of(s, "blk/conv3", 1, 1, Padding::valid(), true));
    std::vector<double> shortcut;
    if (projection) {
        shortcut = oracle::conv2d(pre, conv_of(s, "blk/shortcut", 1, stride, Padding::valid(), true));
    } else {
        const auto sub = oracle::maxpool(x, 1, 1, static_cast<long>(stride), static_cast<long>(stride),
                                         Padding::valid());
        shortcut.assign(sub.begin(), sub.end());
    }
    EXPECT_EQ(shortcut.size(), out.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += shortcut[i];
    return out;
}

}  // namespace

TEST(Backbone, ParameterCountMatchesReference) {
    EXPECT_EQ(count_parameters(shared_graph()), kResNet50V2Parameters);
    std::size_t inventory = 0;
    for (const auto& t : resnet50v2_expectation().tensors) inventory += element_count(t.shape);
    EXPECT_EQ(inventory, 23'564'800u);
}

TEST(Backbone, HeadParameterCounts) {
    const HeadParams p = init_head(1, kFeatureWidth, kHiddenWidth, kNumClasses);
    EXPECT_EQ(p.w1.rows() * p.w1.cols() + p.b1.size(), 262'272u);
    EXPECT_EQ(p.w2.rows() * p.w2.cols() + p.b2.size(), 387u);
}

TEST(Backbone, InventoryHasNoDuplicatesAndKnownSize) {
    const auto exp = resnet50v2_expectation();
    std::set<std::string> names;
    for (const auto& t : exp.tensors) EXPECT_TRUE(names.insert(t.name).second) << t.name;
    // stem (2) + 16 blocks × (3 bn × 4 + 4 conv tensors) + 4 projections × 2 + post bn (4)
    EXPECT_EQ(exp.tensors.size(), 2u + 16u * 16u + 4u * 2u + 4u);
}

TEST(Backbone, CheckedInInventoryMatchesCode) {
    const auto file = load_expectation(LUNGNET_INVENTORY_FILE);
    const auto code = resnet50v2_expectation();
    ASSERT_EQ(file.tensors.size(), code.tensors.size());
    for (std::size_t i = 0; i < code.tensors.size(); ++i) {
        EXPECT_EQ(file.tensors[i].name, code.tensors[i].name);
        EXPECT_EQ(file.tensors[i].shape, code.tensors[i].shape) << code.tensors[i].name;
    }
}

TEST(Backbone, MissingTensorIsManifestError) {
    const std::string victim = "stage4/block3/bn2/moving_var";
    try {
        build_resnet50v2(without(shared_store(), victim));
        FAIL() << "expected ManifestError";
    } catch (const ManifestError& e) {
        EXPECT_EQ(e.report().missing, std::vector<std::string>{victim});
        EXPECT_NE(std::string(e.what()).find(victim), std::string::npos);
    }
}

TEST(Backbone, TransposedKernelIsManifestError) {
    NamedTensorStore s;
    for (const auto& e : shared_store().entries()) {
        TensorShape shape = e.shape;
        if (e.name == "stage3/block1/conv1/kernel") std::swap(shape[2], shape[3]);
        s.add(e.name, shape, e.data);
    }
    try {
        build_resnet50v2(s);
        FAIL() << "expected ManifestError";
    } catch (const ManifestError& e) {
        ASSERT_EQ(e.report().mismatched.size(), 1u);
        EXPECT_EQ(e.report().mismatched[0].name, "stage3/block1/conv1/kernel");
        EXPECT_EQ(e.report().mismatched[0].expected, (TensorShape{1, 1, 256, 128}));
    }
}

TEST(Backbone, TapShapesFollowStrideSchedule) {
    // Per stage: (width, blocks, stride of last block); spatial size halves
    // after the last block of stages 2–4.
    struct Stage {
        int index;
        std::size_t width, blocks, stride;
    };
    const Stage stages[] = {{2, 64, 3, 2}, {3, 128, 4, 2}, {4, 256, 6, 2}, {5, 512, 3, 1}};
    const BackboneGraph& g = shared_graph();
    EXPECT_EQ(g.tap_shape("stem/conv"), (Shape4{1, 112, 112, 64}));
    EXPECT_EQ(g.tap_shape("stem/pool"), (Shape4{1, 56, 56, 64}));
    std::size_t hw = 56;
    for (const auto& st : stages) {
        for (std::size_t b = 1; b <= st.blocks; ++b) {
            if (b == st.blocks) hw = (hw + st.stride - 1) / st.stride;
            const std::string name = "stage" + std::to_string(st.index) + "/block" + std::to_string(b) + "/out";
            EXPECT_EQ(g.tap_shape(name), (Shape4{1, hw, hw, 4 * st.width})) << name;
        }
    }
    EXPECT_EQ(g.tap_shape("post/relu"), (Shape4{1, 7, 7, 2048}));
    EXPECT_EQ(g.tap_shape("pool"), (Shape4{1, 1, 1, 2048}));
    EXPECT_EQ(g.tap_shape("stage2/block3/out"), (Shape4{1, 28, 28, 256}));
}

TEST(Backbone, DefaultTapsAreValid) {
    const auto taps = default_taps();
    ASSERT_EQ(taps.size(), 6u);
    for (const auto& t : taps) EXPECT_TRUE(shared_graph().has_tap(t)) << t;
}

TEST(Backbone, UnknownTapListsValidNames) {
    Tensor4 x({1, 224, 224, 3});
    const std::vector<std::string> taps{"stage9/block1/out"};
    try {
        shared_graph().forward_with_taps(x, taps);
        FAIL() << "expected LookupError";
    } catch (const LookupError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("stage9/block1/out"), std::string::npos);
        EXPECT_NE(msg.find("stage5/block3/out"), std::string::npos);
    }
    EXPECT_THROW(shared_graph().tap_shape("nope"), LookupError);
}

TEST(Backbone, WrongInputShapeIsShapeError) {
    EXPECT_THROW(shared_graph().forward_features(Tensor4({1, 100, 100, 3})), ShapeError);
    EXPECT_THROW(shared_graph().forward_features(Tensor4({1, 224, 224, 1})), ShapeError);
}

TEST(Backbone, ForwardIsFiniteDeterministicAndPerImage) {
    Rng rng(4);
    Tensor4 batch = oracle::random_tensor(rng, {3, 224, 224, 3});
    // Image 2 duplicates image 0.
    const std::size_t per_image = 224 * 224 * 3;
    std::copy_n(batch.pixel(0, 0, 0), per_image, batch.pixel(2, 0, 0));
    const Matrix a = shared_graph().forward_features(batch, 1);
    ASSERT_EQ(a.rows(), 3u);
    ASSERT_EQ(a.cols(), 2048u);
    for (float v : a.data()) ASSERT_TRUE(std::isfinite(v));
    EXPECT_EQ(std::memcmp(a.row(0).data(), a.row(2).data(), 2048 * sizeof(float)), 0);
    EXPECT_NE(std::memcmp(a.row(0).data(), a.row(1).data(), 2048 * sizeof(float)), 0);
    // Post-ReLU average pool is non-negative.
    for (float v : a.data()) EXPECT_GE(v, 0.0f);

    const Matrix b = shared_graph().forward_features(batch, 3);
    EXPECT_TRUE(a == b);

    const Tensor4 single = batch.image(1);
    const Matrix c = shared_graph().forward_features(single, 1);
    EXPECT_EQ(std::memcmp(c.row(0).data(), a.row(1).data(), 2048 * sizeof(float)), 0);

    const Tensor4 pooled = tap(shared_graph(), single, "pool");
    EXPECT_EQ(std::memcmp(pooled.data().data(), c.row(0).data(), 2048 * sizeof(float)), 0);
}

TEST(Backbone, TapsAgreeWithGlobalPool) {
    Rng rng(9);
    const Tensor4 x = oracle::random_tensor(rng, {1, 224, 224, 3});
    const Tensor4 post = tap(shared_graph(), x, "post/relu");
    const Tensor4 pooled = tap(shared_graph(), x, "pool");
    const auto ref = oracle::global_avg_pool(post);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        EXPECT_NEAR(pooled.data()[i], ref[i], 1e-6 * std::max(1.0, std::abs(ref[i])));
    }
}

TEST(Block, MatchesOracleComposition) {
    struct Case {
        std::size_t h, w, c_in, width, stride;
        bool projection;
    };
    const Case cases[] = {{6, 6, 8, 2, 1, true}, {7, 5, 8, 2, 2, false}, {8, 8, 8, 2, 1, false},
                          {9, 9, 4, 3, 2, true}, {5, 6, 12, 3, 1, false}};
    Rng rng(21);
    for (const auto& c : cases) {
        const NamedTensorStore s = block_store(rng, "blk", c.c_in, c.width, c.projection);
        const BackboneGraph g = block_graph(s, c.h, c.w, c.c_in, c.width, c.stride, c.projection);
        const Tensor4 x = oracle::random_tensor(rng, {1, c.h, c.w, c.c_in});
        const Tensor4 got = tap(g, x, "blk/out");
        const auto ref = oracle_block(s, x, c.width, c.stride, c.projection);
        ASSERT_EQ(got.size(), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            ASSERT_NEAR(got.data()[i], ref[i], 1e-5 * std::max(1.0, std::abs(ref[i]))) << i;
        }
    }
}

TEST(Block, ZeroResidualReducesToShortcut) {
    Rng rng(22);
    // Identity shortcut: output equals input exactly.
    {
        NamedTensorStore s = block_store(rng, "blk", 8, 2, false);
        zero(s, "blk/conv3/kernel");
        zero(s, "blk/conv3/bias");
        const BackboneGraph g = block_graph(s, 5, 5, 8, 2, 1, false);
        const Tensor4 x = oracle::random_tensor(rng, {1, 5, 5, 8});
        const Tensor4 y = tap(g, x, "blk/out");
        EXPECT_EQ(std::memcmp(y.data().data(), x.data().data(), x.size() * sizeof(float)), 0);
    }
    // Strided shortcut: output is the input subsampled by the stride.
    {
        NamedTensorStore s = block_store(rng, "blk", 8, 2, false);
        zero(s, "blk/conv3/kernel");
        zero(s, "blk/conv3/bias");
        const BackboneGraph g = block_graph(s, 7, 7, 8, 2, 2, false);
        const Tensor4 x = oracle::random_tensor(rng, {1, 7, 7, 8});
        const Tensor4 y = tap(g, x, "blk/out");
        ASSERT_EQ(y.shape(), (Shape4{1, 4, 4, 8}));
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(y.at(0, i, j, c), x.at(0, 2 * i, 2 * j, c));
    }
    // Projection: output is the 1x1 projection of the preactivation.
    {
        NamedTensorStore s = block_store(rng, "blk", 4, 2, true);
        zero(s, "blk/conv3/kernel");
        zero(s, "blk/conv3/bias");
        const BackboneGraph g = block_graph(s, 5, 5, 4, 2, 1, true);
        const Tensor4 x = oracle::random_tensor(rng, {1, 5, 5, 4});
        const Tensor4 y = tap(g, x, "blk/out");
        const Tensor4 pre = tap(g, x, "blk/preact_relu");
        const auto ref = oracle::conv2d(pre, conv_of(s, "blk/shortcut", 1, 1, Padding::valid(), true));
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-6);
    }
}

TEST(GraphBuilder, RejectsBadGraphs) {
    GraphBuilder b(4, 4, 2);
    const NodeId r = b.relu("r", b.input());
    EXPECT_THROW(b.relu("r", b.input()), InputError);
    const NodeId p = b.maxpool("p", r, {2, 2, 2, 2, Padding::valid()});
    EXPECT_THROW(b.add("bad_add", r, p), ShapeError);
    EXPECT_THROW(std::move(b).finish(p), InputError);
}

namespace {

// Fixture container recorded from our own backbone.
NamedTensorStore self_fixtures(const BackboneGraph& g, const std::vector<std::string>& taps) {
    Rng rng(40);
    NamedTensorStore s;
    const std::vector<std::pair<std::string, Tensor4>> inputs{
        {"zeros", Tensor4({1, 224, 224, 3})},
        {"rand0", oracle::random_tensor(rng, {1, 224, 224, 3})},
    };
    for (const auto& [id, x] : inputs) {
        std::vector<std::string> names = taps;
        names.emplace_back("pool");
        const auto acts = g.forward_with_taps(x, names);
        s.add("golden/" + id + "/input", {224, 224, 3}, {x.data().begin(), x.data().end()});
        const auto& f = acts.at("pool").data();
        s.add("golden/" + id + "/features", {2048}, {f.begin(), f.end()});
        for (const auto& t : taps) {
            const Tensor4& a = acts.at(t);
            s.add("golden/" + id + "/tap/" + t, {a.h(), a.w(), a.c()}, {a.data().begin(), a.data().end()});
        }
    }
    return s;
}

}  // namespace

TEST(Golden, SelfFixturesAgreeExactly) {
    const std::vector<std::string> taps{"stem/conv", "stage3/block4/out"};
    const auto fixtures = parse_golden_fixtures(self_fixtures(shared_graph(), taps));
    ASSERT_EQ(fixtures.size(), 2u);
    EXPECT_EQ(fixtures[0].id, "zeros");
    ASSERT_EQ(fixtures[1].taps.size(), 2u);
    EXPECT_EQ(fixtures[1].taps[1].first, "stage3/block4/out");
    for (const auto& r : compare_golden(shared_graph(), fixtures)) {
        EXPECT_EQ(r.feature_mean_rel_error, 0.0);
        for (const auto& [tap, e] : r.tap_max_error) EXPECT_EQ(e, 0.0) << tap;
        EXPECT_TRUE(within_golden_tolerance(r));
    }
}

TEST(Golden, DetectsDrift) {
    const std::vector<std::string> taps{"stem/conv"};
    auto fixtures = parse_golden_fixtures(self_fixtures(shared_graph(), taps));
    for (float& v : fixtures[1].features) v *= 1.001f;
    fixtures[0].taps[0].second.data()[5] += 0.01f;
    const auto results = compare_golden(shared_graph(), fixtures);
    EXPECT_FALSE(within_golden_tolerance(results[0]));
    EXPECT_NEAR(results[0].tap_max_error[0].second, 0.01, 1e-6);
    EXPECT_FALSE(within_golden_tolerance(results[1]));
    EXPECT_GT(results[1].feature_mean_rel_error, 5e-4);
}

TEST(Golden, MalformedFixturesRejected) {
    auto one = [](const std::string& name, TensorShape shape) {
        NamedTensorStore s;
        s.add(name, shape, std::vector<float>(element_count(shape)));
        return s;
    };
    EXPECT_THROW(parse_golden_fixtures(one("other/x/input", {2, 2, 3})), FormatError);
    EXPECT_THROW(parse_golden_fixtures(one("golden/x/input", {2, 2, 3})), FormatError);  // no features
    EXPECT_THROW(parse_golden_fixtures(one("golden/x/input", {2, 3})), FormatError);
    EXPECT_THROW(parse_golden_fixtures(one("golden/x/bogus", {2})), FormatError);
    NamedTensorStore small;
    small.add("golden/x/input", {8, 8, 3}, std::vector<float>(192));
    small.add("golden/x/features", {2048}, std::vector<float>(2048));
    EXPECT_THROW(compare_golden(shared_graph(), parse_golden_fixtures(small)), ShapeError);
}

// Runs when exported pretrained weights and their golden fixtures are provided:
//   LUNGNET_GOLDEN_WEIGHTS=<container> LUNGNET_GOLDEN_FIXTURES=<container>
TEST(Golden, ExportedFixturesWithinTolerance) {
    const char* weights = std::getenv("LUNGNET_GOLDEN_WEIGHTS");
    const char* fixtures = std::getenv("LUNGNET_GOLDEN_FIXTURES");
    if (!weights || !fixtures) {
        GTEST_SKIP() << "golden fixtures not configured";
    }
    const BackboneGraph g = build_resnet50v2(load_container(weights));
    const auto results = compare_golden(g, parse_golden_fixtures(load_container(fixtures)));
    ASSERT_FALSE(results.empty());
    for (const auto& r : results) {
        EXPECT_LE(r.feature_mean_rel_error, kGoldenFeatureTolerance) << r.id;
        for (const auto& [tap, e] : r.tap_max_error) EXPECT_LE(e, kGoldenTapTolerance) << r.id << ' ' << tap;
    }
}
