#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "lungnet/dataset.hpp"
#include "lungnet/errors.hpp"
#include "lungnet/rng.hpp"
#include "image_tree.hpp"
#include "oracles.hpp"

using namespace lungnet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) { return fixture::fresh_dir("lungnet_test_dataset", name); }

using fixture::write_image;

fs::path toy_tree(const std::string& name, int per_class) {
    const fs::path root = fresh_dir(name);
    fixture::populate_tree(root, per_class);
    return root;
}

DatasetManifest synthetic_manifest(std::size_t per_class) {
    DatasetManifest m;
    m.class_names = {"a", "b", "c"};
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            m.records.push_back({"c" + std::to_string(c) + "/" + std::to_string(i) + ".jpg", c, Split::none});
        }
    return m;
}

}  // namespace

TEST(Index, ToyTreeIsOrderedAndLabeled) {
    const fs::path root = toy_tree("toy", 10);
    std::ofstream(root / "lung_n" / ".hidden.png") << "x";
    const DatasetManifest m = index_dataset(root);
    ASSERT_EQ(m.records.size(), 30u);
    EXPECT_TRUE(m.issues.empty());
    EXPECT_EQ(m.class_names, (std::vector<std::string>{"benign", "adenocarcinoma", "squamous"}));
    for (int c = 0; c < 3; ++c) EXPECT_EQ(m.class_count(c), 10u);
    EXPECT_EQ(m.records[0].path.filename(), "img_000.png");
    EXPECT_EQ(m.records[0].label, 0);
    EXPECT_EQ(m.records[10].label, 1);
    EXPECT_EQ(m.records[10].path.parent_path().filename(), "lung_aca");
    EXPECT_EQ(m.records[29].path.filename(), "img_009.png");
}

TEST(Index, UnreadableFileBecomesIssue) {
    const fs::path root = toy_tree("issues", 4);
    std::ofstream(root / "lung_scc" / "broken.jpg") << "not an image at all";
    std::ofstream(root / "lung_scc" / "notes.txt") << "hello";
    const DatasetManifest m = index_dataset(root);
    EXPECT_EQ(m.records.size(), 12u);
    ASSERT_EQ(m.issues.size(), 2u);
    EXPECT_EQ(m.issues[0].path.filename(), "broken.jpg");
    EXPECT_FALSE(m.issues[0].reason.empty());
}

TEST(Index, MissingClassDirectoryIsInputError) {
    const fs::path root = toy_tree("missing", 2);
    fs::remove_all(root / "lung_aca");
    try {
        index_dataset(root);
        FAIL() << "expected InputError";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("lung_aca"), std::string::npos);
    }
    EXPECT_THROW(index_dataset(root / "nowhere"), InputError);
}

TEST(Index, CustomClasses) {
    const fs::path root = toy_tree("custom", 2);
    const std::vector<ClassSpec> classes{{"x", "lung_scc"}, {"y", "lung_n"}};
    const DatasetManifest m = index_dataset(root, classes);
    EXPECT_EQ(m.class_names, (std::vector<std::string>{"x", "y"}));
    EXPECT_EQ(m.records.front().path.parent_path().filename(), "lung_scc");
}

TEST(Split, CountsForReferenceCorpus) {
    const auto per_class = split_counts(5000, {});
    EXPECT_EQ(per_class, (std::array<std::size_t, 3>{3400, 850, 750}));
    const DatasetManifest m = stratified_split(synthetic_manifest(5000), {}, 1);
    EXPECT_EQ(m.count(Split::train), 10'200u);
    EXPECT_EQ(m.count(Split::val), 2'550u);
    EXPECT_EQ(m.count(Split::test), 2'250u);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(m.count(c, Split::test), 750u);
}

TEST(Split, CountsOracle) {
    // Independent oracle: largest integers not exceeding f·n, remainder dealt
    // train, val, test.
    const SplitFractions f{0.68, 0.17, 0.15};
    for (std::size_t n = 7; n < 400; ++n) {
        std::array<std::size_t, 3> want{n * 68 / 100, n * 17 / 100, n * 15 / 100};
        std::size_t left = n - want[0] - want[1] - want[2];
        for (std::size_t i = 0; left > 0; i = (i + 1) % 3, --left) ++want[i];
        EXPECT_EQ(split_counts(n, f), want) << n;
    }
}

TEST(Split, BadFractionsRejected) {
    EXPECT_THROW(split_counts(10, {0.5, 0.5, 0.0}), InputError);
    EXPECT_THROW(split_counts(10, {0.5, 0.3, 0.3}), InputError);
    EXPECT_THROW(stratified_split(synthetic_manifest(3), {}, 0), InputError);
}

TEST(Split, DeterministicAndSeedSensitive) {
    const auto a = stratified_split(synthetic_manifest(200), {}, 42);
    const auto b = stratified_split(synthetic_manifest(200), {}, 42);
    const auto c = stratified_split(synthetic_manifest(200), {}, 43);
    bool differs = false;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        EXPECT_EQ(a.records[i].split, b.records[i].split);
        differs |= a.records[i].split != c.records[i].split;
        EXPECT_NE(a.records[i].split, Split::none);
    }
    EXPECT_TRUE(differs);
    for (int cls = 0; cls < 3; ++cls) {
        EXPECT_EQ(c.count(cls, Split::train), 136u);
        EXPECT_EQ(c.count(cls, Split::val), 34u);
        EXPECT_EQ(c.count(cls, Split::test), 30u);
    }
}

TEST(Split, ManifestRoundTrip) {
    auto m = stratified_split(synthetic_manifest(20), {0.6, 0.2, 0.2}, 5);
    m.issues.push_back({"c0/bad.jpg", "unrecognized format"});
    const fs::path p = fresh_dir("manifest") / "manifest.json";
    save_manifest(m, p);
    const DatasetManifest back = load_manifest(p);
    EXPECT_EQ(back.class_names, m.class_names);
    EXPECT_EQ(back.seed, 5u);
    EXPECT_DOUBLE_EQ(back.fractions.val, 0.2);
    ASSERT_EQ(back.records.size(), m.records.size());
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        EXPECT_EQ(back.records[i].path, m.records[i].path);
        EXPECT_EQ(back.records[i].label, m.records[i].label);
        EXPECT_EQ(back.records[i].split, m.records[i].split);
    }
    ASSERT_EQ(back.issues.size(), 1u);
    EXPECT_EQ(back.issues[0].reason, "unrecognized format");
}

TEST(SplitName, ParseAndPrint) {
    for (Split s : {Split::none, Split::train, Split::val, Split::test}) EXPECT_EQ(parse_split(to_string(s)), s);
    EXPECT_THROW(parse_split("validation"), InputError);
}

TEST(Preprocess, BlackAndWhiteMapToUnitRange) {
    for (const auto& [value, expected] : std::map<int, float>{{0, -1.0f}, {255, 1.0f}}) {
        RgbImage img{5, 7, std::vector<std::uint8_t>(5 * 7 * 3, static_cast<std::uint8_t>(value))};
        const Tensor4 t = preprocess(img, 224);
        ASSERT_EQ(t.shape(), (Shape4{1, 224, 224, 3}));
        for (float v : t.data()) ASSERT_EQ(v, expected);
    }
}

TEST(Preprocess, CheckerboardMatchesBilinearOracle) {
    const std::size_t n = 768;
    RgbImage img{n, n, std::vector<std::uint8_t>(n * n * 3)};
    std::vector<double> scaled(n * n * 3);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const std::uint8_t v = ((y / 8 + x / 8) % 2) ? static_cast<std::uint8_t>(200 + c) : 17;
                img.pixels[(y * n + x) * 3 + c] = v;
                scaled[(y * n + x) * 3 + c] = v;
            }
    const Tensor4 t = preprocess(img, 224);
    const auto ref = oracle::bilinear(scaled, n, n, 3, 224, 224);
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        worst = std::max(worst, std::abs(t.data()[i] - (ref[i] / 127.5 - 1.0)));
    }
    EXPECT_LE(worst, 1e-5);
}

TEST(Preprocess, ResizeOracleRandomShapes) {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t ih = 1 + rng.below(30), iw = 1 + rng.below(30), oh = 1 + rng.below(30),
                          ow = 1 + rng.below(30), c = 1 + rng.below(3);
        const auto src = oracle::random_vector(rng, ih * iw * c, 0, 255);
        const auto got = resize_bilinear(src, ih, iw, c, oh, ow);
        const auto ref = oracle::bilinear(std::vector<double>(src.begin(), src.end()), ih, iw, c, oh, ow);
        ASSERT_EQ(got.size(), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(got[i], ref[i], 1e-3);
    }
}

TEST(Preprocess, DecodeKeepsRgbOrder) {
    const fs::path p = fresh_dir("decode") / "rgb.png";
    write_image(p, 3, 4, [](int y, int x, int ch) { return ch == 0 ? 250 : ch == 1 ? 10 * y : 20 * x; });
    const RgbImage img = decode_image(p);
    ASSERT_EQ(img.height, 3u);
    ASSERT_EQ(img.width, 4u);
    EXPECT_EQ(img.pixels[0], 250);
    EXPECT_EQ(img.pixels[(2 * 4 + 3) * 3 + 1], 20);
    EXPECT_EQ(img.pixels[(2 * 4 + 3) * 3 + 2], 60);
    std::ofstream(p.parent_path() / "bad.png") << "garbage";
    EXPECT_THROW(decode_image(p.parent_path() / "bad.png"), InputError);
}

TEST(Preprocess, FlipsAreInvolutions) {
    Rng rng(3);
    const Tensor4 x = oracle::random_tensor(rng, {1, 5, 6, 3});
    Tensor4 h = x, v = x;
    flip_horizontal(h);
    flip_vertical(v);
    EXPECT_EQ(h.at(0, 1, 0, 2), x.at(0, 1, 5, 2));
    EXPECT_EQ(v.at(0, 0, 2, 1), x.at(0, 4, 2, 1));
    flip_horizontal(h);
    flip_vertical(v);
    EXPECT_TRUE(std::equal(h.data().begin(), h.data().end(), x.data().begin()));
    EXPECT_TRUE(std::equal(v.data().begin(), v.data().end(), x.data().begin()));
}

TEST(FeatureCache, RoundTripIsExact) {
    Rng rng(12);
    FeatureCache cache;
    cache.features = Matrix(9, 16);
    for (float& v : cache.features.data()) v = static_cast<float>(rng.uniform(-5, 5));
    for (int i = 0; i < 9; ++i) {
        cache.labels.push_back(i % 3);
        cache.paths.push_back("p/" + std::to_string(i) + ".jpg");
    }
    cache.class_names = {"a", "b", "c"};
    cache.fingerprint = "0123456789abcdef";
    cache.split = Split::val;
    const fs::path p = fresh_dir("cache") / "val.tensors";
    save_feature_cache(cache, p);
    EXPECT_TRUE(fs::exists(sidecar_path(p)));
    const FeatureCache back = load_feature_cache(p);
    EXPECT_TRUE(back.features == cache.features);
    EXPECT_EQ(back.labels, cache.labels);
    EXPECT_EQ(back.paths, cache.paths);
    EXPECT_EQ(back.class_names, cache.class_names);
    EXPECT_EQ(back.fingerprint, cache.fingerprint);
    EXPECT_EQ(back.split, Split::val);

    FeatureCache bad = cache;
    bad.labels.pop_back();
    EXPECT_THROW(save_feature_cache(bad, p), FormatError);
}

TEST(Extract, TinyBackboneMatchesDirectForward) {
    const fs::path root = toy_tree("extract", 6);
    const DatasetManifest m = stratified_split(index_dataset(root), {0.5, 0.25, 0.25}, 2);

    Rng rng(30);
    GraphBuilder b(8, 8, 3);
    ConvParams conv;
    conv.kh = conv.kw = 3;
    conv.c_in = 3;
    conv.c_out = 5;
    conv.kernel = oracle::random_vector(rng, 3 * 3 * 3 * 5);
    conv.bias = oracle::random_vector(rng, 5);
    conv.padding = Padding::same();
    const NodeId c = b.conv("c", b.input(), conv);
    const NodeId r = b.relu("r", c);
    const BackboneGraph g = std::move(b).finish(b.global_avg_pool("pool", r));

    const fs::path out = root / "train.tensors";
    ExtractOptions opt;
    opt.batch_size = 2;
    std::size_t calls = 0;
    opt.progress = [&](std::size_t done, std::size_t total) {
        ++calls;
        EXPECT_LE(done, total);
    };
    const FeatureCache cache = extract_and_cache(g, "fp", m, Split::train, out, opt);
    ASSERT_EQ(cache.size(), m.count(Split::train));
    EXPECT_EQ(calls, (cache.size() + 1) / 2);
    EXPECT_EQ(cache.features.cols(), 5u);

    const auto records = m.records_in(Split::train);
    for (std::size_t i = 0; i < records.size(); ++i) {
        EXPECT_EQ(cache.labels[i], records[i]->label);
        const Matrix direct = g.forward_features(load_and_preprocess(records[i]->path, 8));
        EXPECT_EQ(std::memcmp(direct.row(0).data(), cache.features.row(i).data(), 5 * sizeof(float)), 0);
    }
    const FeatureCache back = load_feature_cache(out);
    EXPECT_TRUE(back.features == cache.features);
    EXPECT_EQ(back.split, Split::train);

    opt.threads = 2;
    const FeatureCache threaded = extract_and_cache(g, "fp", m, Split::train, root / "t2.tensors", opt);
    EXPECT_TRUE(threaded.features == cache.features);
}
