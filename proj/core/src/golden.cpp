#include "lungnet/golden.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "lungnet/errors.hpp"

namespace lungnet {

namespace {

constexpr std::string_view kPrefix = "golden/";

Tensor4 as_image(const TensorEntry& e) {
    if (e.shape.size() != 3) {
        throw FormatError("golden tensor '" + e.name + "' must be [h, w, c], got " + to_string(e.shape));
    }
    Tensor4 t({1, e.shape[0], e.shape[1], e.shape[2]});
    std::copy(e.data.begin(), e.data.end(), t.data().begin());
    return t;
}

}  // namespace

std::vector<GoldenFixture> parse_golden_fixtures(const NamedTensorStore& store) {
    std::map<std::string, GoldenFixture> by_id;
    std::vector<std::string> order;
    for (const auto& e : store.entries()) {
        if (!e.name.starts_with(kPrefix)) {
            throw FormatError("unexpected tensor '" + e.name + "' in golden fixtures");
        }
        const std::string rest = e.name.substr(kPrefix.size());
        const auto slash = rest.find('/');
        if (slash == std::string::npos || slash == 0) {
            throw FormatError("golden tensor '" + e.name + "' has no fixture id");
        }
        const std::string id = rest.substr(0, slash);
        const std::string what = rest.substr(slash + 1);
        auto [it, inserted] = by_id.try_emplace(id);
        if (inserted) {
            it->second.id = id;
            order.push_back(id);
        }
        GoldenFixture& f = it->second;
        if (what == "input") {
            f.input = as_image(e);
        } else if (what == "features") {
            if (e.shape.size() != 1) {
                throw FormatError("golden tensor '" + e.name + "' must be one-dimensional");
            }
            f.features = e.data;
        } else if (what.starts_with("tap/") && what.size() > 4) {
            f.taps.emplace_back(what.substr(4), as_image(e));
        } else {
            throw FormatError("unrecognized golden tensor '" + e.name + "'");
        }
    }
    std::vector<GoldenFixture> out;
    for (const auto& id : order) {
        GoldenFixture& f = by_id[id];
        if (f.input.size() == 0 || f.features.empty()) {
            throw FormatError("golden fixture '" + id + "' needs both input and features");
        }
        out.push_back(std::move(f));
    }
    return out;
}

std::vector<GoldenResult> compare_golden(const BackboneGraph& graph, const std::vector<GoldenFixture>& fixtures) {
    std::vector<GoldenResult> results;
    for (const auto& f : fixtures) {
        if (!(f.input.shape() == graph.input_shape())) {
            throw ShapeError("golden fixture '" + f.id + "' input is " + to_string(f.input.shape()) +
                             ", backbone expects " + to_string(graph.input_shape()));
        }
        if (f.features.size() != graph.feature_width()) {
            throw ShapeError("golden fixture '" + f.id + "' has " + std::to_string(f.features.size()) +
                             " features, backbone produces " + std::to_string(graph.feature_width()));
        }
        std::vector<std::string> names{"pool"};
        for (const auto& [name, t] : f.taps) {
            names.push_back(name);
        }
        const auto acts = graph.forward_with_taps(f.input, names);

        GoldenResult r;
        r.id = f.id;
        const auto ours = acts.at("pool").data();
        double sum = 0.0;
        for (std::size_t i = 0; i < f.features.size(); ++i) {
            const double ref = f.features[i];
            sum += std::abs(ours[i] - ref) / std::max(std::abs(ref), kGoldenFeatureFloor);
        }
        r.feature_mean_rel_error = sum / static_cast<double>(f.features.size());

        for (const auto& [name, ref] : f.taps) {
            const Tensor4& mine = acts.at(name);
            if (!(mine.shape() == ref.shape())) {
                throw ShapeError("golden tap '" + name + "' is " + to_string(ref.shape()) + ", backbone gives " +
                                 to_string(mine.shape()));
            }
            double worst = 0.0;
            for (std::size_t i = 0; i < ref.size(); ++i) {
                const double b = ref.data()[i];
                worst = std::max(worst, std::abs(mine.data()[i] - b) / std::max(std::abs(b), 1.0));
            }
            r.tap_max_error.emplace_back(name, worst);
        }
        results.push_back(std::move(r));
    }
    return results;
}

bool within_golden_tolerance(const GoldenResult& result) {
    if (!(result.feature_mean_rel_error <= kGoldenFeatureTolerance)) {
        return false;
    }
    return std::all_of(result.tap_max_error.begin(), result.tap_max_error.end(),
                       [](const auto& t) { return t.second <= kGoldenTapTolerance; });
}

}  // namespace lungnet
