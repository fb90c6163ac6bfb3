#pragma once

#include <string>
#include <vector>

#include "lungnet/backbone.hpp"
#include "lungnet/weights_store.hpp"

namespace lungnet {

// Reference activations recorded from another implementation of the same
// backbone. Per fixture id:
//   golden/<id>/input       [224, 224, 3]  preprocessed tensor
//   golden/<id>/features    [2048]
//   golden/<id>/tap/<tap>   [h, w, c]      optional, any tap name
struct GoldenFixture {
    std::string id;
    Tensor4 input;
    std::vector<float> features;
    std::vector<std::pair<std::string, Tensor4>> taps;
};

// Throws FormatError when a fixture is incomplete or shaped inconsistently.
std::vector<GoldenFixture> parse_golden_fixtures(const NamedTensorStore& store);

struct GoldenResult {
    std::string id;
    // mean over elements of |ours - ref| / max(|ref|, floor)
    double feature_mean_rel_error = 0.0;
    // per tap: max over elements of |ours - ref| / max(|ref|, 1)
    std::vector<std::pair<std::string, double>> tap_max_error;
};

inline constexpr double kGoldenFeatureFloor = 1e-3;
inline constexpr double kGoldenFeatureTolerance = 1e-4;
inline constexpr double kGoldenTapTolerance = 1e-3;

std::vector<GoldenResult> compare_golden(const BackboneGraph& graph, const std::vector<GoldenFixture>& fixtures);

bool within_golden_tolerance(const GoldenResult& result);

}  // namespace lungnet
