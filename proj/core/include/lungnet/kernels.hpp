#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lungnet/tensor.hpp"

namespace lungnet {

struct Padding {
    enum class Kind { same, valid, explicit_pads };

    Kind kind = Kind::valid;
    std::size_t top = 0;
    std::size_t bottom = 0;
    std::size_t left = 0;
    std::size_t right = 0;

    static Padding same() { return {Kind::same}; }
    static Padding valid() { return {Kind::valid}; }
    static Padding explicit_pads(std::size_t top, std::size_t bottom, std::size_t left, std::size_t right) {
        return {Kind::explicit_pads, top, bottom, left, right};
    }
};

// Concrete padding and output extent of a sliding window.
struct WindowGeometry {
    std::size_t pad_top = 0;
    std::size_t pad_bottom = 0;
    std::size_t pad_left = 0;
    std::size_t pad_right = 0;
    std::size_t out_h = 0;
    std::size_t out_w = 0;
};

// "same" gives out = ceil(in / stride) with the odd padding cell on the
// bottom/right. Throws ShapeError if no window fits.
WindowGeometry window_geometry(std::size_t in_h, std::size_t in_w, std::size_t kh, std::size_t kw, std::size_t sh,
                               std::size_t sw, const Padding& padding);

struct ConvParams {
    std::size_t kh = 1;
    std::size_t kw = 1;
    std::size_t c_in = 1;
    std::size_t c_out = 1;
    std::vector<float> kernel;  // (kh, kw, c_in, c_out), row-major
    std::vector<float> bias;    // empty, or c_out values
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    Padding padding = Padding::valid();

    std::size_t parameter_count() const { return kernel.size() + bias.size(); }
    void validate() const;
};

struct BatchNormParams {
    std::vector<float> gamma;
    std::vector<float> beta;
    std::vector<float> moving_mean;
    std::vector<float> moving_var;
    float eps = 1e-3f;

    std::size_t channels() const { return gamma.size(); }
    std::size_t parameter_count() const { return gamma.size() + beta.size() + moving_mean.size() + moving_var.size(); }
    void validate() const;
};

// Patch-flattening + GEMM convolution. This is the production path.
Tensor4 conv2d(const Tensor4& input, const ConvParams& params);
// Direct nested-loop convolution; reference for conv2d.
Tensor4 conv2d_direct(const Tensor4& input, const ConvParams& params);

Tensor4 batchnorm_inference(const Tensor4& input, const BatchNormParams& params);

Tensor4 relu(Tensor4 input);
void relu_inplace(std::span<float> values);

template <typename T>
BasicMatrix<T> relu(BasicMatrix<T> input);

// Padding cells act as -infinity.
Tensor4 maxpool2d(const Tensor4& input, std::size_t kh, std::size_t kw, std::size_t sh, std::size_t sw,
                  const Padding& padding);

Tensor4 zero_pad2d(const Tensor4& input, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right);

// Elementwise sum of equally shaped tensors.
Tensor4 add(const Tensor4& a, const Tensor4& b);

Matrix global_avg_pool(const Tensor4& input);

template <typename T>
BasicMatrix<T> dense_forward(const BasicMatrix<T>& input, const BasicMatrix<T>& weights, std::span<const T> bias);

template <typename T>
struct DenseGrads {
    BasicMatrix<T> weights;
    std::vector<T> bias;
    BasicMatrix<T> input;
};

template <typename T>
DenseGrads<T> dense_backward(const BasicMatrix<T>& input, const BasicMatrix<T>& weights,
                             const BasicMatrix<T>& upstream);

template <typename T>
BasicMatrix<T> softmax(const BasicMatrix<T>& logits);

template <typename T>
struct CrossEntropyResult {
    T loss{};
    BasicMatrix<T> grad_logits;  // d(loss)/d(logits), assuming probs = softmax(logits)
};

inline constexpr double kProbabilityFloor = 1e-12;

// Mean negative log-likelihood over rows. Probabilities are clamped to
// kProbabilityFloor before the log.
template <typename T>
CrossEntropyResult<T> cross_entropy(const BasicMatrix<T>& probs, std::span<const int> labels);

}  // namespace lungnet
