#include "lungnet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lungnet/errors.hpp"
#include "lungnet/gemm.hpp"

namespace lungnet {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

std::string dims(std::size_t a, std::size_t b) { return std::to_string(a) + "x" + std::to_string(b); }

}  // namespace

WindowGeometry window_geometry(std::size_t in_h, std::size_t in_w, std::size_t kh, std::size_t kw, std::size_t sh,
                               std::size_t sw, const Padding& padding) {
    if (kh == 0 || kw == 0 || sh == 0 || sw == 0) {
        throw ShapeError("window and stride dims must be >= 1");
    }
    WindowGeometry g;
    switch (padding.kind) {
        case Padding::Kind::same: {
            g.out_h = ceil_div(in_h, sh);
            g.out_w = ceil_div(in_w, sw);
            const std::size_t need_h = g.out_h == 0 ? 0 : (g.out_h - 1) * sh + kh;
            const std::size_t need_w = g.out_w == 0 ? 0 : (g.out_w - 1) * sw + kw;
            const std::size_t total_h = need_h > in_h ? need_h - in_h : 0;
            const std::size_t total_w = need_w > in_w ? need_w - in_w : 0;
            g.pad_top = total_h / 2;
            g.pad_bottom = total_h - g.pad_top;
            g.pad_left = total_w / 2;
            g.pad_right = total_w - g.pad_left;
            break;
        }
        case Padding::Kind::valid:
        case Padding::Kind::explicit_pads: {
            g.pad_top = padding.top;
            g.pad_bottom = padding.bottom;
            g.pad_left = padding.left;
            g.pad_right = padding.right;
            const std::size_t ph = in_h + g.pad_top + g.pad_bottom;
            const std::size_t pw = in_w + g.pad_left + g.pad_right;
            g.out_h = ph >= kh ? (ph - kh) / sh + 1 : 0;
            g.out_w = pw >= kw ? (pw - kw) / sw + 1 : 0;
            break;
        }
    }
    if (g.out_h == 0 || g.out_w == 0) {
        throw ShapeError("window " + dims(kh, kw) + " admits no position on padded input " +
                         dims(in_h + g.pad_top + g.pad_bottom, in_w + g.pad_left + g.pad_right));
    }
    return g;
}

void ConvParams::validate() const {
    if (kh == 0 || kw == 0 || c_in == 0 || c_out == 0 || stride_h == 0 || stride_w == 0) {
        throw ShapeError("convolution dims and strides must be >= 1");
    }
    if (kernel.size() != kh * kw * c_in * c_out) {
        throw ShapeError("convolution kernel holds " + std::to_string(kernel.size()) + " values, expected " +
                         std::to_string(kh * kw * c_in * c_out));
    }
    if (!bias.empty() && bias.size() != c_out) {
        throw ShapeError("convolution bias length " + std::to_string(bias.size()) + " != c_out " +
                         std::to_string(c_out));
    }
}

void BatchNormParams::validate() const {
    const std::size_t c = gamma.size();
    if (beta.size() != c || moving_mean.size() != c || moving_var.size() != c) {
        throw ShapeError("batch-norm parameter vectors differ in length");
    }
    for (std::size_t i = 0; i < c; ++i) {
        if (!(static_cast<double>(moving_var[i]) + static_cast<double>(eps) > 0.0)) {
            throw NumericError("batch-norm variance + eps is not positive at channel " + std::to_string(i));
        }
    }
}

namespace {

WindowGeometry conv_geometry(const Tensor4& input, const ConvParams& params) {
    params.validate();
    if (input.c() != params.c_in) {
        throw ShapeError("conv2d input has " + std::to_string(input.c()) + " channels, kernel expects " +
                         std::to_string(params.c_in));
    }
    return window_geometry(input.h(), input.w(), params.kh, params.kw, params.stride_h, params.stride_w,
                           params.padding);
}

// Fills `patches` (out_h*out_w rows, kh*kw*c_in columns) for image i.
void im2col(const Tensor4& input, std::size_t i, const ConvParams& p, const WindowGeometry& g,
            std::vector<float>& patches) {
    const std::size_t cin = p.c_in;
    const std::size_t row_len = p.kh * p.kw * cin;
    const auto in_h = static_cast<std::ptrdiff_t>(input.h());
    const auto in_w = static_cast<std::ptrdiff_t>(input.w());
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            float* dst = patches.data() + (oy * g.out_w + ox) * row_len;
            const auto y0 = static_cast<std::ptrdiff_t>(oy * p.stride_h) - static_cast<std::ptrdiff_t>(g.pad_top);
            const auto x0 = static_cast<std::ptrdiff_t>(ox * p.stride_w) - static_cast<std::ptrdiff_t>(g.pad_left);
            for (std::size_t ky = 0; ky < p.kh; ++ky) {
                const std::ptrdiff_t y = y0 + static_cast<std::ptrdiff_t>(ky);
                if (y < 0 || y >= in_h) {
                    std::fill_n(dst, p.kw * cin, 0.0f);
                    dst += p.kw * cin;
                    continue;
                }
                for (std::size_t kx = 0; kx < p.kw; ++kx) {
                    const std::ptrdiff_t x = x0 + static_cast<std::ptrdiff_t>(kx);
                    if (x < 0 || x >= in_w) {
                        std::fill_n(dst, cin, 0.0f);
                    } else {
                        const float* src =
                            input.pixel(i, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                        std::copy_n(src, cin, dst);
                    }
                    dst += cin;
                }
            }
        }
    }
}

}  // namespace

Tensor4 conv2d(const Tensor4& input, const ConvParams& params) {
    const WindowGeometry g = conv_geometry(input, params);
    Tensor4 out({input.n(), g.out_h, g.out_w, params.c_out});

    const std::size_t pixels = g.out_h * g.out_w;
    const std::size_t k = params.kh * params.kw * params.c_in;
    const bool pointwise = params.kh == 1 && params.kw == 1 && params.stride_h == 1 && params.stride_w == 1 &&
                           g.pad_top == 0 && g.pad_bottom == 0 && g.pad_left == 0 && g.pad_right == 0;

    std::vector<float> patches;
    if (!pointwise) {
        patches.resize(pixels * k);
    }
    for (std::size_t i = 0; i < input.n(); ++i) {
        const float* a = nullptr;
        if (pointwise) {
            a = input.pixel(i, 0, 0);
        } else {
            im2col(input, i, params, g, patches);
            a = patches.data();
        }
        float* c = out.pixel(i, 0, 0);
        gemm(pixels, params.c_out, k, a, k, params.kernel.data(), params.c_out, c, params.c_out);
        if (!params.bias.empty()) {
            for (std::size_t px = 0; px < pixels; ++px) {
                float* row = c + px * params.c_out;
                for (std::size_t oc = 0; oc < params.c_out; ++oc) {
                    row[oc] += params.bias[oc];
                }
            }
        }
    }
    return out;
}

Tensor4 conv2d_direct(const Tensor4& input, const ConvParams& params) {
    const WindowGeometry g = conv_geometry(input, params);
    Tensor4 out({input.n(), g.out_h, g.out_w, params.c_out});
    const auto in_h = static_cast<std::ptrdiff_t>(input.h());
    const auto in_w = static_cast<std::ptrdiff_t>(input.w());

    for (std::size_t i = 0; i < input.n(); ++i) {
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                for (std::size_t oc = 0; oc < params.c_out; ++oc) {
                    float acc = 0.0f;
                    for (std::size_t ky = 0; ky < params.kh; ++ky) {
                        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * params.stride_h + ky) -
                                                 static_cast<std::ptrdiff_t>(g.pad_top);
                        if (y < 0 || y >= in_h) {
                            continue;
                        }
                        for (std::size_t kx = 0; kx < params.kw; ++kx) {
                            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * params.stride_w + kx) -
                                                     static_cast<std::ptrdiff_t>(g.pad_left);
                            if (x < 0 || x >= in_w) {
                                continue;
                            }
                            for (std::size_t ic = 0; ic < params.c_in; ++ic) {
                                const float v =
                                    input.at(i, static_cast<std::size_t>(y), static_cast<std::size_t>(x), ic);
                                const float w =
                                    params.kernel[((ky * params.kw + kx) * params.c_in + ic) * params.c_out + oc];
                                acc += v * w;
                            }
                        }
                    }
                    if (!params.bias.empty()) {
                        acc += params.bias[oc];
                    }
                    out.at(i, oy, ox, oc) = acc;
                }
            }
        }
    }
    return out;
}

Tensor4 batchnorm_inference(const Tensor4& input, const BatchNormParams& params) {
    params.validate();
    const std::size_t c = params.channels();
    if (input.c() != c) {
        throw ShapeError("batch-norm input has " + std::to_string(input.c()) + " channels, parameters have " +
                         std::to_string(c));
    }
    std::vector<float> scale(c);
    std::vector<float> shift(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        scale[ch] = params.gamma[ch] / std::sqrt(params.moving_var[ch] + params.eps);
        shift[ch] = params.beta[ch] - params.moving_mean[ch] * scale[ch];
    }
    Tensor4 out(input.shape());
    auto src = input.data();
    auto dst = out.data();
    const std::size_t pixels = input.size() / c;
    for (std::size_t px = 0; px < pixels; ++px) {
        const float* s = src.data() + px * c;
        float* d = dst.data() + px * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
            d[ch] = s[ch] * scale[ch] + shift[ch];
        }
    }
    return out;
}

void relu_inplace(std::span<float> values) {
    for (float& v : values) {
        v = v < 0.0f ? 0.0f : v;  // NaN passes through
    }
}

Tensor4 relu(Tensor4 input) {
    relu_inplace(input.data());
    return input;
}

template <typename T>
BasicMatrix<T> relu(BasicMatrix<T> input) {
    for (T& v : input.data()) {
        v = v < T{0} ? T{0} : v;
    }
    return input;
}

Tensor4 maxpool2d(const Tensor4& input, std::size_t kh, std::size_t kw, std::size_t sh, std::size_t sw,
                  const Padding& padding) {
    const WindowGeometry g = window_geometry(input.h(), input.w(), kh, kw, sh, sw, padding);
    Tensor4 out({input.n(), g.out_h, g.out_w, input.c()});
    const auto in_h = static_cast<std::ptrdiff_t>(input.h());
    const auto in_w = static_cast<std::ptrdiff_t>(input.w());
    const std::size_t c = input.c();
    for (std::size_t i = 0; i < input.n(); ++i) {
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                float* d = out.pixel(i, oy, ox);
                std::fill_n(d, c, -std::numeric_limits<float>::infinity());
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const std::ptrdiff_t y =
                        static_cast<std::ptrdiff_t>(oy * sh + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
                    if (y < 0 || y >= in_h) {
                        continue;
                    }
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const std::ptrdiff_t x =
                            static_cast<std::ptrdiff_t>(ox * sw + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
                        if (x < 0 || x >= in_w) {
                            continue;
                        }
                        const float* s = input.pixel(i, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            d[ch] = std::max(d[ch], s[ch]);
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor4 zero_pad2d(const Tensor4& input, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right) {
    Tensor4 out({input.n(), input.h() + top + bottom, input.w() + left + right, input.c()});
    const std::size_t row = input.w() * input.c();
    for (std::size_t i = 0; i < input.n(); ++i) {
        for (std::size_t y = 0; y < input.h(); ++y) {
            std::copy_n(input.pixel(i, y, 0), row, out.pixel(i, y + top, left));
        }
    }
    return out;
}

Tensor4 add(const Tensor4& a, const Tensor4& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
    }
    Tensor4 out(a.shape());
    auto x = a.data();
    auto y = b.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = x[i] + y[i];
    }
    return out;
}

Matrix global_avg_pool(const Tensor4& input) {
    const std::size_t area = input.h() * input.w();
    if (area == 0) {
        throw ShapeError("global_avg_pool needs a non-empty spatial extent");
    }
    const std::size_t c = input.c();
    Matrix out(input.n(), c);
    std::vector<double> acc(c);
    for (std::size_t i = 0; i < input.n(); ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const float* base = input.pixel(i, 0, 0);
        for (std::size_t px = 0; px < area; ++px) {
            const float* s = base + px * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
                acc[ch] += s[ch];
            }
        }
        for (std::size_t ch = 0; ch < c; ++ch) {
            out(i, ch) = static_cast<float>(acc[ch] / static_cast<double>(area));
        }
    }
    return out;
}

template <typename T>
BasicMatrix<T> dense_forward(const BasicMatrix<T>& input, const BasicMatrix<T>& weights, std::span<const T> bias) {
    if (input.cols() != weights.rows()) {
        throw ShapeError("dense: input width " + std::to_string(input.cols()) + " != weight rows " +
                         std::to_string(weights.rows()));
    }
    if (bias.size() != weights.cols()) {
        throw ShapeError("dense: bias length " + std::to_string(bias.size()) + " != weight cols " +
                         std::to_string(weights.cols()));
    }
    const std::size_t n = input.rows();
    const std::size_t in = input.cols();
    const std::size_t o = weights.cols();
    BasicMatrix<T> out(n, o);
    for (std::size_t r = 0; r < n; ++r) {
        T* __restrict dst = out.row(r).data();
        std::copy(bias.begin(), bias.end(), dst);
        for (std::size_t p = 0; p < in; ++p) {
            const T a = input(r, p);
            const T* __restrict w = weights.row(p).data();
            for (std::size_t j = 0; j < o; ++j) {
                dst[j] += a * w[j];
            }
        }
    }
    return out;
}

template <typename T>
DenseGrads<T> dense_backward(const BasicMatrix<T>& input, const BasicMatrix<T>& weights,
                             const BasicMatrix<T>& upstream) {
    if (input.cols() != weights.rows() || upstream.cols() != weights.cols() || upstream.rows() != input.rows()) {
        throw ShapeError("dense_backward: input " + dims(input.rows(), input.cols()) + ", weights " +
                         dims(weights.rows(), weights.cols()) + ", upstream " +
                         dims(upstream.rows(), upstream.cols()) + " are inconsistent");
    }
    const std::size_t n = input.rows();
    const std::size_t in = input.cols();
    const std::size_t o = weights.cols();
    DenseGrads<T> g{BasicMatrix<T>(in, o), std::vector<T>(o, T{0}), BasicMatrix<T>(n, in)};
    for (std::size_t r = 0; r < n; ++r) {
        const T* __restrict up = upstream.row(r).data();
        for (std::size_t j = 0; j < o; ++j) {
            g.bias[j] += up[j];
        }
        for (std::size_t p = 0; p < in; ++p) {
            const T a = input(r, p);
            T* __restrict gw = g.weights.row(p).data();
            for (std::size_t j = 0; j < o; ++j) {
                gw[j] += a * up[j];
            }
            const T* __restrict w = weights.row(p).data();
            T acc{0};
            for (std::size_t j = 0; j < o; ++j) {
                acc += up[j] * w[j];
            }
            g.input(r, p) = acc;
        }
    }
    return g;
}

template <typename T>
BasicMatrix<T> softmax(const BasicMatrix<T>& logits) {
    if (logits.cols() == 0) {
        throw ShapeError("softmax needs at least one column");
    }
    BasicMatrix<T> out(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto src = logits.row(r);
        auto dst = out.row(r);
        const T peak = *std::max_element(src.begin(), src.end());
        T sum{0};
        for (std::size_t j = 0; j < src.size(); ++j) {
            dst[j] = std::exp(src[j] - peak);
            sum += dst[j];
        }
        for (T& v : dst) {
            v /= sum;
        }
    }
    return out;
}

template <typename T>
CrossEntropyResult<T> cross_entropy(const BasicMatrix<T>& probs, std::span<const int> labels) {
    if (labels.size() != probs.rows()) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(probs.rows()) + " rows");
    }
    const std::size_t n = probs.rows();
    const std::size_t k = probs.cols();
    CrossEntropyResult<T> result{T{0}, BasicMatrix<T>(n, k)};
    if (n == 0) {
        return result;
    }
    double total = 0.0;
    const T inv_n = T{1} / static_cast<T>(n);
    for (std::size_t r = 0; r < n; ++r) {
        const int label = labels[r];
        if (label < 0 || static_cast<std::size_t>(label) >= k) {
            throw InputError("label " + std::to_string(label) + " at row " + std::to_string(r) +
                             " outside [0, " + std::to_string(k) + ")");
        }
        const double p = std::max(static_cast<double>(probs(r, static_cast<std::size_t>(label))), kProbabilityFloor);
        total -= std::log(p);
        for (std::size_t j = 0; j < k; ++j) {
            const T onehot = j == static_cast<std::size_t>(label) ? T{1} : T{0};
            result.grad_logits(r, j) = (probs(r, j) - onehot) * inv_n;
        }
    }
    result.loss = static_cast<T>(total / static_cast<double>(n));
    return result;
}

template BasicMatrix<float> relu(BasicMatrix<float>);
template BasicMatrix<double> relu(BasicMatrix<double>);
template BasicMatrix<float> dense_forward(const BasicMatrix<float>&, const BasicMatrix<float>&, std::span<const float>);
template BasicMatrix<double> dense_forward(const BasicMatrix<double>&, const BasicMatrix<double>&,
                                           std::span<const double>);
template DenseGrads<float> dense_backward(const BasicMatrix<float>&, const BasicMatrix<float>&,
                                          const BasicMatrix<float>&);
template DenseGrads<double> dense_backward(const BasicMatrix<double>&, const BasicMatrix<double>&,
                                           const BasicMatrix<double>&);
template BasicMatrix<float> softmax(const BasicMatrix<float>&);
template BasicMatrix<double> softmax(const BasicMatrix<double>&);
template CrossEntropyResult<float> cross_entropy(const BasicMatrix<float>&, std::span<const int>);
template CrossEntropyResult<double> cross_entropy(const BasicMatrix<double>&, std::span<const int>);

}  // namespace lungnet
