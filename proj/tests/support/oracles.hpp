#pragma once

// Independent reference implementations for tests. Everything here is written
// as plain scalar loops in double precision and shares no code with the
// library beyond its data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "lungnet/kernels.hpp"
#include "lungnet/rng.hpp"
#include "lungnet/tensor.hpp"

namespace oracle {

using lungnet::Tensor4;

inline Tensor4 random_tensor(lungnet::Rng& rng, lungnet::Shape4 shape, double lo = -1.0, double hi = 1.0) {
    Tensor4 t(shape);
    for (float& v : t.data()) {
        v = static_cast<float>(rng.uniform(lo, hi));
    }
    return t;
}

inline std::vector<float> random_vector(lungnet::Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<float> v(n);
    for (float& x : v) {
        x = static_cast<float>(rng.uniform(lo, hi));
    }
    return v;
}

struct Pads {
    long top, bottom, left, right;
    long out_h, out_w;
};

// TF-style "same": out = ceil(in/s); total = max((out-1)*s + k - in, 0);
// the larger half goes bottom/right.
inline Pads pads_for(long in_h, long in_w, long kh, long kw, long sh, long sw, const lungnet::Padding& p) {
    using K = lungnet::Padding::Kind;
    if (p.kind == K::same) {
        const long oh = (in_h + sh - 1) / sh;
        const long ow = (in_w + sw - 1) / sw;
        const long th = std::max((oh - 1) * sh + kh - in_h, 0L);
        const long tw = std::max((ow - 1) * sw + kw - in_w, 0L);
        return {th / 2, th - th / 2, tw / 2, tw - tw / 2, oh, ow};
    }
    const long t = static_cast<long>(p.top), b = static_cast<long>(p.bottom);
    const long l = static_cast<long>(p.left), r = static_cast<long>(p.right);
    return {t, b, l, r, (in_h + t + b - kh) / sh + 1, (in_w + l + r - kw) / sw + 1};
}

inline std::vector<double> conv2d(const Tensor4& x, const lungnet::ConvParams& p) {
    const Pads g = pads_for(static_cast<long>(x.h()), static_cast<long>(x.w()), static_cast<long>(p.kh),
                            static_cast<long>(p.kw), static_cast<long>(p.stride_h), static_cast<long>(p.stride_w),
                            p.padding);
    std::vector<double> out;
    for (long n = 0; n < static_cast<long>(x.n()); ++n)
        for (long oy = 0; oy < g.out_h; ++oy)
            for (long ox = 0; ox < g.out_w; ++ox)
                for (long oc = 0; oc < static_cast<long>(p.c_out); ++oc) {
                    double acc = p.bias.empty() ? 0.0 : p.bias[static_cast<std::size_t>(oc)];
                    for (long ky = 0; ky < static_cast<long>(p.kh); ++ky)
                        for (long kx = 0; kx < static_cast<long>(p.kw); ++kx) {
                            const long iy = oy * static_cast<long>(p.stride_h) + ky - g.top;
                            const long ix = ox * static_cast<long>(p.stride_w) + kx - g.left;
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(x.h()) || ix >= static_cast<long>(x.w()))
                                continue;
                            for (long ic = 0; ic < static_cast<long>(p.c_in); ++ic) {
                                const std::size_t widx = static_cast<std::size_t>(
                                    ((ky * static_cast<long>(p.kw) + kx) * static_cast<long>(p.c_in) + ic) *
                                        static_cast<long>(p.c_out) +
                                    oc);
                                acc += static_cast<double>(x.at(static_cast<std::size_t>(n), static_cast<std::size_t>(iy),
                                                                static_cast<std::size_t>(ix),
                                                                static_cast<std::size_t>(ic))) *
                                       p.kernel[widx];
                            }
                        }
                    out.push_back(acc);
                }
    return out;
}

inline std::vector<float> maxpool(const Tensor4& x, long kh, long kw, long sh, long sw, const lungnet::Padding& p) {
    const Pads g = pads_for(static_cast<long>(x.h()), static_cast<long>(x.w()), kh, kw, sh, sw, p);
    std::vector<float> out;
    for (long n = 0; n < static_cast<long>(x.n()); ++n)
        for (long oy = 0; oy < g.out_h; ++oy)
            for (long ox = 0; ox < g.out_w; ++ox)
                for (long c = 0; c < static_cast<long>(x.c()); ++c) {
                    float best = -std::numeric_limits<float>::infinity();
                    for (long ky = 0; ky < kh; ++ky)
                        for (long kx = 0; kx < kw; ++kx) {
                            const long iy = oy * sh + ky - g.top;
                            const long ix = ox * sw + kx - g.left;
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(x.h()) || ix >= static_cast<long>(x.w()))
                                continue;
                            best = std::max(best, x.at(static_cast<std::size_t>(n), static_cast<std::size_t>(iy),
                                                       static_cast<std::size_t>(ix), static_cast<std::size_t>(c)));
                        }
                    out.push_back(best);
                }
    return out;
}

inline std::vector<double> batchnorm(const Tensor4& x, const lungnet::BatchNormParams& p) {
    std::vector<double> out(x.size());
    const std::size_t c = x.c();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t ch = i % c;
        out[i] = static_cast<double>(p.gamma[ch]) * (static_cast<double>(x.data()[i]) - p.moving_mean[ch]) /
                     std::sqrt(static_cast<double>(p.moving_var[ch]) + static_cast<double>(p.eps)) +
                 p.beta[ch];
    }
    return out;
}

inline std::vector<double> global_avg_pool(const Tensor4& x) {
    std::vector<double> out;
    for (std::size_t n = 0; n < x.n(); ++n)
        for (std::size_t c = 0; c < x.c(); ++c) {
            double s = 0.0;
            for (std::size_t y = 0; y < x.h(); ++y)
                for (std::size_t xx = 0; xx < x.w(); ++xx) s += x.at(n, y, xx, c);
            out.push_back(s / static_cast<double>(x.h() * x.w()));
        }
    return out;
}

template <typename T>
std::vector<double> matmul_bias(const lungnet::BasicMatrix<T>& a, const lungnet::BasicMatrix<T>& b,
                                const std::vector<T>& bias) {
    std::vector<double> out;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = bias.empty() ? 0.0 : static_cast<double>(bias[j]);
            for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<double>(a(i, k)) * b(k, j);
            out.push_back(s);
        }
    return out;
}

// Bilinear resample, half-pixel centers, edge clamp, computed per output
// element straight from the definition.
inline std::vector<double> bilinear(const std::vector<double>& src, long in_h, long in_w, long c, long out_h,
                                    long out_w) {
    std::vector<double> out;
    auto px = [&](long y, long x, long ch) { return src[static_cast<std::size_t>((y * in_w + x) * c + ch)]; };
    for (long y = 0; y < out_h; ++y)
        for (long x = 0; x < out_w; ++x)
            for (long ch = 0; ch < c; ++ch) {
                const double sy = std::clamp((y + 0.5) * in_h / out_h - 0.5, 0.0, static_cast<double>(in_h - 1));
                const double sx = std::clamp((x + 0.5) * in_w / out_w - 0.5, 0.0, static_cast<double>(in_w - 1));
                const long y0 = static_cast<long>(std::floor(sy));
                const long x0 = static_cast<long>(std::floor(sx));
                const long y1 = std::min(y0 + 1, in_h - 1);
                const long x1 = std::min(x0 + 1, in_w - 1);
                const double fy = sy - y0, fx = sx - x0;
                out.push_back((1 - fy) * ((1 - fx) * px(y0, x0, ch) + fx * px(y0, x1, ch)) +
                              fy * ((1 - fx) * px(y1, x0, ch) + fx * px(y1, x1, ch)));
            }
    return out;
}

// Mean cross-entropy of the two-layer head, written as scalar loops.
// w1 is in×hidden and w2 hidden×classes, both row-major.
struct HeadWeights {
    std::size_t in, hidden, classes;
    std::vector<double> w1, b1, w2, b2;
};

inline double head_loss(const HeadWeights& p, const std::vector<double>& x, const std::vector<int>& labels,
                        bool relu) {
    const std::size_t n = labels.size();
    double total = 0.0;
    std::vector<double> h(p.hidden), z(p.classes);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < p.hidden; ++j) {
            double acc = p.b1[j];
            for (std::size_t i = 0; i < p.in; ++i) acc += x[r * p.in + i] * p.w1[i * p.hidden + j];
            h[j] = relu ? std::max(acc, 0.0) : acc;
        }
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < p.classes; ++k) {
            double acc = p.b2[k];
            for (std::size_t j = 0; j < p.hidden; ++j) acc += h[j] * p.w2[j * p.classes + k];
            z[k] = acc;
            top = std::max(top, acc);
        }
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - top);
        total += -(z[static_cast<std::size_t>(labels[r])] - top - std::log(sum));
    }
    return total / static_cast<double>(n);
}

// Central difference of f at x[i] with step h; x is restored afterwards.
template <typename F>
double central_difference(std::vector<double>& x, std::size_t i, double h, F&& f) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    return (up - down) / (2.0 * h);
}

inline double relative_error(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / scale;
}

// ||a - b|| / max(||a||, ||b||), the gradient-check metric.
inline double vector_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
    return std::sqrt(diff) / scale;
}

// Largest |a-b| / max(|b|, floor) over elements. The unit floor keeps
// near-zero outputs from dominating; kernel outputs here are O(1).
template <typename A, typename B>
double max_relative_error(const A& a, const B& b, double floor = 1.0) {
    double worst = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
        worst = std::max(worst, d / std::max(std::abs(static_cast<double>(b[i])), floor));
    }
    return worst;
}

}  // namespace oracle
