#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lungnet {

struct Shape4 {
    std::size_t n = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t c = 0;

    std::size_t elements() const { return n * h * w * c; }
    bool operator==(const Shape4&) const = default;
};

std::string to_string(const Shape4& shape);

/// Dense 4-D array in NHWC order, 32-bit floats.
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(Shape4 shape, float fill = 0.0f);
    Tensor4(Shape4 shape, std::vector<float> data);

    const Shape4& shape() const { return shape_; }
    std::size_t n() const { return shape_.n; }
    std::size_t h() const { return shape_.h; }
    std::size_t w() const { return shape_.w; }
    std::size_t c() const { return shape_.c; }
    std::size_t size() const { return data_.size(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    std::vector<float> release() && { return std::move(data_); }

    std::size_t index(std::size_t i, std::size_t y, std::size_t x, std::size_t ch) const {
        return ((i * shape_.h + y) * shape_.w + x) * shape_.c + ch;
    }
    float& at(std::size_t i, std::size_t y, std::size_t x, std::size_t ch) { return data_[index(i, y, x, ch)]; }
    float at(std::size_t i, std::size_t y, std::size_t x, std::size_t ch) const { return data_[index(i, y, x, ch)]; }

    // Pointer to the first channel of pixel (i, y, x).
    float* pixel(std::size_t i, std::size_t y, std::size_t x) { return data_.data() + index(i, y, x, 0); }
    const float* pixel(std::size_t i, std::size_t y, std::size_t x) const { return data_.data() + index(i, y, x, 0); }

    // Copy of image i as a 1×h×w×c tensor.
    Tensor4 image(std::size_t i) const;

    bool all_finite() const;

private:
    Shape4 shape_;
    std::vector<float> data_;
};

/// Row-major 2-D matrix. The double instantiation backs the gradient-check
/// shadow mode; the production path is float.
template <typename T>
class BasicMatrix {
public:
    BasicMatrix() = default;
    BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0});
    BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols_, cols_); }
    std::span<const T> row(std::size_t r) const { return std::span<const T>(data_).subspan(r * cols_, cols_); }

    // Rows [begin, end) as a new matrix.
    BasicMatrix slice_rows(std::size_t begin, std::size_t end) const;
    // Rows picked by index, in the given order.
    BasicMatrix gather_rows(std::span<const std::size_t> indices) const;

    template <typename U>
    BasicMatrix<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicMatrix<U>(rows_, cols_, std::move(out));
    }

    bool operator==(const BasicMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using MatrixD = BasicMatrix<double>;

extern template class BasicMatrix<float>;
extern template class BasicMatrix<double>;

}  // namespace lungnet
