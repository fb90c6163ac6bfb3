#include "lungnet/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "lungnet/errors.hpp"

namespace lungnet {

std::string to_string(const Shape4& shape) {
    return "(" + std::to_string(shape.n) + ", " + std::to_string(shape.h) + ", " + std::to_string(shape.w) + ", " +
           std::to_string(shape.c) + ")";
}

Tensor4::Tensor4(Shape4 shape, float fill) : shape_(shape), data_(shape.elements(), fill) {}

Tensor4::Tensor4(Shape4 shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.elements()) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         to_string(shape_));
    }
}

Tensor4 Tensor4::image(std::size_t i) const {
    if (i >= shape_.n) {
        throw ShapeError("image index " + std::to_string(i) + " out of range for batch of " + std::to_string(shape_.n));
    }
    const std::size_t stride = shape_.h * shape_.w * shape_.c;
    std::vector<float> out(data_.begin() + static_cast<std::ptrdiff_t>(i * stride),
                           data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
    return Tensor4({1, shape_.h, shape_.w, shape_.c}, std::move(out));
}

bool Tensor4::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

template <typename T>
BasicMatrix<T>::BasicMatrix(std::size_t rows, std::size_t cols, T fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

template <typename T>
BasicMatrix<T>::BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                         std::to_string(rows_) + "x" + std::to_string(cols_));
    }
}

template <typename T>
BasicMatrix<T> BasicMatrix<T>::slice_rows(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows_) {
        throw ShapeError("row slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range");
    }
    std::vector<T> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                       data_.begin() + static_cast<std::ptrdiff_t>(end * cols_));
    return BasicMatrix(end - begin, cols_, std::move(out));
}

template <typename T>
BasicMatrix<T> BasicMatrix<T>::gather_rows(std::span<const std::size_t> indices) const {
    BasicMatrix out(indices.size(), cols_);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= rows_) {
            throw ShapeError("row index " + std::to_string(indices[r]) + " out of range");
        }
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[r] * cols_), cols_,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(r * cols_));
    }
    return out;
}

template class BasicMatrix<float>;
template class BasicMatrix<double>;

}  // namespace lungnet
