#include "moelab/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace moelab {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Index shape_size(const Shape& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
}

namespace {

std::pair<Index, Index> storage_dims(const Shape& shape) {
    for (Index d : shape) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_string(shape));
    }
    if (shape.empty()) return {1, 1};
    Index cols = shape.back();
    return {shape_size(shape) / cols, cols};
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    auto [r, c] = storage_dims(shape_);
    data_ = Matrix::Constant(r, c, fill);
}

Tensor::Tensor(Shape shape, std::span<const double> values) : shape_(std::move(shape)) {
    auto [r, c] = storage_dims(shape_);
    if (static_cast<Index>(values.size()) != r * c) {
        throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                             shape_string(shape_));
    }
    data_.resize(r, c);
    std::copy(values.begin(), values.end(), data_.data());
}

Tensor Tensor::from_matrix(Matrix m) {
    Tensor t;
    t.shape_ = {m.rows(), m.cols()};
    storage_dims(t.shape_);
    t.data_ = std::move(m);
    return t;
}

Tensor Tensor::vector(std::span<const double> values) {
    return Tensor(Shape{static_cast<Index>(values.size())}, values);
}

Tensor Tensor::matrix(Index rows, Index cols, std::initializer_list<double> values) {
    return Tensor(Shape{rows, cols}, std::span<const double>(values.begin(), values.size()));
}

Index Tensor::dim(Index axis) const {
    Index r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw DimensionError("axis out of range for shape " + shape_string(shape_));
    return shape_[static_cast<size_t>(axis)];
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
    return data_(0, 0);
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
        throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data());
}

}  // namespace moelab
