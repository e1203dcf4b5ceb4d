#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moelab/error.hpp"

namespace moelab {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixT<double>;
using Vector = VectorT<double>;
using Shape = std::vector<Index>;

std::string shape_string(const Shape& shape);
Index shape_size(const Shape& shape);

/// Dense row-major tensor of 64-bit values.
///
/// Storage is a 2-D Eigen matrix whose column count is the last dimension and
/// whose row count is the product of all leading dimensions. A rank-0 tensor
/// (empty shape) is a 1x1 scalar.
class Tensor {
public:
    Tensor() : Tensor(Shape{}) {}
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::span<const double> values);

    static Tensor scalar(double v) { return Tensor(Shape{}, v); }
    static Tensor from_matrix(Matrix m);
    static Tensor vector(std::span<const double> values);
    static Tensor vector(std::initializer_list<double> values) {
        return vector(std::span<const double>(values.begin(), values.size()));
    }
    static Tensor matrix(Index rows, Index cols, std::initializer_list<double> values);

    const Shape& shape() const noexcept { return shape_; }
    Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
    Index size() const noexcept { return data_.size(); }
    Index dim(Index axis) const;

    std::span<const double> data() const noexcept { return {data_.data(), static_cast<size_t>(data_.size())}; }
    std::span<double> data() noexcept { return {data_.data(), static_cast<size_t>(data_.size())}; }

    /// 2-D view: rows = product of leading dims, cols = last dim.
    const Matrix& mat() const noexcept { return data_; }
    Matrix& mat() noexcept { return data_; }

    double item() const;
    double operator[](Index i) const { return data_.data()[i]; }
    double& operator[](Index i) { return data_.data()[i]; }

    Tensor reshaped(Shape shape) const;

    bool requires_grad = false;
    std::optional<Matrix> grad;

private:
    Shape shape_;
    Matrix data_;
};

}  // namespace moelab
