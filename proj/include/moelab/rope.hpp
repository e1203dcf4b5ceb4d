#pragma once

#include <cmath>
#include <span>

#include "moelab/tensor.hpp"

namespace moelab {

/// Rotation angle for coordinate pair `pair` of a head: position * base^(-2 pair / head_dim).
template <typename Scalar>
Scalar rope_angle(Index position, Index pair, Index head_dim, Scalar base) {
    using std::pow;
    return static_cast<Scalar>(position) *
           pow(base, -Scalar(2) * static_cast<Scalar>(pair) / static_cast<Scalar>(head_dim));
}

/// In-place rotary embedding over every head_dim block of each row.
/// `inverse` applies the transposed rotation (used by the backward pass).
template <typename Scalar>
void rope_rotate(MatrixT<Scalar>& x, std::span<const Index> positions, Index head_dim, Scalar base,
                 bool inverse = false) {
    using std::cos;
    using std::sin;
    if (head_dim <= 0 || head_dim % 2 != 0) throw ConfigError("rope head_dim must be positive and even");
    if (x.cols() % head_dim != 0) throw DimensionError("rope width is not a multiple of head_dim");
    if (static_cast<Index>(positions.size()) != x.rows()) throw DimensionError("rope needs one position per row");
    const Index half = head_dim / 2;
    const Index heads = x.cols() / head_dim;
    for (Index r = 0; r < x.rows(); ++r) {
        for (Index j = 0; j < half; ++j) {
            const Scalar angle = rope_angle<Scalar>(positions[static_cast<size_t>(r)], j, head_dim, base);
            const Scalar c = cos(angle);
            const Scalar s = inverse ? -sin(angle) : sin(angle);
            for (Index h = 0; h < heads; ++h) {
                Scalar& a = x(r, h * head_dim + 2 * j);
                Scalar& b = x(r, h * head_dim + 2 * j + 1);
                const Scalar a0 = a;
                const Scalar b0 = b;
                a = a0 * c - b0 * s;
                b = a0 * s + b0 * c;
            }
        }
    }
}

}  // namespace moelab
