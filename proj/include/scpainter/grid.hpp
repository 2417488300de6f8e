// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "scpainter/errors.hpp"

namespace scpainter {

using Rgb = Eigen::Vector3d;

/// Row-major W x H raster of values. Pixel (x, y) covers [x, x+1) x [y, y+1)
/// in continuous image coordinates, so its center sits at (x + 0.5, y + 0.5).
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int width, int height, const T& fill = T{})
        : width_(width), height_(height) {
        if (width < 0 || height < 0) {
            throw DimensionMismatch("grid dimensions must be non-negative");
        }
        data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
    }

    [[nodiscard]] int width() const { return width_; }
    [[nodiscard]] int height() const { return height_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool same_shape(const auto& other) const {
        return width_ == other.width() && height_ == other.height();
    }

    [[nodiscard]] T& operator()(int x, int y) { return data_[index(x, y)]; }
    [[nodiscard]] const T& operator()(int x, int y) const { return data_[index(x, y)]; }

    [[nodiscard]] std::span<T> values() { return data_; }
    [[nodiscard]] std::span<const T> values() const { return data_; }

    bool operator==(const Grid&) const = default;

private:
    [[nodiscard]] std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

using RgbImage = Grid<Rgb>;
using ScalarMap = Grid<double>;
using BinaryMap = Grid<std::uint8_t>;

} // namespace scpainter
