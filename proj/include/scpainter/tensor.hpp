// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "scpainter/grid.hpp"

namespace scpainter {

/// Frames x channels x height x width.
struct Shape4 {
    std::size_t frames = 0;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    [[nodiscard]] std::size_t numel() const { return frames * channels * height * width; }
    [[nodiscard]] std::string str() const;
    bool operator==(const Shape4&) const = default;
};

/// Dense T x C x H x W tensor of doubles, row-major with width fastest.
/// Used for videos, masks and latents alike.
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(Shape4 shape, double fill = 0.0);

    [[nodiscard]] const Shape4& shape() const { return shape_; }
    [[nodiscard]] std::size_t frames() const { return shape_.frames; }
    [[nodiscard]] std::size_t channels() const { return shape_.channels; }
    [[nodiscard]] std::size_t height() const { return shape_.height; }
    [[nodiscard]] std::size_t width() const { return shape_.width; }

    [[nodiscard]] double& operator()(std::size_t t, std::size_t c, std::size_t y, std::size_t x) {
        return data_[offset(t, c, y, x)];
    }
    [[nodiscard]] double operator()(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const {
        return data_[offset(t, c, y, x)];
    }

    [[nodiscard]] std::span<double> values() { return data_; }
    [[nodiscard]] std::span<const double> values() const { return data_; }

    /// Contiguous H x W plane of one frame/channel.
    [[nodiscard]] std::span<double> plane(std::size_t t, std::size_t c);
    [[nodiscard]] std::span<const double> plane(std::size_t t, std::size_t c) const;

    bool operator==(const Tensor4&) const = default;

private:
    [[nodiscard]] std::size_t offset(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const {
        return ((t * shape_.channels + c) * shape_.height + y) * shape_.width + x;
    }

    Shape4 shape_;
    std::vector<double> data_;
};

/// Concatenates along the channel axis; `a` channels come first.
[[nodiscard]] Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);

/// Copies channels [first, first + count).
[[nodiscard]] Tensor4 slice_channels(const Tensor4& x, std::size_t first, std::size_t count);

/// Writes an RGB image into frame `t`, channels 0..2.
void set_rgb_frame(Tensor4& video, std::size_t t, const RgbImage& image);
[[nodiscard]] RgbImage rgb_frame(const Tensor4& video, std::size_t t);

void set_scalar_frame(Tensor4& tensor, std::size_t t, std::size_t c, const ScalarMap& map);
[[nodiscard]] ScalarMap scalar_frame(const Tensor4& tensor, std::size_t t, std::size_t c);

void require_same_shape(const Tensor4& a, const Tensor4& b, const char* what);

} // namespace scpainter
