// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#include "scpainter/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace scpainter {

std::string Shape4::str() const {
    std::ostringstream out;
    out << frames << "x" << channels << "x" << height << "x" << width;
    return out.str();
}

Tensor4::Tensor4(Shape4 shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

std::span<double> Tensor4::plane(std::size_t t, std::size_t c) {
    return std::span<double>(data_).subspan(offset(t, c, 0, 0), shape_.height * shape_.width);
}

std::span<const double> Tensor4::plane(std::size_t t, std::size_t c) const {
    return std::span<const double>(data_).subspan(offset(t, c, 0, 0), shape_.height * shape_.width);
}

void require_same_shape(const Tensor4& a, const Tensor4& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionMismatch(std::string(what) + ": shape " + a.shape().str() + " vs " + b.shape().str());
    }
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
    if (a.frames() != b.frames() || a.height() != b.height() || a.width() != b.width()) {
        throw DimensionMismatch("concat_channels: " + a.shape().str() + " vs " + b.shape().str());
    }
    Tensor4 out({a.frames(), a.channels() + b.channels(), a.height(), a.width()});
    for (std::size_t t = 0; t < a.frames(); ++t) {
        for (std::size_t c = 0; c < a.channels(); ++c) {
            std::ranges::copy(a.plane(t, c), out.plane(t, c).begin());
        }
        for (std::size_t c = 0; c < b.channels(); ++c) {
            std::ranges::copy(b.plane(t, c), out.plane(t, a.channels() + c).begin());
        }
    }
    return out;
}

Tensor4 slice_channels(const Tensor4& x, std::size_t first, std::size_t count) {
    if (first + count > x.channels()) {
        throw DimensionMismatch("slice_channels: range exceeds " + x.shape().str());
    }
    Tensor4 out({x.frames(), count, x.height(), x.width()});
    for (std::size_t t = 0; t < x.frames(); ++t) {
        for (std::size_t c = 0; c < count; ++c) {
            std::ranges::copy(x.plane(t, first + c), out.plane(t, c).begin());
        }
    }
    return out;
}

void set_rgb_frame(Tensor4& video, std::size_t t, const RgbImage& image) {
    if (video.channels() < 3 || video.height() != static_cast<std::size_t>(image.height()) ||
        video.width() != static_cast<std::size_t>(image.width())) {
        throw DimensionMismatch("set_rgb_frame: image does not fit " + video.shape().str());
    }
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                video(t, c, y, x) = image(x, y)[static_cast<Eigen::Index>(c)];
            }
        }
    }
}

RgbImage rgb_frame(const Tensor4& video, std::size_t t) {
    if (video.channels() < 3) {
        throw DimensionMismatch("rgb_frame: need 3 channels, got " + video.shape().str());
    }
    RgbImage image(static_cast<int>(video.width()), static_cast<int>(video.height()));
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            image(x, y) = Rgb(video(t, 0, y, x), video(t, 1, y, x), video(t, 2, y, x));
        }
    }
    return image;
}

void set_scalar_frame(Tensor4& tensor, std::size_t t, std::size_t c, const ScalarMap& map) {
    if (tensor.height() != static_cast<std::size_t>(map.height()) ||
        tensor.width() != static_cast<std::size_t>(map.width())) {
        throw DimensionMismatch("set_scalar_frame: map does not fit " + tensor.shape().str());
    }
    std::ranges::copy(map.values(), tensor.plane(t, c).begin());
}

ScalarMap scalar_frame(const Tensor4& tensor, std::size_t t, std::size_t c) {
    ScalarMap map(static_cast<int>(tensor.width()), static_cast<int>(tensor.height()));
    std::ranges::copy(tensor.plane(t, c), map.values().begin());
    return map;
}

} // namespace scpainter
