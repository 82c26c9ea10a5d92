/// @file video.hpp
/// @brief Grayscale video container shared by the reward, judge and toy modules.

#pragma once

#include <cstddef>
#include <span>

#include "flowrl/array.hpp"

namespace flowrl {

/// Grayscale frames in [0,1], shape [T, H, W].
struct VideoTensor {
    NumericArray frames;
    double fps = 24.0;

    std::size_t num_frames() const { return frames.dim(0); }
    std::size_t height() const { return frames.dim(1); }
    std::size_t width() const { return frames.dim(2); }
    std::span<const double> frame(std::size_t t) const;
    /// Throws unless rank 3, T >= 1, fps > 0 and every value in [0,1].
    void validate() const;
};

/// A single grayscale image.
struct FrameView {
    std::span<const double> pixels;
    std::size_t height = 0;
    std::size_t width = 0;
};

FrameView frame_view(const VideoTensor& video, std::size_t t);

}  // namespace flowrl
