#include "flowrl/video.hpp"

#include <string>

#include "flowrl/errors.hpp"

namespace flowrl {

std::span<const double> VideoTensor::frame(std::size_t t) const {
    const std::size_t plane = height() * width();
    if (t >= num_frames()) throw ShapeError("frame index " + std::to_string(t) + " out of range");
    return frames.values().subspan(t * plane, plane);
}

void VideoTensor::validate() const {
    if (frames.rank() != 3) throw ShapeError("video must have shape [T,H,W], got " + frames.shape_string());
    if (num_frames() < 1 || height() < 1 || width() < 1) throw ShapeError("video has an empty dimension");
    if (!(fps > 0.0)) throw ConfigError("video fps must be positive");
    for (double v : frames.values()) {
        if (!(v >= 0.0 && v <= 1.0)) throw NumericError("video values must lie in [0,1]");
    }
}

FrameView frame_view(const VideoTensor& video, std::size_t t) {
    return {video.frame(t), video.height(), video.width()};
}

}  // namespace flowrl
