/// @file flow_core.hpp
/// @brief Rectified-flow arithmetic: straight-line interpolation between data
/// (t = 0) and noise (t = 1), the constant velocity target, recovery of the
/// data/noise endpoints from an intermediate state, and the Euler step.
///
/// Everything here is pure and reentrant.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "flowrl/array.hpp"

namespace flowrl {

/// A continuous time in [0, 1]; 0 is data, 1 is noise.
class FlowTime {
public:
    explicit FlowTime(double t);
    double value() const noexcept { return t_; }
    operator double() const noexcept { return t_; }

private:
    double t_;
};

/// A finite latent vector.
class LatentState {
public:
    LatentState() = default;
    explicit LatentState(std::vector<double> values);
    explicit LatentState(NumericArray values);

    std::size_t dim() const noexcept { return data_.size(); }
    std::span<const double> values() const noexcept { return data_.values(); }
    const NumericArray& array() const noexcept { return data_; }

    friend bool operator==(const LatentState&, const LatentState&) = default;

private:
    NumericArray data_;
};

/// Conditioning: an audio-like scalar signal plus a flattened reference frame.
struct Condition {
    NumericArray signal;
    NumericArray reference;

    void validate() const;
    friend bool operator==(const Condition&, const Condition&) = default;
};

/// (1 - t) z0 + t z1
LatentState interpolate(const LatentState& z0, const LatentState& z1, FlowTime t);

/// z1 - z0
NumericArray flow_matching_target(const LatentState& z0, const LatentState& z1);

/// Mean over dimensions of ((z1 - z0) - predicted_v)^2.
double flow_matching_loss(std::span<const double> predicted_v, const LatentState& z0,
                          const LatentState& z1);

/// z_t - t v
LatentState predict_data(const LatentState& z_t, FlowTime t, std::span<const double> v);

/// z_t + (1 - t) v
LatentState predict_noise(const LatentState& z_t, FlowTime t, std::span<const double> v);

/// z_t - dt v, moving from t to t - dt. Requires 0 <= t - dt <= t.
LatentState euler_step(const LatentState& z_t, FlowTime t, double dt, std::span<const double> v);

}  // namespace flowrl
