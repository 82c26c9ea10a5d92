#include "flowrl/flow_core.hpp"

#include <cmath>
#include <string>

#include "flowrl/errors.hpp"

namespace flowrl {

FlowTime::FlowTime(double t) : t_(t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw ConfigError("flow time must lie in [0,1], got " + std::to_string(t));
    }
}

LatentState::LatentState(std::vector<double> values)
    : LatentState(NumericArray::from_vector(std::move(values))) {}

LatentState::LatentState(NumericArray values) : data_(std::move(values)) {
    if (data_.rank() != 1) throw ShapeError("latent state must be 1-D, got " + data_.shape_string());
    if (!data_.all_finite()) throw NumericError("latent state contains non-finite entries");
}

void Condition::validate() const {
    if (!signal.all_finite() || !reference.all_finite()) {
        throw NumericError("condition contains non-finite entries");
    }
}

LatentState interpolate(const LatentState& z0, const LatentState& z1, FlowTime t) {
    require_same_size(z0.dim(), z1.dim(), "interpolate");
    const double s = t.value();
    std::vector<double> out(z0.dim());
    const auto a = z0.values();
    const auto b = z1.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - s) * a[i] + s * b[i];
    return LatentState(std::move(out));
}

NumericArray flow_matching_target(const LatentState& z0, const LatentState& z1) {
    require_same_size(z0.dim(), z1.dim(), "flow_matching_target");
    std::vector<double> out(z0.dim());
    const auto a = z0.values();
    const auto b = z1.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = b[i] - a[i];
    return NumericArray::from_vector(std::move(out));
}

double flow_matching_loss(std::span<const double> predicted_v, const LatentState& z0,
                          const LatentState& z1) {
    require_same_size(z0.dim(), z1.dim(), "flow_matching_loss");
    require_same_size(predicted_v.size(), z0.dim(), "flow_matching_loss");
    if (!all_finite(predicted_v)) throw NumericError("flow_matching_loss: non-finite prediction");
    if (predicted_v.empty()) return 0.0;
    const auto a = z0.values();
    const auto b = z1.values();
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted_v.size(); ++i) {
        const double r = (b[i] - a[i]) - predicted_v[i];
        sum += r * r;
    }
    return sum / static_cast<double>(predicted_v.size());
}

LatentState predict_data(const LatentState& z_t, FlowTime t, std::span<const double> v) {
    require_same_size(z_t.dim(), v.size(), "predict_data");
    std::vector<double> out(z_t.dim());
    const auto z = z_t.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = z[i] - t.value() * v[i];
    return LatentState(std::move(out));
}

LatentState predict_noise(const LatentState& z_t, FlowTime t, std::span<const double> v) {
    require_same_size(z_t.dim(), v.size(), "predict_noise");
    std::vector<double> out(z_t.dim());
    const auto z = z_t.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = z[i] + (1.0 - t.value()) * v[i];
    return LatentState(std::move(out));
}

LatentState euler_step(const LatentState& z_t, FlowTime t, double dt, std::span<const double> v) {
    require_same_size(z_t.dim(), v.size(), "euler_step");
    if (!(dt >= 0.0 && t.value() - dt >= 0.0)) {
        throw ConfigError("euler_step: dt=" + std::to_string(dt) + " out of range at t=" +
                          std::to_string(t.value()));
    }
    std::vector<double> out(z_t.dim());
    const auto z = z_t.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = z[i] - dt * v[i];
    return LatentState(std::move(out));
}

}  // namespace flowrl
