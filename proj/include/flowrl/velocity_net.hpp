/// @file velocity_net.hpp
/// @brief Conditional velocity model v(z_t, t, c): a small MLP with analytic
/// reverse-mode gradients, an AdamW optimizer, and a binary checkpoint format.
///
/// Input features are the concatenation [z_t, time features, signal,
/// reference]. Hidden layers use the configured activation; the output layer
/// is affine. With `skip_gate` enabled the output layer has one extra unit g
/// and the velocity is `head + g * z_t`; without it a width-limited MLP
/// cannot reproduce the per-coordinate noise component of the velocity.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "flowrl/array.hpp"
#include "flowrl/flow_core.hpp"

namespace flowrl {

enum class Activation { tanh, relu, identity };
enum class TimeEncoding { raw, sinusoidal };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view s);

struct NetConfig {
    std::size_t latent_dim = 0;
    std::size_t signal_len = 0;
    std::size_t reference_len = 0;
    std::vector<std::size_t> hidden{128, 128};
    Activation activation = Activation::tanh;
    bool skip_gate = true;
    TimeEncoding time_encoding = TimeEncoding::raw;
    std::size_t time_frequencies = 4;  ///< sinusoidal only

    std::size_t time_features() const;
    std::size_t input_dim() const;
    std::size_t output_dim() const;
    std::vector<std::size_t> layer_sizes() const;
};

struct DenseLayer {
    NumericArray weight;  ///< [out, in]
    NumericArray bias;    ///< [out]

    std::size_t out() const { return weight.dim(0); }
    std::size_t in() const { return weight.dim(1); }
    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct ModelParams {
    NetConfig config;
    std::vector<DenseLayer> layers;

    /// Checks that layer shapes compose and all entries are finite.
    void validate() const;
    std::size_t parameter_count() const;
};

/// Hidden layers uniform Kaiming-style, output layer zero.
ModelParams init_params(const NetConfig& config, std::uint64_t seed);

struct GradientBundle {
    std::vector<DenseLayer> grads;

    static GradientBundle zeros_like(const ModelParams& params);
    double squared_norm() const;
    bool all_finite() const;
    void add_scaled(const GradientBundle& other, double scale);
};

/// One velocity evaluation request; spans must outlive the call.
struct VelocityQuery {
    std::span<const double> z_t;
    double t = 0.0;
    const Condition* condition = nullptr;
};

/// Anything that can evaluate a batch of velocities; output is row-major [B, D].
class VelocityModel {
public:
    virtual ~VelocityModel() = default;
    virtual std::size_t latent_dim() const = 0;
    virtual void velocity(std::span<const VelocityQuery> queries, std::span<double> out) const = 0;
};

class MlpVelocity final : public VelocityModel {
public:
    explicit MlpVelocity(const ModelParams& params) : params_(&params) {}
    std::size_t latent_dim() const override { return params_->config.latent_dim; }
    void velocity(std::span<const VelocityQuery> queries, std::span<double> out) const override;

private:
    const ModelParams* params_;
};

/// Builds the network input row for one query.
void assemble_input(const NetConfig& config, const VelocityQuery& q, std::span<double> row);

NumericArray forward(const ModelParams& params, const LatentState& z_t, FlowTime t,
                     const Condition& c);

void forward_batch(const ModelParams& params, std::span<const VelocityQuery> queries,
                   std::span<double> out);

/// Activations retained for the backward pass.
struct ForwardTrace {
    std::size_t batch = 0;
    std::vector<std::vector<double>> inputs;  ///< input of each layer, [B, in_l]
    std::vector<std::vector<double>> raw;     ///< affine output of each layer, [B, out_l]
    std::vector<double> velocity;             ///< [B, D]
    std::vector<double> z_t;                  ///< [B, D], for the skip gate
};

ForwardTrace forward_trace(const ModelParams& params, std::span<const VelocityQuery> queries);

/// Gradient of sum_b <grad_v[b], v[b]> with respect to every parameter.
GradientBundle backward_from_output(const ModelParams& params, const ForwardTrace& trace,
                                    std::span<const double> grad_v);

enum class LossKind {
    flow_matching,    ///< mean over batch and dims of (v - target)^2
    output_gradient,  ///< sum_b <target[b], v[b]>; target carries dL/dv
};

LossKind parse_loss_kind(std::string_view s);

struct TrainingBatch {
    std::vector<VelocityQuery> queries;
    std::vector<double> targets;  ///< [B, D]
};

std::pair<double, GradientBundle> backward(const ModelParams& params, const TrainingBatch& batch,
                                           LossKind kind);

struct AdamConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.0;
    double eps = 1e-8;

    void validate() const;
};

struct OptimizerState {
    std::int64_t step = 0;
    GradientBundle first_moment;
    GradientBundle second_moment;
    AdamConfig hyper;
};

OptimizerState make_optimizer(const ModelParams& params, const AdamConfig& hyper);

/// Decoupled weight decay Adam with bias correction; increments state.step.
void adamw_step(ModelParams& params, const GradientBundle& grads, OptimizerState& state);

struct Checkpoint {
    ModelParams params;
    std::optional<OptimizerState> optimizer;
};

/// JSON header line, then raw little-endian float64 arrays in header order.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const OptimizerState* optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace flowrl
