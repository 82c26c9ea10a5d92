/// @file cps_sampler.hpp
/// @brief Reverse-process sampling from t = 1 (noise) to t = 0 (data) with
/// Coefficients-Preserving Sampling (CPS) steps.
///
/// A CPS step from t to t_to, given the model's data and noise estimates
/// zhat0 and zhat1, draws
///
///     z_next = (1 - t_to) zhat0 + t_to cos(eta pi/2) zhat1  +  t_to sin(eta pi/2) eps
///
/// with eps ~ N(0, I). eta = 0 recovers the deterministic Euler update. Only
/// `window_size` consecutive steps are stochastic; the rest run with eta = 0.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "flowrl/array.hpp"
#include "flowrl/flow_core.hpp"
#include "flowrl/rng.hpp"
#include "flowrl/velocity_net.hpp"

namespace flowrl {

enum class WindowPlacement { random, fixed };

struct SamplerConfig {
    int num_steps = 15;
    double eta = 0.5;
    int window_size = 1;
    WindowPlacement placement = WindowPlacement::random;
    int window_start = 0;  ///< used when placement == fixed
    std::uint64_t seed = 0;

    void validate() const;
};

struct TransitionRecord {
    double t_from = 1.0;
    double t_to = 0.0;
    NumericArray mean;
    double std = 0.0;
    NumericArray sample;
    bool stochastic = false;
    double eta = 0.0;  ///< noise level the step ran with (0 for deterministic steps)
};

struct Trajectory {
    Condition condition;
    std::vector<LatentState> states;             ///< N + 1 states, noise first
    std::vector<TransitionRecord> transitions;   ///< N records
    int window_start = 0;

    const LatentState& final_state() const { return states.back(); }
};

/// Time grid t_k = k / N visited from k = N down to 0.
std::vector<double> time_grid(int num_steps);

/// sin(eta pi / 2) and cos(eta pi / 2), with exact 0/1 at the endpoints.
std::pair<double, double> cps_sin_cos(double eta);

/// Coefficient of v in the CPS mean when zhat0/zhat1 come from one velocity
/// evaluation at time t: mean = a * z_t + b * v.
std::pair<double, double> cps_mean_coefficients(double t_from, double t_to, double eta);

std::pair<LatentState, TransitionRecord> cps_step(const LatentState& zhat0,
                                                  const LatentState& zhat1, FlowTime t_to,
                                                  double eta, std::span<const double> noise);

/// Isotropic Gaussian log density of z_next under the record's mean and std.
double transition_log_prob(std::span<const double> z_next, const TransitionRecord& record);

/// First stochastic step index for a trajectory (group) under @p cfg.
int choose_window_start(const SamplerConfig& cfg, Rng& rng);

/// Samples one trajectory. Initial noise and step noise are drawn from @p rng.
Trajectory sample_trajectory(const VelocityModel& model, const Condition& c,
                             const SamplerConfig& cfg, Rng& rng);

/// Samples many trajectories in lockstep so each model call is batched.
/// Trajectory i draws from its own stream derived from stream_seeds[i] and
/// uses window_starts[i].
std::vector<Trajectory> sample_batch(const VelocityModel& model,
                                     std::span<const Condition* const> conditions,
                                     const SamplerConfig& cfg,
                                     std::span<const std::uint64_t> stream_seeds,
                                     std::span<const int> window_starts);

/// One JSON object per transition: t_from, t_to, std, stochastic and, when
/// @p with_states is set, base64 little-endian float64 payloads of mean and sample.
void write_trajectory_jsonl(std::ostream& os, const Trajectory& traj, bool with_states);

}  // namespace flowrl
