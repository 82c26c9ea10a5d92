/// @file grpo.hpp
/// @brief Group-relative policy optimization for the CPS sampler.
///
/// Each stochastic CPS transition is a Gaussian policy step whose mean depends
/// on the velocity network. Trajectories sharing a condition form a group;
/// rewards are standardized within the group to give advantages, and the
/// clipped importance-weighted objective (minus a closed-form KL penalty) is
/// maximized with one AdamW step per sampled batch.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flowrl/cps_sampler.hpp"
#include "flowrl/velocity_net.hpp"

namespace flowrl {

struct RolloutGroup {
    Condition condition;
    std::vector<Trajectory> trajectories;
    std::vector<double> rewards;
    std::vector<double> advantages;

    void validate() const;
};

struct GrpoConfig {
    int group_size = 4;
    double clip_epsilon = 0.001;
    double kl_beta = 0.01;
    int batch_rollouts = 128;
    int updates = 400;
    double advantage_std_floor = 1e-6;
    double ratio_log_clamp = 50.0;  ///< |log ratio| above this is clamped with a warning

    void validate() const;
};

struct SurrogateStats {
    double mean_ratio = 1.0;
    double clip_fraction = 0.0;
    double kl_value = 0.0;
    double loss = 0.0;
    double objective = 0.0;
    std::size_t transitions = 0;
    double update_norm = 0.0;
};

/// (R_i - mean) / max(population std, floor)
std::vector<double> group_advantages(std::span<const double> rewards, double std_floor);

/// exp(logp_new - logp_old); log differences beyond +-log_clamp are clamped.
double importance_ratio(double logp_new, double logp_old, double log_clamp = 50.0);

/// min(r A, clip(r, 1 - eps, 1 + eps) A)
double clipped_surrogate(double ratio, double advantage, double eps);

/// d/dr of clipped_surrogate (A where the unclipped branch is active, else 0).
double clipped_surrogate_slope(double ratio, double advantage, double eps);

/// KL between N(mu_new, std^2 I) and N(mu_old, std^2 I).
double gaussian_kl(std::span<const double> mu_new, std::span<const double> mu_old, double std);

/// The per-batch objective (1/M) sum_i (1/N_s) sum_t [clipped term - beta KL]
/// together with its gradient.
struct SurrogateEvaluation {
    double objective = 0.0;
    GradientBundle gradient;  ///< of the objective (ascent direction)
    SurrogateStats stats;
};

SurrogateEvaluation evaluate_surrogate(const ModelParams& params, const ModelParams& old_params,
                                       std::span<const RolloutGroup> groups, const GrpoConfig& cfg);

struct GrpoUpdateResult {
    ModelParams params;
    SurrogateStats stats;
};

/// One AdamW ascent step on the surrogate. Throws ConfigError when no
/// transition with positive noise exists and NumericError on a non-finite loss.
GrpoUpdateResult grpo_update(const ModelParams& params, const ModelParams& old_params,
                             std::span<const RolloutGroup> groups, const GrpoConfig& cfg,
                             OptimizerState& optimizer);

}  // namespace flowrl
