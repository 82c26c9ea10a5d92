/// @file training.hpp
/// @brief Training loops on the toy domain: supervised flow matching and
/// GRPO post-training with CPS rollouts, plus the seeded policy evaluation
/// used to compare checkpoints.

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "flowrl/cps_sampler.hpp"
#include "flowrl/grpo.hpp"
#include "flowrl/rewards.hpp"
#include "flowrl/toyworld.hpp"
#include "flowrl/velocity_net.hpp"

namespace flowrl {

NetConfig toy_net_config(const ToyConfig& toy);

// --- supervised flow matching ----------------------------------------------------

struct SftConfig {
    int updates = 500;
    int batch_size = 16;
    AdamConfig adam{};
    std::uint64_t seed = 0;

    void validate() const;
};

struct SftStep {
    std::int64_t update = 0;  ///< optimizer step count after this update
    double loss = 0.0;
    double wall_ms = 0.0;
};

/// Runs cfg.updates flow-matching steps starting at optimizer.step. Batches
/// are drawn from a stream keyed by (seed, step), so a resumed run repeats
/// exactly what an uninterrupted one would have done. Throws DivergenceError
/// on a non-finite loss.
void train_flow_matching(ModelParams& params, OptimizerState& optimizer, std::span<const ToySample> data,
                         const SftConfig& cfg, const std::function<void(const SftStep&)>& on_step = {});

// --- GRPO post-training ------------------------------------------------------------

struct RlConfig {
    GrpoConfig grpo{};
    SamplerConfig sampler{};
    AdamConfig adam{};
    std::uint64_t seed = 0;

    void validate() const;
};

struct RlStep {
    int update = 0;
    double mean_reward = 0.0;  ///< selected reward kind (batch-normalized)
    double mean_r_mllm = 0.0;
    double mean_r_perceptual = 0.0;
    double mean_r_consistency = 0.0;
    double mean_judge_lipsync = 0.0;
    double mean_judge_expressive = 0.0;
    double mean_judge_motion = 0.0;
    SurrogateStats stats;
    double wall_ms = 0.0;
};

/// One GRPO update: M = batch_rollouts / G prompts drawn from @p prompts,
/// G rollouts each sharing a stochastic window, rewards from @p rewards with
/// group_size G, then grpo_update against a frozen copy of the parameters.
RlStep rl_update(ModelParams& params, OptimizerState& optimizer, std::span<const ToySample> prompts,
                 const ToyConfig& toy, const RewardSystem& rewards, const RlConfig& cfg, int update);

/// Runs updates first_update .. cfg.grpo.updates - 1 (a resumed run passes
/// the number of updates already done).
void train_rl(ModelParams& params, OptimizerState& optimizer, std::span<const ToySample> prompts,
              const ToyConfig& toy, const RewardSystem& rewards, const RlConfig& cfg, int first_update,
              const std::function<void(const RlStep&)>& on_step = {});

// --- evaluation ----------------------------------------------------------------

struct EvalConfig {
    int num_steps = 15;
    std::uint64_t seed = 12345;  ///< initial-noise seeds are derived from (seed, prompt index)
};

/// Deterministic (eta = 0) generations for each prompt, decoded to video.
std::vector<VideoTensor> generate_videos(const ModelParams& params, std::span<const ToySample> prompts,
                                         const ToyConfig& toy, const EvalConfig& cfg);

/// Unnormalized reward components of deterministic generations.
std::vector<RewardBreakdown> evaluate_policy(const ModelParams& params, std::span<const ToySample> prompts,
                                             const ToyConfig& toy, const RewardSystem& rewards,
                                             const EvalConfig& cfg);

struct PooledComparison {
    double mean_a = 0.0;  ///< mean composite of policy A after pooled normalization
    double mean_b = 0.0;
    std::vector<RewardBreakdown> a;
    std::vector<RewardBreakdown> b;
};

/// Normalizes the raw breakdowns of two policies jointly (one batch), so
/// their composite rewards are in the same units, and returns both means.
PooledComparison pooled_comparison(std::span<const RewardBreakdown> raw_a, std::span<const RewardBreakdown> raw_b,
                                   const RewardSystem& rewards);

}  // namespace flowrl
