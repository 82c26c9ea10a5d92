#include "flowrl/training.hpp"

#include <cmath>
#include <string>

#include "flowrl/errors.hpp"

namespace flowrl {

namespace {

double ms_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

NetConfig toy_net_config(const ToyConfig& toy) {
    toy.validate();
    NetConfig c;
    c.latent_dim = toy.latent_dim();
    c.signal_len = static_cast<std::size_t>(toy.num_frames);
    c.reference_len = toy.frame_pixels();
    return c;
}

// --- SFT -------------------------------------------------------------------------

void SftConfig::validate() const {
    if (updates < 0) throw ConfigError("flow updates must be >= 0");
    if (batch_size < 1) throw ConfigError("flow batch_size must be >= 1");
    adam.validate();
}

void train_flow_matching(ModelParams& params, OptimizerState& optimizer, std::span<const ToySample> data,
                         const SftConfig& cfg, const std::function<void(const SftStep&)>& on_step) {
    cfg.validate();
    if (data.empty()) throw ConfigError("flow-matching training needs a non-empty dataset");
    const std::size_t dim = params.config.latent_dim;
    for (const auto& s : data) require_same_size(s.latent.dim(), dim, "training sample latent");
    const auto b = static_cast<std::size_t>(cfg.batch_size);

    std::vector<std::vector<double>> z_t(b, std::vector<double>(dim));
    TrainingBatch batch;
    batch.queries.resize(b);
    batch.targets.resize(b * dim);
    std::vector<double> noise(dim);

    for (int u = 0; u < cfg.updates; ++u) {
        const auto start = std::chrono::steady_clock::now();
        const std::int64_t step = optimizer.step;
        Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(step)}));
        for (std::size_t i = 0; i < b; ++i) {
            const auto& s = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))];
            const double t = rng.uniform();
            rng.fill_normal(noise);
            const auto z0 = s.latent.values();
            for (std::size_t k = 0; k < dim; ++k) {
                z_t[i][k] = (1.0 - t) * z0[k] + t * noise[k];
                batch.targets[i * dim + k] = noise[k] - z0[k];
            }
            batch.queries[i] = {z_t[i], t, &s.condition};
        }
        auto [loss, grads] = backward(params, batch, LossKind::flow_matching);
        if (!std::isfinite(loss) || !grads.all_finite()) {
            throw DivergenceError("flow-matching loss diverged at step " + std::to_string(step),
                                  static_cast<int>(step));
        }
        adamw_step(params, grads, optimizer);
        if (on_step) on_step({optimizer.step, loss, ms_since(start)});
    }
}

// --- RL --------------------------------------------------------------------------

void RlConfig::validate() const {
    grpo.validate();
    sampler.validate();
    adam.validate();
    if (sampler.window_size == 0 || sampler.eta == 0.0) {
        throw ConfigError("RL needs stochastic transitions: eta > 0 and window >= 1");
    }
    if (sampler.window_size == sampler.num_steps && sampler.num_steps == 1) {
        throw ConfigError("RL window covers only the final step, whose noise scale is zero");
    }
}

RlStep rl_update(ModelParams& params, OptimizerState& optimizer, std::span<const ToySample> prompts,
                 const ToyConfig& toy, const RewardSystem& rewards, const RlConfig& cfg, int update) {
    const auto start = std::chrono::steady_clock::now();
    if (prompts.empty()) throw ConfigError("RL needs at least one prompt");
    const auto g = static_cast<std::size_t>(cfg.grpo.group_size);
    const auto m = static_cast<std::size_t>(cfg.grpo.batch_rollouts) / g;

    Rng rng(derive_seed(cfg.seed, {0x524cULL, static_cast<std::uint64_t>(update)}));
    std::vector<const ToySample*> chosen(m);
    std::vector<const Condition*> conds;
    std::vector<std::uint64_t> seeds;
    std::vector<int> windows;
    for (std::size_t i = 0; i < m; ++i) {
        chosen[i] = &prompts[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(prompts.size()) - 1))];
        const int w = choose_window_start(cfg.sampler, rng);
        for (std::size_t j = 0; j < g; ++j) {
            conds.push_back(&chosen[i]->condition);
            seeds.push_back(derive_seed(cfg.seed, {static_cast<std::uint64_t>(update), i * g + j}));
            windows.push_back(w);
        }
    }

    const ModelParams old_params = params;
    MlpVelocity model(old_params);
    auto trajectories = sample_batch(model, conds, cfg.sampler, seeds, windows);

    std::vector<VideoTensor> videos;
    videos.reserve(trajectories.size());
    for (const auto& tr : trajectories) videos.push_back(decode(tr.final_state().values(), toy));
    std::vector<ScoringItem> items(trajectories.size());
    for (std::size_t k = 0; k < items.size(); ++k) {
        items[k] = {&videos[k], &chosen[k / g]->video, &chosen[k / g]->condition};
    }
    const auto scored = rewards.score_batch(items, g);

    std::vector<RolloutGroup> groups(m);
    for (std::size_t i = 0; i < m; ++i) {
        auto& grp = groups[i];
        grp.condition = chosen[i]->condition;
        for (std::size_t j = 0; j < g; ++j) {
            grp.trajectories.push_back(std::move(trajectories[i * g + j]));
            grp.rewards.push_back(scored[i * g + j].reward);
        }
        grp.advantages = group_advantages(grp.rewards, cfg.grpo.advantage_std_floor);
    }

    auto result = grpo_update(params, old_params, groups, cfg.grpo, optimizer);
    params = std::move(result.params);

    RlStep step;
    step.update = update;
    step.stats = result.stats;
    const double n = static_cast<double>(scored.size());
    for (const auto& r : scored) {
        step.mean_reward += r.reward / n;
        step.mean_r_mllm += r.r_mllm / n;
        step.mean_r_perceptual += r.r_perceptual / n;
        step.mean_r_consistency += r.r_consistency / n;
        step.mean_judge_lipsync += r.judge_lipsync / n;
        step.mean_judge_expressive += r.judge_expressive / n;
        step.mean_judge_motion += r.judge_motion / n;
    }
    step.wall_ms = ms_since(start);
    return step;
}

void train_rl(ModelParams& params, OptimizerState& optimizer, std::span<const ToySample> prompts,
              const ToyConfig& toy, const RewardSystem& rewards, const RlConfig& cfg, int first_update,
              const std::function<void(const RlStep&)>& on_step) {
    cfg.validate();
    for (int u = first_update; u < cfg.grpo.updates; ++u) {
        const auto step = rl_update(params, optimizer, prompts, toy, rewards, cfg, u);
        if (on_step) on_step(step);
    }
}

// --- evaluation ----------------------------------------------------------------

std::vector<VideoTensor> generate_videos(const ModelParams& params, std::span<const ToySample> prompts,
                                         const ToyConfig& toy, const EvalConfig& cfg) {
    SamplerConfig sc;
    sc.num_steps = cfg.num_steps;
    sc.eta = 0.0;
    sc.window_size = 0;
    std::vector<const Condition*> conds;
    std::vector<std::uint64_t> seeds;
    std::vector<int> windows(prompts.size(), 0);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        conds.push_back(&prompts[i].condition);
        seeds.push_back(derive_seed(cfg.seed, {i}));
    }
    MlpVelocity model(params);
    const auto trajectories = sample_batch(model, conds, sc, seeds, windows);
    std::vector<VideoTensor> videos;
    for (const auto& tr : trajectories) videos.push_back(decode(tr.final_state().values(), toy));
    return videos;
}

std::vector<RewardBreakdown> evaluate_policy(const ModelParams& params, std::span<const ToySample> prompts,
                                             const ToyConfig& toy, const RewardSystem& rewards,
                                             const EvalConfig& cfg) {
    const auto videos = generate_videos(params, prompts, toy, cfg);
    std::vector<RewardBreakdown> out(videos.size());
    for (std::size_t i = 0; i < videos.size(); ++i) {
        out[i] = rewards.score_raw({&videos[i], &prompts[i].video, &prompts[i].condition});
    }
    return out;
}

PooledComparison pooled_comparison(std::span<const RewardBreakdown> raw_a, std::span<const RewardBreakdown> raw_b,
                                   const RewardSystem& rewards) {
    std::vector<RewardBreakdown> pooled(raw_a.begin(), raw_a.end());
    pooled.insert(pooled.end(), raw_b.begin(), raw_b.end());
    rewards.finalize(pooled, 0);
    PooledComparison pc;
    pc.a.assign(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(raw_a.size()));
    pc.b.assign(pooled.begin() + static_cast<std::ptrdiff_t>(raw_a.size()), pooled.end());
    for (const auto& r : pc.a) pc.mean_a += r.composite / static_cast<double>(pc.a.size());
    for (const auto& r : pc.b) pc.mean_b += r.composite / static_cast<double>(pc.b.size());
    return pc;
}

}  // namespace flowrl
