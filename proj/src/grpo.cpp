#include "flowrl/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <spdlog/spdlog.h>

#include "flowrl/errors.hpp"

namespace flowrl {

void RolloutGroup::validate() const {
    const std::size_t g = trajectories.size();
    if (g < 2) throw ConfigError("rollout group needs at least 2 trajectories");
    if (rewards.size() != g || advantages.size() != g) {
        throw ShapeError("rollout group lists have inconsistent lengths");
    }
}

void GrpoConfig::validate() const {
    if (group_size < 2) throw ConfigError("grpo group_size must be >= 2");
    if (!(clip_epsilon > 0.0)) throw ConfigError("grpo clip_epsilon must be > 0");
    if (!(kl_beta >= 0.0)) throw ConfigError("grpo kl_beta must be >= 0");
    if (batch_rollouts < group_size || batch_rollouts % group_size != 0) {
        throw ConfigError("grpo batch_rollouts must be a positive multiple of group_size");
    }
    if (updates < 0) throw ConfigError("grpo updates must be >= 0");
    if (!(advantage_std_floor > 0.0)) throw ConfigError("grpo advantage_std_floor must be > 0");
}

std::vector<double> group_advantages(std::span<const double> rewards, double std_floor) {
    if (rewards.size() < 2) throw ConfigError("group_advantages needs at least 2 rewards");
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double sd = std::max(std::sqrt(var / n), std_floor);
    std::vector<double> adv(rewards.size());
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = (rewards[i] - mean) / sd;
    return adv;
}

double importance_ratio(double logp_new, double logp_old, double log_clamp) {
    if (!std::isfinite(logp_new) || !std::isfinite(logp_old)) {
        throw NumericError("importance_ratio: non-finite log-probability");
    }
    double d = logp_new - logp_old;
    if (std::abs(d) > log_clamp) {
        spdlog::warn("importance ratio log difference {} clamped to +-{}", d, log_clamp);
        d = std::clamp(d, -log_clamp, log_clamp);
    }
    return std::exp(d);
}

double clipped_surrogate(double ratio, double advantage, double eps) {
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    return std::min(ratio * advantage, clipped * advantage);
}

double clipped_surrogate_slope(double ratio, double advantage, double eps) {
    if (ratio >= 1.0 - eps && ratio <= 1.0 + eps) return advantage;
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    return ratio * advantage <= clipped * advantage ? advantage : 0.0;
}

double gaussian_kl(std::span<const double> mu_new, std::span<const double> mu_old, double std) {
    require_same_size(mu_new.size(), mu_old.size(), "gaussian_kl");
    if (!(std > 0.0)) throw DegenerateTransitionError("gaussian_kl: std must be positive");
    double sq = 0.0;
    for (std::size_t i = 0; i < mu_new.size(); ++i) {
        const double d = mu_new[i] - mu_old[i];
        sq += d * d;
    }
    return sq / (2.0 * std * std);
}

namespace {

struct StepRef {
    const Trajectory* traj;
    std::size_t step;
    double advantage;
    double weight;  // 1 / (M * N_s)
};

}  // namespace

SurrogateEvaluation evaluate_surrogate(const ModelParams& params, const ModelParams& old_params,
                                       std::span<const RolloutGroup> groups,
                                       const GrpoConfig& cfg) {
    std::size_t trajectories = 0;
    for (const auto& g : groups) {
        g.validate();
        trajectories += g.trajectories.size();
    }

    std::vector<StepRef> steps;
    for (const auto& g : groups) {
        for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
            const auto& tr = g.trajectories[i];
            std::vector<std::size_t> active;
            for (std::size_t k = 0; k < tr.transitions.size(); ++k) {
                const auto& rec = tr.transitions[k];
                if (rec.stochastic && rec.std > 0.0) active.push_back(k);
            }
            for (auto k : active) {
                steps.push_back({&tr, k, g.advantages[i],
                                 1.0 / (static_cast<double>(trajectories) *
                                        static_cast<double>(active.size()))});
            }
        }
    }
    if (steps.empty()) {
        throw ConfigError("grpo: no stochastic transitions with positive noise in the batch "
                          "(check eta and window size)");
    }

    const std::size_t dim = params.config.latent_dim;
    std::vector<VelocityQuery> queries;
    queries.reserve(steps.size());
    for (const auto& s : steps) {
        const auto& rec = s.traj->transitions[s.step];
        queries.push_back({s.traj->states[s.step].values(), rec.t_from, &s.traj->condition});
    }
    const auto trace = forward_trace(params, queries);
    std::vector<double> v_old(steps.size() * dim);
    forward_batch(old_params, queries, v_old);

    SurrogateEvaluation ev;
    std::vector<double> grad_v(steps.size() * dim);
    std::vector<double> mu_new(dim), mu_old(dim);
    double ratio_sum = 0.0, kl_sum = 0.0;
    std::size_t clipped = 0;
    for (std::size_t j = 0; j < steps.size(); ++j) {
        const auto& s = steps[j];
        const auto& rec = s.traj->transitions[s.step];
        const auto z = s.traj->states[s.step].values();
        const auto z_next = rec.sample.values();
        const auto [a, b] = cps_mean_coefficients(rec.t_from, rec.t_to, rec.eta);
        const double var = rec.std * rec.std;

        double sq_new = 0.0, sq_old = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            mu_new[i] = a * z[i] + b * trace.velocity[j * dim + i];
            mu_old[i] = a * z[i] + b * v_old[j * dim + i];
            const double dn = z_next[i] - mu_new[i];
            const double dold = z_next[i] - mu_old[i];
            sq_new += dn * dn;
            sq_old += dold * dold;
        }
        // Same sigma under both policies, so the normalizers cancel exactly.
        const double log_ratio = (sq_old - sq_new) / (2.0 * var);
        const double ratio = importance_ratio(log_ratio, 0.0, cfg.ratio_log_clamp);
        const double kl = gaussian_kl(mu_new, mu_old, rec.std);
        const double term = clipped_surrogate(ratio, s.advantage, cfg.clip_epsilon) - cfg.kl_beta * kl;
        ev.objective += s.weight * term;

        ratio_sum += ratio;
        kl_sum += kl;
        if (ratio < 1.0 - cfg.clip_epsilon || ratio > 1.0 + cfg.clip_epsilon) ++clipped;

        const double slope = clipped_surrogate_slope(ratio, s.advantage, cfg.clip_epsilon);
        for (std::size_t i = 0; i < dim; ++i) {
            const double dmu = slope * ratio * (z_next[i] - mu_new[i]) / var -
                               cfg.kl_beta * (mu_new[i] - mu_old[i]) / var;
            grad_v[j * dim + i] = s.weight * b * dmu;
        }
    }
    if (!std::isfinite(ev.objective)) throw NumericError("grpo: non-finite surrogate objective");

    ev.gradient = backward_from_output(params, trace, grad_v);
    const double n = static_cast<double>(steps.size());
    ev.stats.mean_ratio = ratio_sum / n;
    ev.stats.clip_fraction = static_cast<double>(clipped) / n;
    ev.stats.kl_value = kl_sum / n;
    ev.stats.objective = ev.objective;
    ev.stats.loss = -ev.objective;
    ev.stats.transitions = steps.size();
    return ev;
}

GrpoUpdateResult grpo_update(const ModelParams& params, const ModelParams& old_params,
                             std::span<const RolloutGroup> groups, const GrpoConfig& cfg,
                             OptimizerState& optimizer) {
    cfg.validate();
    auto ev = evaluate_surrogate(params, old_params, groups, cfg);
    if (!ev.gradient.all_finite()) throw NumericError("grpo: non-finite gradient");

    GradientBundle descent = GradientBundle::zeros_like(params);
    descent.add_scaled(ev.gradient, -1.0);
    GrpoUpdateResult out{params, ev.stats};
    adamw_step(out.params, descent, optimizer);

    double sq = 0.0;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto w0 = params.layers[l].weight.values();
        const auto w1 = out.params.layers[l].weight.values();
        for (std::size_t i = 0; i < w0.size(); ++i) sq += (w1[i] - w0[i]) * (w1[i] - w0[i]);
        const auto b0 = params.layers[l].bias.values();
        const auto b1 = out.params.layers[l].bias.values();
        for (std::size_t i = 0; i < b0.size(); ++i) sq += (b1[i] - b0[i]) * (b1[i] - b0[i]);
    }
    out.stats.update_norm = std::sqrt(sq);
    return out;
}

}  // namespace flowrl
