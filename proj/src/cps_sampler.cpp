#include "flowrl/cps_sampler.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "flowrl/encoding.hpp"
#include "flowrl/errors.hpp"

namespace flowrl {

void SamplerConfig::validate() const {
    if (num_steps < 1) throw ConfigError("sampler num_steps must be >= 1");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("sampler eta must lie in [0,1]");
    if (window_size < 0 || window_size > num_steps) {
        throw ConfigError("sampler window_size must lie in [0, num_steps]");
    }
    if (placement == WindowPlacement::fixed &&
        (window_start < 0 || window_start + window_size > num_steps)) {
        throw ConfigError("fixed window does not fit in the step schedule");
    }
}

std::vector<double> time_grid(int num_steps) {
    std::vector<double> t(static_cast<std::size_t>(num_steps) + 1);
    for (int k = 0; k <= num_steps; ++k) t[static_cast<std::size_t>(k)] = static_cast<double>(k) / num_steps;
    return t;
}

std::pair<double, double> cps_sin_cos(double eta) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("CPS eta must lie in [0,1]");
    if (eta == 0.0) return {0.0, 1.0};
    if (eta == 1.0) return {1.0, 0.0};
    const double a = eta * std::numbers::pi / 2.0;
    return {std::sin(a), std::cos(a)};
}

std::pair<double, double> cps_mean_coefficients(double t_from, double t_to, double eta) {
    const auto [s, c] = cps_sin_cos(eta);
    (void)s;
    // zhat0 = z - t v, zhat1 = z + (1 - t) v
    const double a = (1.0 - t_to) + t_to * c;
    const double b = -(1.0 - t_to) * t_from + t_to * c * (1.0 - t_from);
    return {a, b};
}

std::pair<LatentState, TransitionRecord> cps_step(const LatentState& zhat0,
                                                  const LatentState& zhat1, FlowTime t_to,
                                                  double eta, std::span<const double> noise) {
    require_same_size(zhat0.dim(), zhat1.dim(), "cps_step");
    require_same_size(zhat0.dim(), noise.size(), "cps_step noise");
    const auto [s, c] = cps_sin_cos(eta);
    const double t = t_to.value();
    const double sigma = t * s;
    const auto x0 = zhat0.values();
    const auto x1 = zhat1.values();

    std::vector<double> mean(zhat0.dim());
    std::vector<double> sample(zhat0.dim());
    for (std::size_t i = 0; i < mean.size(); ++i) {
        mean[i] = (1.0 - t) * x0[i] + t * c * x1[i];
        sample[i] = mean[i] + sigma * noise[i];
    }
    TransitionRecord rec;
    rec.t_to = t;
    rec.std = sigma;
    rec.stochastic = eta > 0.0;
    rec.eta = eta;
    rec.mean = NumericArray::from_vector(std::move(mean));
    rec.sample = NumericArray::from_vector(sample);
    return {LatentState(std::move(sample)), std::move(rec)};
}

double transition_log_prob(std::span<const double> z_next, const TransitionRecord& record) {
    require_same_size(z_next.size(), record.mean.size(), "transition_log_prob");
    if (!record.stochastic || !(record.std > 0.0)) {
        throw DegenerateTransitionError("transition_log_prob: transition has no density (std = " +
                                        std::to_string(record.std) + ")");
    }
    const double var = record.std * record.std;
    double sq = 0.0;
    for (std::size_t i = 0; i < z_next.size(); ++i) {
        const double d = z_next[i] - record.mean[i];
        sq += d * d;
    }
    const double d = static_cast<double>(z_next.size());
    return -sq / (2.0 * var) - d * (std::log(record.std) + 0.5 * std::log(2.0 * std::numbers::pi));
}

int choose_window_start(const SamplerConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.placement == WindowPlacement::fixed) return cfg.window_start;
    if (cfg.window_size == 0) return 0;
    // The final step lands on t = 0 where the CPS noise scale vanishes; keep
    // the window off it whenever it fits.
    const int last_start = cfg.window_size < cfg.num_steps ? cfg.num_steps - 1 - cfg.window_size : 0;
    if (last_start == 0) return 0;  // no draw, so the stream matches a window-free run
    return static_cast<int>(rng.uniform_int(0, last_start));
}

namespace {

std::vector<Trajectory> run_lockstep(const VelocityModel& model,
                                     std::span<const Condition* const> conditions,
                                     const SamplerConfig& cfg, std::span<Rng*> rngs,
                                     std::span<const int> starts) {
    cfg.validate();
    const std::size_t n = conditions.size();
    const std::size_t dim = model.latent_dim();
    const auto grid = time_grid(cfg.num_steps);

    std::vector<Trajectory> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        conditions[i]->validate();
        out[i].condition = *conditions[i];
        out[i].window_start = starts[i];
        std::vector<double> z1(dim);
        rngs[i]->fill_normal(z1);
        out[i].states.reserve(static_cast<std::size_t>(cfg.num_steps) + 1);
        out[i].states.emplace_back(std::move(z1));
    }

    std::vector<VelocityQuery> queries(n);
    std::vector<double> velocity(n * dim);
    std::vector<double> noise(dim);
    for (int k = 0; k < cfg.num_steps; ++k) {
        const double t_from = grid[static_cast<std::size_t>(cfg.num_steps - k)];
        const double t_to = grid[static_cast<std::size_t>(cfg.num_steps - k - 1)];
        for (std::size_t i = 0; i < n; ++i) {
            queries[i] = {out[i].states.back().values(), t_from, &out[i].condition};
        }
        model.velocity(queries, velocity);

        for (std::size_t i = 0; i < n; ++i) {
            const auto& z = out[i].states.back();
            const std::span<const double> v(&velocity[i * dim], dim);
            if (!all_finite(v)) {
                throw DivergenceError("sampler: non-finite velocity at step " + std::to_string(k), k);
            }
            const bool stochastic = cfg.window_size > 0 && k >= starts[i] &&
                                    k < starts[i] + cfg.window_size;
            const double eta = stochastic ? cfg.eta : 0.0;
            if (stochastic) {
                rngs[i]->fill_normal(noise);
            } else {
                std::fill(noise.begin(), noise.end(), 0.0);
            }
            auto [next, rec] = [&] {
                try {
                    const FlowTime tf(t_from);
                    return cps_step(predict_data(z, tf, v), predict_noise(z, tf, v), FlowTime(t_to),
                                    eta, noise);
                } catch (const NumericError& e) {
                    throw DivergenceError("sampler: non-finite state at step " + std::to_string(k) +
                                              ": " + e.what(), k);
                }
            }();
            rec.t_from = t_from;
            rec.stochastic = stochastic;
            out[i].transitions.push_back(std::move(rec));
            out[i].states.push_back(std::move(next));
        }
    }
    return out;
}

}  // namespace

Trajectory sample_trajectory(const VelocityModel& model, const Condition& c,
                             const SamplerConfig& cfg, Rng& rng) {
    const int start = choose_window_start(cfg, rng);
    const Condition* conds[] = {&c};
    Rng* rngs[] = {&rng};
    const int starts[] = {start};
    return std::move(run_lockstep(model, conds, cfg, rngs, starts).front());
}

std::vector<Trajectory> sample_batch(const VelocityModel& model,
                                     std::span<const Condition* const> conditions,
                                     const SamplerConfig& cfg,
                                     std::span<const std::uint64_t> stream_seeds,
                                     std::span<const int> window_starts) {
    require_same_size(conditions.size(), stream_seeds.size(), "sample_batch seeds");
    require_same_size(conditions.size(), window_starts.size(), "sample_batch window starts");
    std::vector<Rng> streams;
    streams.reserve(stream_seeds.size());
    for (auto s : stream_seeds) streams.emplace_back(s);
    std::vector<Rng*> ptrs;
    for (auto& r : streams) ptrs.push_back(&r);
    return run_lockstep(model, conditions, cfg, ptrs, window_starts);
}

void write_trajectory_jsonl(std::ostream& os, const Trajectory& traj, bool with_states) {
    for (std::size_t k = 0; k < traj.transitions.size(); ++k) {
        const auto& r = traj.transitions[k];
        nlohmann::json j{{"step", k},
                         {"t_from", r.t_from},
                         {"t_to", r.t_to},
                         {"std", r.std},
                         {"stochastic", r.stochastic}};
        if (with_states) {
            j["mean_b64"] = base64_f64(r.mean.values());
            j["sample_b64"] = base64_f64(r.sample.values());
        }
        os << j.dump() << '\n';
    }
}

}  // namespace flowrl
