/// @file acceptance.cpp
/// @brief Acceptance runner: one PASS/FAIL line per criterion 1-11.
///
/// Usage: acceptance [criterion ...]   (no arguments runs all of them)
/// Exit status is 0 only if every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "flowrl/app.hpp"
#include "flowrl/cps_sampler.hpp"
#include "flowrl/eval_align.hpp"
#include "flowrl/flow_core.hpp"
#include "flowrl/grpo.hpp"
#include "flowrl/rewards.hpp"
#include "flowrl/toyworld.hpp"
#include "flowrl/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace flowrl;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string strf(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

LatentState random_state(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    rng.fill_normal(v);
    return LatentState(std::move(v));
}

// --- 1 ------------------------------------------------------------------------------

Outcome flow_identities() {
    Rng rng(1);
    double worst = 0.0;
    for (int k = 0; k < 10000; ++k) {
        const std::size_t d = 1 + k % 16;
        const auto z0 = random_state(rng, d), z1 = random_state(rng, d);
        const FlowTime t(rng.uniform());
        const auto zt = interpolate(z0, z1, t);
        const auto target = flow_matching_target(z0, z1);
        const auto d0 = predict_data(zt, t, target.values()), d1 = predict_noise(zt, t, target.values());
        std::vector<double> v(d);
        rng.fill_normal(v);
        const auto e0 = predict_data(zt, t, v), e1 = predict_noise(zt, t, v);
        for (std::size_t i = 0; i < d; ++i) {
            worst = std::max(worst, std::abs(zt.values()[i] - ((1.0 - t) * z0.values()[i] + t * z1.values()[i])));
            worst = std::max(worst, std::abs(d0.values()[i] - z0.values()[i]));
            worst = std::max(worst, std::abs(d1.values()[i] - z1.values()[i]));
            worst = std::max(worst, std::abs((1.0 - t) * e0.values()[i] + t * e1.values()[i] - zt.values()[i]));
            worst = std::max(worst, std::abs(e1.values()[i] - e0.values()[i] - v[i]));
        }
    }
    return {worst < 1e-10, strf("max error %.2e over 10000 cases", worst)};
}

// --- 2 ------------------------------------------------------------------------------

Outcome gradient_correctness() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        NetConfig c;
        c.latent_dim = 3 + seed % 3;
        c.signal_len = 2 + seed % 2;
        c.reference_len = 2;
        c.hidden = seed % 4 == 0 ? std::vector<std::size_t>{6} : std::vector<std::size_t>{7, 5};
        c.skip_gate = seed % 2 == 0;
        c.time_encoding = seed % 3 == 0 ? TimeEncoding::sinusoidal : TimeEncoding::raw;
        c.activation = seed % 5 == 4 ? Activation::relu : Activation::tanh;
        Rng rng(seed + 500);
        const auto b = flowrl::testing::random_batch(c, 2 + seed % 3, rng);
        const auto kind = seed < 10 ? LossKind::flow_matching : LossKind::output_gradient;
        worst = std::max(worst, flowrl::testing::gradient_check(flowrl::testing::random_net(c, seed), b.batch, kind));
    }
    return {worst < 1e-4, strf("max relative error %.2e over 20 nets", worst)};
}

// --- 3 ------------------------------------------------------------------------------

Outcome cps_correctness() {
    Rng rng(3);
    double det_err = 0.0;
    for (int k = 0; k < 1000; ++k) {
        std::vector<double> z(6), v(6);
        rng.fill_normal(z);
        rng.fill_normal(v);
        const FlowTime t(0.05 + 0.95 * rng.uniform());
        const double dt = t * rng.uniform();
        const LatentState zt(z);
        const auto euler = euler_step(zt, t, dt, v);
        std::vector<double> noise(6);
        rng.fill_normal(noise);
        const auto [cps, rec] = cps_step(predict_data(zt, t, v), predict_noise(zt, t, v), FlowTime(t - dt), 0.0, noise);
        for (std::size_t i = 0; i < 6; ++i) det_err = std::max(det_err, std::abs(cps.values()[i] - euler.values()[i]));
    }

    double z1_coef = 0.0;
    for (int k = 0; k < 100; ++k) {
        const double t_from = 0.1 + 0.9 * rng.uniform(), t_to = t_from * rng.uniform();
        // In (z_t, v) form the eta = 1 mean must be (1 - t_to) * zhat0 = (1 - t_to) * (z_t - t_from * v).
        const auto [cz, cv] = cps_mean_coefficients(t_from, t_to, 1.0);
        z1_coef = std::max({z1_coef, std::abs(cz - (1.0 - t_to)), std::abs(cv + (1.0 - t_to) * t_from)});
        const auto zhat0 = random_state(rng, 4);
        const auto [a, ra] = cps_step(zhat0, random_state(rng, 4), FlowTime(t_to), 1.0, std::vector<double>(4, 0.0));
        const auto [b, rb] = cps_step(zhat0, random_state(rng, 4), FlowTime(t_to), 1.0, std::vector<double>(4, 0.0));
        for (std::size_t i = 0; i < 4; ++i) z1_coef = std::max(z1_coef, std::abs(ra.mean[i] - rb.mean[i]));
    }

    double worst_std = 0.0;
    const LatentState z0({0.3}), z1({-0.7});
    for (double eta : {0.25, 0.5, 0.75, 1.0}) {
        for (double t_to : {0.2, 0.6}) {
            double sum = 0.0, sq = 0.0;
            const int n = 10000;
            for (int k = 0; k < n; ++k) {
                const auto [next, rec] = cps_step(z0, z1, FlowTime(t_to), eta, std::vector<double>{rng.normal()});
                const double d = next.values()[0] - rec.mean[0];
                sum += d;
                sq += d * d;
            }
            const double mean = sum / n;
            const double sd = std::sqrt(sq / n - mean * mean);
            worst_std = std::max(worst_std, std::abs(sd / (t_to * std::sin(eta * std::numbers::pi / 2.0)) - 1.0));
        }
    }
    const bool pass = det_err <= 1e-12 && z1_coef == 0.0 && worst_std < 0.03;
    return {pass, strf("eta=0 vs Euler %.2e, eta=1 noise-estimate weight %.1e, worst std deviation %.2f%%", det_err,
                      z1_coef, 100.0 * worst_std)};
}

// --- 4 ------------------------------------------------------------------------------

Outcome grpo_algebra() {
    Rng rng(4);
    double adv_err = 0.0;
    for (int k = 0; k < 200; ++k) {
        std::vector<double> r(2 + k % 15);
        for (double& x : r) x = 3.0 * rng.normal() + 1.0;
        const auto a = group_advantages(r, 1e-6);
        double m = 0.0, sq = 0.0;
        for (double x : a) m += x;
        m /= static_cast<double>(a.size());
        for (double x : a) sq += (x - m) * (x - m);
        adv_err = std::max({adv_err, std::abs(m), std::abs(std::sqrt(sq / static_cast<double>(a.size())) - 1.0)});
    }

    NetConfig c;
    c.latent_dim = 4;
    c.signal_len = 2;
    c.reference_len = 3;
    c.hidden = {8};
    const auto old = flowrl::testing::random_net(c, 9, 0.2);
    std::vector<RolloutGroup> groups;
    const MlpVelocity model(old);
    SamplerConfig sc;
    sc.num_steps = 8;
    sc.window_size = 3;
    for (int g = 0; g < 3; ++g) {
        RolloutGroup grp;
        grp.condition = flowrl::testing::random_condition(rng, 2, 3);
        sc.placement = WindowPlacement::fixed;
        sc.window_start = g;
        for (int i = 0; i < 4; ++i) {
            Rng traj_rng(derive_seed(40, {static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(i)}));
            grp.trajectories.push_back(sample_trajectory(model, grp.condition, sc, traj_rng));
            grp.rewards.push_back(rng.normal());
        }
        grp.advantages = group_advantages(grp.rewards, 1e-6);
        groups.push_back(std::move(grp));
    }
    const auto ev = evaluate_surrogate(old, old, groups, GrpoConfig{});
    const bool identity = ev.stats.mean_ratio == 1.0 && ev.stats.clip_fraction == 0.0;

    std::size_t mismatches = 0, cells = 0;
    for (double eps : {0.001, 0.1, 0.2}) {
        for (int i = 0; i <= 2000; ++i) {
            const double ratio = 2.0 * i / 2000.0;
            for (double adv : {-2.0, -0.5, 0.0, 0.7, 1.5}) {
                const double lo = 1.0 - eps, hi = 1.0 + eps;
                const double clipped = ratio < lo ? lo : (ratio > hi ? hi : ratio);
                const double brute = std::min(ratio * adv, clipped * adv);
                mismatches += clipped_surrogate(ratio, adv, eps) != brute;
                ++cells;
            }
        }
    }
    const bool pass = adv_err < 1e-12 && identity && mismatches == 0;
    return {pass, strf("advantage moment error %.1e; at old policy ratio %.17g, clip fraction %g; surrogate grid "
                      "%zu/%zu exact",
                      adv_err, ev.stats.mean_ratio, ev.stats.clip_fraction, cells - mismatches, cells)};
}

// --- 5 ------------------------------------------------------------------------------

FlowField random_flow(Rng& rng, std::size_t h, std::size_t w) {
    FlowField f{NumericArray({2, h, w})};
    for (double& x : f.u.values()) x = rng.normal();
    return f;
}

Outcome reward_oracles() {
    Rng rng(5);
    double perc = 0.0, jit = 0.0, cons = 0.0, ss = 0.0;
    for (int k = 0; k < 30; ++k) {
        const std::size_t h = 6 + k % 11, w = 5 + (k * 3) % 13;
        std::vector<double> a(h * w), b(h * w);
        for (double& x : a) x = rng.uniform();
        for (std::size_t i = 0; i < a.size(); ++i) b[i] = std::clamp(a[i] + 0.3 * rng.normal(), 0.0, 1.0);
        const FrameView fa{a, h, w}, fb{b, h, w};
        for (std::size_t levels = 1; levels <= 3; ++levels) {
            const PyramidExtractor ex(levels);
            perc = std::max(perc, std::abs(perceptual_distance(fa, fb, ex, unit_weights(ex)) -
                                           oracle::perceptual_distance(fa, fb, levels)));
        }
        if (h >= 7 && w >= 7) {
            SsimConfig sc;
            ss = std::max(ss, std::abs(ssim(fa, fb, sc) - oracle::ssim(fa, fb, 7, 1e-4, 9e-4)));
        }
        const auto u = random_flow(rng, h, w), v = random_flow(rng, h, w);
        jit = std::max(jit, std::abs(jitter(u, v, 1e-3) - oracle::jitter(u, v, 1e-3)));
        std::vector<FlowField> flows;
        for (int t = 0; t < 2 + k % 6; ++t) flows.push_back(random_flow(rng, h, w));
        cons = std::max(cons, std::abs(consistency_reward(flows, 1e-3) - oracle::consistency(flows, 1e-3)));
    }
    bool constant_zero = true;
    for (double ux : {0.0, 0.5, -3.25}) {
        FlowField f{NumericArray({2, 9, 7})};
        for (std::size_t i = 0; i < 63; ++i) {
            f.u[i] = ux;
            f.u[63 + i] = 1.5 - ux;
        }
        constant_zero = constant_zero && jitter(f, f, 1e-3) == 0.0 && consistency_reward(std::vector{f, f, f}, 1e-3) == 0.0;
    }
    const bool pass = std::max({perc, jit, cons, ss}) < 1e-8 && constant_zero;
    return {pass, strf("max |impl - oracle|: perceptual %.1e, jitter %.1e, consistency %.1e, ssim %.1e; constant flow "
                      "jitter %s",
                      perc, jit, cons, ss, constant_zero ? "0" : "nonzero")};
}

// --- 6 ------------------------------------------------------------------------------

Outcome composite_reward() {
    const RewardConfig defaults;
    bool ok = defaults.lambda1 == 0.2 && defaults.lambda2 == 0.2;
    double hand = 0.0;
    for (auto [m, p, c] : {std::tuple{1.0, -0.5, 2.0}, std::tuple{0.0, 1.0, 1.0}, std::tuple{-1.2, 0.3, -0.7}}) {
        hand = std::max(hand, std::abs(compose(m, p, c, 0.2, 0.2) - (m + 0.2 * p + 0.2 * c)));
    }
    ok = ok && std::abs(compose(1.0, -0.5, 2.0, 0.2, 0.2) - 1.3) < 1e-12;

    // Batch normalization over real reward components of perturbed toy videos.
    ToyConfig toy;
    MockToyJudge judge(toy);
    RewardConfig rc;
    rc.flow.warn_on_nonconvergence = false;
    const RewardSystem rs(rc, judge);
    std::vector<ToySample> samples;
    std::vector<VideoTensor> gen;
    Rng rng(6);
    for (std::uint64_t i = 0; i < 12; ++i) {
        samples.push_back(generate_sample(toy, i));
        VideoTensor v = samples.back().video;
        const double amp = 0.02 * static_cast<double>(i);
        for (double& x : v.frames.values()) x = std::clamp(x + amp * rng.normal(), 0.0, 1.0);
        gen.push_back(std::move(v));
    }
    std::vector<ScoringItem> items;
    for (std::size_t i = 0; i < samples.size(); ++i) items.push_back({&gen[i], &samples[i].video, &samples[i].condition});
    const auto out = rs.score_batch(items);
    double moment_err = 0.0, comp_err = 0.0;
    for (auto field : {&RewardBreakdown::n_mllm, &RewardBreakdown::n_perceptual, &RewardBreakdown::n_consistency}) {
        double m = 0.0, sq = 0.0;
        for (const auto& r : out) m += r.*field;
        m /= static_cast<double>(out.size());
        for (const auto& r : out) sq += (r.*field - m) * (r.*field - m);
        moment_err = std::max({moment_err, std::abs(m), std::abs(std::sqrt(sq / static_cast<double>(out.size())) - 1.0)});
    }
    for (const auto& r : out) {
        comp_err = std::max(comp_err, std::abs(r.composite - (r.n_mllm + 0.2 * r.n_perceptual + 0.2 * r.n_consistency)));
    }
    ok = ok && hand < 1e-12 && moment_err < 1e-9 && comp_err < 1e-12;
    return {ok, strf("lambda defaults 0.2/0.2; hand arithmetic error %.1e; normalized moments error %.1e; composite "
                    "error %.1e",
                    hand, moment_err, comp_err)};
}

// --- 7, 8, 9 -------------------------------------------------------------------------

struct Desk {
    app::RunConfig cfg;
    std::vector<ToySample> data;
    std::vector<ToySample> held_out;
    ModelParams sft;
    std::vector<double> losses;
    double sft_seconds = 0.0;
    bool trained = false;

    Desk() {
        for (std::uint64_t i = 0; i < cfg.data.count; ++i) data.push_back(generate_sample(cfg.toy, i));
        ToyConfig tc = cfg.toy;
        tc.seed = cfg.eval.prompt_seed;
        for (std::uint64_t i = 0; i < cfg.eval.num_prompts; ++i) held_out.push_back(generate_sample(tc, i));
    }

    const ModelParams& sft_params() {
        if (!trained) {
            const auto t0 = std::chrono::steady_clock::now();
            sft = init_params(app::effective_net_config(cfg), cfg.seed);
            auto opt = make_optimizer(sft, cfg.flow.sft.adam);
            train_flow_matching(sft, opt, data, cfg.flow.sft, [&](const SftStep& s) { losses.push_back(s.loss); });
            sft_seconds = seconds_since(t0);
            trained = true;
        }
        return sft;
    }
};

Outcome sft_training(Desk& desk) {
    const auto& params = desk.sft_params();
    const double initial = desk.losses.front();
    double tail = 0.0;
    const std::size_t n = std::min<std::size_t>(10, desk.losses.size());
    for (std::size_t i = desk.losses.size() - n; i < desk.losses.size(); ++i) tail += desk.losses[i];
    tail /= static_cast<double>(n);

    const MockToyJudge judge(desk.cfg.toy, desk.cfg.judges.mock);
    const auto videos = generate_videos(params, desk.held_out, desk.cfg.toy, desk.cfg.eval.sampling);
    double lip = 0.0;
    for (std::size_t i = 0; i < videos.size(); ++i) lip += judge.score(videos[i], desk.held_out[i].condition).lipsync;
    lip /= static_cast<double>(videos.size());
    const bool pass = tail < 0.25 * initial && lip >= 4.0 && desk.sft_seconds < 600.0;
    return {pass, strf("loss %.4f -> %.4f (%.1f%% of initial, mean of last %zu) after %zu updates; mock lip-sync %.3f "
                      "on %zu held-out conditions; training %.0f s",
                      initial, tail, 100.0 * tail / initial, n, desk.losses.size(), lip, videos.size(),
                      desk.sft_seconds)};
}

struct RlRun {
    double gain = 0.0;  ///< pooled-normalized composite, RL minus SFT
    double r_mllm = 0.0;
    double r_consistency = 0.0;
    double seconds = 0.0;
};

double mean_of(const std::vector<RewardBreakdown>& v, double RewardBreakdown::* f) {
    double s = 0.0;
    for (const auto& r : v) s += r.*f;
    return s / static_cast<double>(v.size());
}

class RlSuite {
public:
    explicit RlSuite(Desk& desk) : desk_(desk), judge_(desk.cfg.toy, desk.cfg.judges.mock), eval_(eval_config(desk.cfg), judge_) {}

    const RlRun& run(RewardKind kind, std::uint64_t seed) {
        const auto key = std::pair{kind, seed};
        if (auto it = runs_.find(key); it != runs_.end()) return it->second;
        const auto& sft = desk_.sft_params();
        if (sft_eval_.empty()) sft_eval_ = evaluate_policy(sft, desk_.held_out, desk_.cfg.toy, eval_, desk_.cfg.eval.sampling);

        const auto t0 = std::chrono::steady_clock::now();
        RewardConfig rc = desk_.cfg.rewards;
        rc.kind = kind;
        const RewardSystem train_rewards(rc, judge_);
        RlConfig cfg = desk_.cfg.rl;
        cfg.seed = seed;
        ModelParams params = sft;
        auto opt = make_optimizer(params, cfg.adam);
        train_rl(params, opt, desk_.data, desk_.cfg.toy, train_rewards, cfg, 0);
        const auto raw = evaluate_policy(params, desk_.held_out, desk_.cfg.toy, eval_, desk_.cfg.eval.sampling);
        const auto cmp = pooled_comparison(sft_eval_, raw, eval_);
        RlRun r{cmp.mean_b - cmp.mean_a, mean_of(raw, &RewardBreakdown::r_mllm),
                mean_of(raw, &RewardBreakdown::r_consistency), seconds_since(t0)};
        spdlog::info("rl {} seed {}: gain {:.3f}, r_mllm {:.4f}, r_consistency {:.4f}, {:.0f} s", to_string(kind), seed,
                     r.gain, r.r_mllm, r.r_consistency, r.seconds);
        return runs_.emplace(key, r).first->second;
    }

    double sft_mllm() const { return mean_of(sft_eval_, &RewardBreakdown::r_mllm); }
    double sft_consistency() const { return mean_of(sft_eval_, &RewardBreakdown::r_consistency); }

private:
    static RewardConfig eval_config(const app::RunConfig& cfg) {
        RewardConfig rc = cfg.rewards;
        rc.kind = RewardKind::composite;
        return rc;
    }

    Desk& desk_;
    MockToyJudge judge_;
    RewardSystem eval_;
    std::vector<RewardBreakdown> sft_eval_;
    std::map<std::pair<RewardKind, std::uint64_t>, RlRun> runs_;
};

constexpr std::uint64_t kSeeds[] = {0, 1, 2};

Outcome rl_improvement(RlSuite& suite) {
    bool all = true;
    double total = 0.0;
    std::string gains;
    for (auto s : kSeeds) {
        const auto& r = suite.run(RewardKind::composite, s);
        all = all && r.gain >= 0.2;
        total += r.seconds;
        gains += strf("%s%.3f", gains.empty() ? "" : ", ", r.gain);
    }
    const bool pass = all && total < 1800.0;
    return {pass, strf("composite gain over SFT per seed: %s (need >= 0.2 each); RL time %.0f s", gains.c_str(), total)};
}

Outcome reward_hacking(RlSuite& suite) {
    int cons_worse = 0, judge_worse = 0;
    std::string cons_detail, judge_detail;
    for (auto s : kSeeds) {
        const auto& comp = suite.run(RewardKind::composite, s);
        const auto& mllm = suite.run(RewardKind::mllm, s);
        const auto& pc = suite.run(RewardKind::perceptual_consistency, s);
        cons_worse += mllm.r_consistency < comp.r_consistency;
        judge_worse += pc.r_mllm < comp.r_mllm;
        cons_detail += strf("%s%.4f vs %.4f", cons_detail.empty() ? "" : ", ", mllm.r_consistency, comp.r_consistency);
        judge_detail += strf("%s%.4f vs %.4f", judge_detail.empty() ? "" : ", ", pc.r_mllm, comp.r_mllm);
    }
    const bool pass = cons_worse >= 2 && judge_worse >= 2;
    return {pass, strf("judge-only R_consistency below composite on %d/3 seeds [%s]; perceptual+consistency judge "
                      "mean below composite on %d/3 seeds [%s]",
                      cons_worse, cons_detail.c_str(), judge_worse, judge_detail.c_str())};
}

// --- 10, 11 --------------------------------------------------------------------------

PreferenceRecord pref(const std::string& a, const std::string& b, Verdict human, Verdict pred) {
    PreferenceRecord p;
    p.sample_id = "s";
    p.video_a = a;
    p.video_b = b;
    p.human_winner = human;
    p.evaluator_prediction = pred;
    return p;
}

/// Random annotator rankings over 4 videos per sample; some annotators disagree.
std::vector<AnnotationRecord> random_annotations(std::size_t samples, Rng& rng) {
    std::vector<AnnotationRecord> out;
    for (std::size_t s = 0; s < samples; ++s) {
        std::vector<int> base{1, 2, 3, 4};
        for (std::size_t i = 3; i > 0; --i) std::swap(base[i], base[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
        for (int a = 0; a < 3; ++a) {
            auto ranks = base;
            if (rng.uniform() < 0.3) std::swap(ranks[static_cast<std::size_t>(rng.uniform_int(0, 3))], ranks[static_cast<std::size_t>(rng.uniform_int(0, 3))]);
            for (std::size_t v = 0; v < 4; ++v) {
                AnnotationRecord r;
                r.sample_id = "s" + std::to_string(s);
                r.video_id = "s" + std::to_string(s) + "_v" + std::to_string(v);
                r.annotator_id = "a" + std::to_string(a);
                r.lipsync = r.expressive = r.motion = 3;
                r.rank_position = ranks[v];
                out.push_back(r);
            }
        }
    }
    return out;
}

Outcome alignment_metrics_check() {
    const std::vector<PreferenceRecord> fixture{pref("a", "b", Verdict::A, Verdict::A), pref("c", "d", Verdict::B, Verdict::B),
                                                pref("e", "f", Verdict::A, Verdict::A), pref("g", "h", Verdict::B, Verdict::tie)};
    const auto m = alignment_metrics(fixture);
    const bool worked = m.acc == (3.0 + 0.5 * 1.0) / 4.0 && m.acc_nt == 1.0 && m.coverage == 0.75;

    Rng rng(10);
    std::vector<AlignmentReport> reports{m};
    for (int k = 0; k < 50; ++k) {
        std::vector<PreferenceRecord> recs;
        for (int i = 0; i < 1 + k; ++i) {
            const double u = rng.uniform();
            recs.push_back(pref("x" + std::to_string(i), "y" + std::to_string(i), rng.uniform() < 0.5 ? Verdict::A : Verdict::B,
                                u < 0.25 ? Verdict::tie : (u < 0.6 ? Verdict::A : Verdict::B)));
        }
        reports.push_back(alignment_metrics(recs));
    }

    const auto pairs = build_pairs(random_annotations(40, rng));
    double echo_min = 1.0;
    for (auto strategy : {CompareStrategy::direct, CompareStrategy::icl, CompareStrategy::multi_agent}) {
        OracleComparisonJudge oracle(pairs);
        ComparisonConfig cc;
        cc.strategy = strategy;
        auto work = pairs;
        predict_by_comparison(work, cc, oracle);
        reports.push_back(alignment_metrics(work));
        echo_min = std::min(echo_min, reports.back().acc);
    }
    std::size_t identity_fail = 0;
    for (const auto& r : reports) identity_fail += std::abs(r.acc - (r.acc_nt * r.coverage + 0.5 * (1.0 - r.coverage))) > 1e-12;

    const bool pass = worked && identity_fail == 0 && echo_min == 1.0 && !pairs.empty();
    return {pass, strf("fixture Acc %.3f Acc_nt %.3f coverage %.3f; identity holds on %zu/%zu reports; ground-truth echo "
                      "Acc %.3f on %zu pairs",
                      m.acc, m.acc_nt, m.coverage, reports.size() - identity_fail, reports.size(), echo_min, pairs.size())};
}

Outcome positional_bias() {
    std::vector<PreferenceRecord> pairs;
    for (int i = 0; i < 1000; ++i) pairs.push_back(pref("p" + std::to_string(i), "q" + std::to_string(i), Verdict::A, Verdict::tie));
    FirstPositionJudge first;
    ComparisonConfig cfg;
    cfg.seed = 11;
    predict_by_comparison(pairs, cfg, first);
    std::size_t a = 0;
    for (const auto& p : pairs) a += p.evaluator_prediction == Verdict::A;
    const double sigma = std::sqrt(1000 * 0.25);
    const double z = (static_cast<double>(a) - 500.0) / sigma;
    return {std::abs(z) <= 3.0, strf("winner-A %zu/1000 (z = %+.2f)", a, z)};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    auto wanted = [&](int c) { return selected.empty() || selected.count(c) > 0; };

    Desk desk;
    RlSuite suite(desk);
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, flow_identities},
        {2, gradient_correctness},
        {3, cps_correctness},
        {4, grpo_algebra},
        {5, reward_oracles},
        {6, composite_reward},
        {7, [&] { return sft_training(desk); }},
        {8, [&] { return rl_improvement(suite); }},
        {9, [&] { return reward_hacking(suite); }},
        {10, alignment_metrics_check},
        {11, positional_bias},
    };
    // Wall-clock limits per criterion (seconds); 7-9 check their own budgets.
    const std::map<int, double> limit{{1, 5}, {2, 30}, {3, 30}, {4, 10}, {5, 60}};

    int failed = 0;
    for (const auto& [id, fn] : criteria) {
        if (!wanted(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = fn();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double secs = seconds_since(t0);
        if (auto it = limit.find(id); it != limit.end() && secs >= it->second) {
            out.pass = false;
            out.detail += strf("; over the %.0f s budget", it->second);
        }
        failed += !out.pass;
        std::printf("criterion %2d: %s (%.2f s) %s\n", id, out.pass ? "PASS" : "FAIL", secs, out.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d failed\n", failed);
    return failed == 0 ? 0 : 1;
}
