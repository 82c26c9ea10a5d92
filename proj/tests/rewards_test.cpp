/// @file rewards_test.cpp
/// @brief Judge parsing, perceptual distance, Horn-Schunck flow, jitter and
/// reward composition against loop oracles.

#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <numbers>

#include "flowrl/errors.hpp"
#include "flowrl/rewards.hpp"
#include "flowrl/rng.hpp"
#include "flowrl/toyworld.hpp"
#include "oracles.hpp"

using namespace flowrl;

namespace {

VideoTensor random_video(Rng& rng, std::size_t t, std::size_t h, std::size_t w) {
    VideoTensor v{NumericArray({t, h, w})};
    for (double& x : v.frames.values()) x = rng.uniform();
    return v;
}

FlowField random_flow(Rng& rng, std::size_t h, std::size_t w, double lo = 0.0) {
    FlowField f{NumericArray({2, h, w})};
    for (double& x : f.u.values()) {
        x = rng.normal();
        if (std::abs(x) < lo) x = x < 0 ? -lo : lo;
    }
    return f;
}

FlowField constant_flow(std::size_t h, std::size_t w, double ux, double uy) {
    FlowField f{NumericArray({2, h, w})};
    for (std::size_t k = 0; k < h * w; ++k) {
        f.u[k] = ux;
        f.u[h * w + k] = uy;
    }
    return f;
}

/// Replies from a fixed script, recording the prompts it saw.
class ScriptedClient final : public JudgeClient {
public:
    explicit ScriptedClient(std::deque<std::string> replies) : replies_(std::move(replies)) {}
    std::string complete(const JudgeRequest& r) override {
        prompts.push_back(r.prompt);
        if (replies_.empty()) throw JudgeError(JudgeError::Kind::transport, "script exhausted");
        auto s = replies_.front();
        replies_.pop_front();
        return s;
    }
    std::vector<std::string> prompts;

private:
    std::deque<std::string> replies_;
};

/// Smooth periodic pattern covering the whole 16x16 frame.
std::vector<double> periodic_pattern(std::size_t n, int shift) {
    std::vector<double> img(n * n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            const double x = 2 * std::numbers::pi * (static_cast<double>(c) - shift) / static_cast<double>(n);
            const double y = 2 * std::numbers::pi * static_cast<double>(r) / static_cast<double>(n);
            img[r * n + c] = 0.5 + 0.2 * std::sin(x) + 0.15 * std::cos(y) + 0.1 * std::sin(x + y);
        }
    }
    return img;
}

RetryPolicy fast_retry() {
    RetryPolicy p;
    p.initial_backoff = std::chrono::milliseconds(0);
    return p;
}

}  // namespace

// --- judge scores --------------------------------------------------------------

TEST(JudgeScore, ParsesThinkBlockReply) {
    Rng rng(1);
    const auto v = random_video(rng, 2, 4, 4);
    ScriptedClient client({"<think>ok</think>{\"score\": 4}"});
    const auto verdict = judge_score(v, Aspect::expressive, client, nullptr, fast_retry());
    EXPECT_EQ(verdict.score, 4);
    EXPECT_EQ(verdict.aspect, Aspect::expressive);
    EXPECT_EQ(client.prompts.at(0), aspect_prompt(Aspect::expressive));
}

TEST(JudgeScore, OutOfRangeRetriesThenFails) {
    Rng rng(1);
    const auto v = random_video(rng, 2, 4, 4);
    ScriptedClient bad({"{\"score\": 6}", "{\"score\": 6}", "{\"score\": 6}"});
    EXPECT_THROW(judge_score(v, Aspect::lipsync, bad, nullptr, fast_retry()), JudgeError);
    ScriptedClient recovers({"no json here", "{\"score\": 2}"});
    EXPECT_EQ(judge_score(v, Aspect::motion, recovers, nullptr, fast_retry()).score, 2);
}

TEST(JudgeScore, MockLipSyncOnTrackingDot) {
    ToyConfig cfg;
    const auto s = generate_sample(cfg, 3);
    MockToyJudgeClient client(cfg);
    EXPECT_EQ(judge_score(s.video, Aspect::lipsync, client, &s.condition).score, 5);
}

TEST(AggregateMllm, Examples) {
    EXPECT_DOUBLE_EQ(aggregate_mllm(5, 5, 5), 5.0);
    EXPECT_DOUBLE_EQ(aggregate_mllm(1, 3, 5), 3.0);
    EXPECT_NEAR(aggregate_mllm(4.03, 4.33, 3.43), 3.93, 1e-12);
    EXPECT_THROW(aggregate_mllm(0.5, 3, 3), NumericError);
    EXPECT_THROW(aggregate_mllm(3, 3, 5.5), NumericError);
}

// --- perceptual -------------------------------------------------------------------

TEST(PerceptualDistance, IdenticalFramesAreZero) {
    Rng rng(2);
    const auto v = random_video(rng, 1, 8, 8);
    const PyramidExtractor ex;
    EXPECT_EQ(perceptual_distance(frame_view(v, 0), frame_view(v, 0), ex, unit_weights(ex)), 0.0);
}

TEST(PerceptualDistance, ConstantDifferenceSingleChannel) {
    const double delta = 0.3;
    std::vector<FeatureMap> a{FeatureMap{NumericArray({1, 3, 4}, 0.2)}};
    std::vector<FeatureMap> b{FeatureMap{NumericArray({1, 3, 4}, 0.2 + delta)}};
    PerceptualConfig raw;
    raw.normalize_channels = false;
    EXPECT_NEAR(feature_distance(a, b, {{1.0}}, raw), delta * delta, 1e-15);
}

TEST(PerceptualDistance, MatchesTripleLoopOracle) {
    Rng rng(3);
    for (std::size_t levels : {1u, 2u, 3u}) {
        const PyramidExtractor ex(levels);
        for (int k = 0; k < 10; ++k) {
            const auto v = random_video(rng, 2, 8, 8);
            const auto a = frame_view(v, 0), b = frame_view(v, 1);
            const double got = perceptual_distance(a, b, ex, unit_weights(ex));
            EXPECT_NEAR(got, oracle::perceptual_distance(a, b, levels), 1e-10);
            EXPECT_DOUBLE_EQ(got, perceptual_distance(b, a, ex, unit_weights(ex)));
            EXPECT_GT(got, 0.0);
        }
    }
}

TEST(PerceptualDistance, WeightedFeaturesMatchOracle) {
    Rng rng(4);
    std::vector<FeatureMap> fa, fb;
    for (auto [c, h, w] : {std::tuple{3u, 5u, 6u}, std::tuple{2u, 2u, 3u}}) {
        FeatureMap a{NumericArray({c, h, w})}, b{NumericArray({c, h, w})};
        rng.fill_normal(a.values.values());
        rng.fill_normal(b.values.values());
        fa.push_back(a);
        fb.push_back(b);
    }
    const std::vector<std::vector<double>> weights{{0.5, 1.5, 2.0}, {0.1, 3.0}};
    for (bool norm : {true, false}) {
        PerceptualConfig cfg;
        cfg.normalize_channels = norm;
        EXPECT_NEAR(feature_distance(fa, fb, weights, cfg),
                    oracle::feature_distance(oracle::from_maps(fa), oracle::from_maps(fb), weights, norm), 1e-10);
    }
}

TEST(PerceptualDistance, RejectsShapeMismatch) {
    Rng rng(5);
    const auto a = random_video(rng, 1, 8, 8), b = random_video(rng, 1, 8, 6);
    const PyramidExtractor ex;
    EXPECT_THROW(perceptual_distance(frame_view(a, 0), frame_view(b, 0), ex, unit_weights(ex)), ShapeError);
    EXPECT_THROW(perceptual_reward(a, b, ex, unit_weights(ex)), ShapeError);
}

TEST(PerceptualReward, TemporalAverage) {
    Rng rng(6);
    const PyramidExtractor ex;
    const auto w = unit_weights(ex);
    const auto gen = random_video(rng, 5, 8, 8), ref = random_video(rng, 5, 8, 8);
    EXPECT_EQ(perceptual_reward(ref, ref, ex, w), 0.0);
    double s = 0.0;
    for (std::size_t t = 0; t < 5; ++t) s += perceptual_distance(frame_view(gen, t), frame_view(ref, t), ex, w);
    EXPECT_NEAR(perceptual_reward(gen, ref, ex, w), -s / 5.0, 1e-12);
    EXPECT_LT(perceptual_reward(gen, ref, ex, w), 0.0);
}

// --- optical flow -----------------------------------------------------------------

TEST(EstimateFlow, IdenticalFramesGiveZeroFlow) {
    Rng rng(7);
    const auto v = random_video(rng, 1, 12, 12);
    const auto est = estimate_flow(frame_view(v, 0), frame_view(v, 0));
    for (double x : est.field.u.values()) EXPECT_LT(std::abs(x), 1e-6);
}

TEST(EstimateFlow, RecoversOnePixelShift) {
    const std::size_t n = 16;
    const auto a = periodic_pattern(n, 0), b = periodic_pattern(n, 1);
    FlowConfig cfg;
    cfg.periodic = true;
    cfg.warn_on_nonconvergence = false;
    const auto est = estimate_flow(FrameView{a, n, n}, FrameView{b, n, n}, cfg);
    double mx = 0.0, my = 0.0;
    for (double x : est.field.horizontal()) mx += x / (n * n);
    for (double y : est.field.vertical()) my += y / (n * n);
    EXPECT_GE(mx, 0.5);
    EXPECT_LE(mx, 1.5);
    EXPECT_LT(std::abs(my), 0.2);
}

TEST(EstimateFlow, SweepUpdatesShrinkMonotonically) {
    const std::size_t n = 16;
    Rng rng(8);
    for (int k = 0; k < 5; ++k) {
        // Random smooth frames: a few low-frequency modes with random phase.
        std::vector<double> a(n * n), b(n * n);
        const double p1 = rng.uniform() * 6.28, p2 = rng.uniform() * 6.28, sx = 0.5 + rng.uniform();
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                const double x = 2 * std::numbers::pi * c / n, y = 2 * std::numbers::pi * r / n;
                a[r * n + c] = 0.5 + 0.2 * std::sin(x + p1) + 0.2 * std::cos(y + p2);
                b[r * n + c] = 0.5 + 0.2 * std::sin(x + p1 - sx * 0.39) + 0.2 * std::cos(y + p2);
            }
        }
        FlowConfig cfg;
        cfg.warn_on_nonconvergence = false;
        const auto est = estimate_flow(FrameView{a, n, n}, FrameView{b, n, n}, cfg);
        ASSERT_EQ(est.update_norm.size(), 100u);
        for (std::size_t i = 1; i < est.update_norm.size(); ++i) {
            EXPECT_LE(est.update_norm[i], est.update_norm[i - 1] * (1 + 1e-12)) << "sweep " << i;
        }
        // The data term itself trades off against smoothness late on; it still
        // ends well below its starting value.
        EXPECT_LT(est.data_residual.back(), 0.5 * est.data_residual.front());
        EXPECT_LT(est.energy.back(), est.energy.front());
    }
}

TEST(EstimateFlow, BadConfigAndShapes) {
    std::vector<double> a(16, 0.5), b(12, 0.5);
    FlowConfig cfg;
    cfg.alpha = 0.0;
    EXPECT_THROW(estimate_flow(FrameView{a, 4, 4}, FrameView{a, 4, 4}, cfg), ConfigError);
    EXPECT_THROW(estimate_flow(FrameView{a, 4, 4}, FrameView{b, 3, 4}), ShapeError);
}

TEST(VideoFlows, OneFieldPerFramePair) {
    Rng rng(9);
    const auto v = random_video(rng, 5, 8, 8);
    int miss = -1;
    const auto flows = video_flows(v, FlowConfig{}, &miss);
    EXPECT_EQ(flows.size(), 4u);
    EXPECT_GE(miss, 0);
}

// --- jitter and consistency ------------------------------------------------------------

TEST(Jitter, Examples) {
    const auto a = constant_flow(4, 5, 1.0, 0.0), b = constant_flow(4, 5, 2.0, 0.0);
    EXPECT_EQ(jitter(a, a, 1e-3), 0.0);
    EXPECT_NEAR(jitter(a, b, 1e-3), 1.0 / (1.0 + 1e-3), 1e-15);
    EXPECT_THROW(jitter(a, constant_flow(5, 4, 1, 0), 1e-3), ShapeError);
    EXPECT_THROW(jitter(a, b, 0.0), ConfigError);
}

TEST(Jitter, MatchesPixelLoop) {
    Rng rng(10);
    for (int k = 0; k < 20; ++k) {
        const auto a = random_flow(rng, 7, 9), b = random_flow(rng, 7, 9);
        EXPECT_NEAR(jitter(a, b, 1e-3), oracle::jitter(a, b, 1e-3), 1e-12);
    }
}

TEST(Jitter, ScaleInvarianceAsEpsVanishes) {
    Rng rng(11);
    const double eps = 1e-3;
    for (int k = 0; k < 10; ++k) {
        const auto a = random_flow(rng, 6, 6, 0.5), b = random_flow(rng, 6, 6, 0.5);
        const double base = jitter(a, b, eps);
        for (double scale : {2.0, 10.0}) {
            FlowField sa = a, sb = b;
            for (double& x : sa.u.values()) x *= scale;
            for (double& x : sb.u.values()) x *= scale;
            // |u| >= 0.5 per component, so the relative change is at most eps / 0.5.
            EXPECT_NEAR(jitter(sa, sb, eps), base, base * 2.0 * eps);
        }
    }
}

TEST(ConsistencyReward, Examples) {
    const auto c = constant_flow(3, 3, 0.7, -0.2);
    const std::vector<FlowField> steady{c, c, c, c};
    EXPECT_EQ(consistency_reward(steady, 1e-3), 0.0);

    // Jitter values {0, 1} with eps negligible against a unit-norm flow.
    const auto u1 = constant_flow(3, 3, 1.0, 0.0), u2 = constant_flow(3, 3, 2.0, 0.0);
    const std::vector<FlowField> two{u1, u1, u2};
    EXPECT_NEAR(consistency_reward(two, 1e-12), -0.5, 1e-12);
    EXPECT_THROW(consistency_reward(std::vector<FlowField>{c}, 1e-3), ConfigError);
}

TEST(ConsistencyReward, MatchesScalarOracle) {
    Rng rng(12);
    for (int k = 0; k < 10; ++k) {
        std::vector<FlowField> flows;
        for (int t = 0; t < 2 + k % 5; ++t) flows.push_back(random_flow(rng, 5, 4));
        EXPECT_NEAR(consistency_reward(flows, 1e-3), oracle::consistency(flows, 1e-3), 1e-12);
    }
}

// --- composition --------------------------------------------------------------

TEST(NormalizeBatch, Examples) {
    const auto n = normalize_batch(std::vector<double>{1, 2, 3}, 1e-6);
    EXPECT_NEAR(n[0], -1.22474, 1e-5);
    EXPECT_NEAR(n[2], 1.22474, 1e-5);
    for (double x : normalize_batch(std::vector<double>{2, 2, 2}, 1e-6)) EXPECT_EQ(x, 0.0);
    EXPECT_THROW(normalize_batch(std::vector<double>{1.0}, 1e-6), ConfigError);
}

TEST(NormalizeBatch, Moments) {
    Rng rng(13);
    for (int k = 0; k < 200; ++k) {
        std::vector<double> v(2 + static_cast<std::size_t>(k % 30));
        for (double& x : v) x = 5.0 + 3.0 * rng.normal();
        const auto n = normalize_batch(v, 1e-6);
        double m = 0, s = 0;
        for (double x : n) m += x / static_cast<double>(n.size());
        for (double x : n) s += (x - m) * (x - m) / static_cast<double>(n.size());
        EXPECT_LT(std::abs(m), 1e-12);
        EXPECT_NEAR(std::sqrt(s), 1.0, 1e-9);
    }
}

TEST(Compose, Examples) {
    EXPECT_DOUBLE_EQ(compose(1.0, 0.5, -0.5, 0.2, 0.2), 1.0);
    EXPECT_EQ(compose(0.7, 3.0, -9.0, 0.0, 0.0), 0.7);
    const RewardConfig defaults;
    EXPECT_EQ(defaults.lambda1, 0.2);
    EXPECT_EQ(defaults.lambda2, 0.2);
    EXPECT_NEAR(compose(-0.4, 1.2, 0.8, 0.2, 0.2), 0.0, 1e-15);
}

TEST(RewardKind, RoundTrip) {
    for (auto k : {RewardKind::composite, RewardKind::mllm, RewardKind::perceptual, RewardKind::consistency,
                   RewardKind::perceptual_consistency, RewardKind::lipsync, RewardKind::expressive,
                   RewardKind::motion}) {
        EXPECT_EQ(parse_reward_kind(to_string(k)), k);
    }
    EXPECT_THROW(parse_reward_kind("aesthetic"), ConfigError);
}

class RewardSystemTest : public ::testing::Test {
protected:
    ToyConfig toy;
    MockToyJudge judge{toy};
    std::vector<ToySample> samples;

    void SetUp() override {
        for (std::uint64_t i = 0; i < 4; ++i) samples.push_back(generate_sample(toy, i));
    }
};

TEST_F(RewardSystemTest, GroundTruthAgainstItself) {
    const RewardSystem rs(RewardConfig{}, judge);
    const auto& s = samples[0];
    const auto rb = rs.score_raw({&s.video, &s.video, &s.condition});
    EXPECT_EQ(rb.r_perceptual, 0.0);
    EXPECT_LE(rb.r_consistency, 0.0);
    EXPECT_DOUBLE_EQ(rb.r_mllm, (rb.judge_lipsync + rb.judge_expressive + rb.judge_motion) / 3.0);
    EXPECT_NEAR(rb.judge_lipsync, 5.0, 0.1);
}

TEST_F(RewardSystemTest, BatchNormalizationAndComposition) {
    RewardConfig cfg;
    cfg.flow.warn_on_nonconvergence = false;
    const RewardSystem rs(cfg, judge);
    // Generated = the reference of a different sample, so every component varies.
    std::vector<ScoringItem> items;
    for (std::size_t i = 0; i < 4; ++i) items.push_back({&samples[(i + 1) % 4].video, &samples[i].video, &samples[i].condition});
    const auto out = rs.score_batch(items);
    ASSERT_EQ(out.size(), 4u);
    double mean = 0, sq = 0;
    for (const auto& r : out) {
        EXPECT_DOUBLE_EQ(r.composite, r.n_mllm + 0.2 * r.n_perceptual + 0.2 * r.n_consistency);
        EXPECT_EQ(r.reward, r.composite);
        EXPECT_LT(r.r_perceptual, 0.0);
        mean += r.n_perceptual / 4;
    }
    for (const auto& r : out) sq += (r.n_perceptual - mean) * (r.n_perceptual - mean) / 4;
    EXPECT_LT(std::abs(mean), 1e-12);
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-9);

    auto raw = out;
    rs.finalize(raw);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(raw[i].composite, out[i].composite);
}

TEST_F(RewardSystemTest, SingleItemBatchIsRejected) {
    const RewardSystem rs(RewardConfig{}, judge);
    const std::vector<ScoringItem> one{{&samples[0].video, &samples[0].video, &samples[0].condition}};
    EXPECT_THROW(rs.score_batch(one), ConfigError);
}

TEST_F(RewardSystemTest, GroupScopeNormalizesEachGroup) {
    RewardConfig cfg;
    cfg.scope = NormalizationScope::group;
    cfg.kind = RewardKind::perceptual;
    const RewardSystem rs(cfg, judge);
    std::vector<RewardBreakdown> rb(4);
    const double perc[4] = {-1.0, -3.0, -10.0, -20.0};
    for (int i = 0; i < 4; ++i) rb[i].r_perceptual = perc[i];
    rs.finalize(rb, 2);
    EXPECT_DOUBLE_EQ(rb[0].reward, 1.0);
    EXPECT_DOUBLE_EQ(rb[1].reward, -1.0);
    EXPECT_DOUBLE_EQ(rb[2].reward, 1.0);
    EXPECT_DOUBLE_EQ(rb[3].reward, -1.0);
    EXPECT_THROW(rs.finalize(rb, 3), ConfigError);
}
