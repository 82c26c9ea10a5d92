/// @file flow_core_test.cpp
/// @brief Interpolation, endpoint recovery and Euler step.

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "flowrl/errors.hpp"
#include "flowrl/flow_core.hpp"
#include "flowrl/rng.hpp"

using namespace flowrl;

namespace {

LatentState random_state(Rng& rng, std::size_t d) {
    std::vector<double> v(d);
    rng.fill_normal(v);
    return LatentState(std::move(v));
}

std::vector<double> diff(const LatentState& a, const LatentState& b) {
    std::vector<double> out(a.dim());
    for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a.values()[i] - b.values()[i];
    return out;
}

}  // namespace

TEST(FlowTime, RejectsOutOfRange) {
    EXPECT_THROW(FlowTime(-0.1), ConfigError);
    EXPECT_THROW(FlowTime(1.5), ConfigError);
    EXPECT_THROW(FlowTime(std::nan("")), ConfigError);
    EXPECT_DOUBLE_EQ(FlowTime(0.25).value(), 0.25);
}

TEST(Interpolate, Endpoints) {
    const LatentState z0({1.0, -2.0}), z1({3.0, 4.0});
    EXPECT_EQ(interpolate(z0, z1, FlowTime(0.0)), z0);
    EXPECT_EQ(interpolate(z0, z1, FlowTime(1.0)), z1);
    const auto mid = interpolate(z0, z1, FlowTime(0.5));
    EXPECT_DOUBLE_EQ(mid.values()[0], 2.0);
    EXPECT_DOUBLE_EQ(mid.values()[1], 1.0);
}

TEST(Interpolate, ShapeMismatchThrows) {
    EXPECT_THROW(interpolate(LatentState({1.0}), LatentState({1.0, 2.0}), FlowTime(0.5)), ShapeError);
}

TEST(Interpolate, StaysBetweenEndpoints) {
    Rng rng(11);
    for (int k = 0; k < 200; ++k) {
        const auto z0 = random_state(rng, 6), z1 = random_state(rng, 6);
        const auto zt = interpolate(z0, z1, FlowTime(rng.uniform()));
        for (std::size_t i = 0; i < 6; ++i) {
            const double lo = std::min(z0.values()[i], z1.values()[i]);
            const double hi = std::max(z0.values()[i], z1.values()[i]);
            EXPECT_GE(zt.values()[i], lo - 1e-15);
            EXPECT_LE(zt.values()[i], hi + 1e-15);
        }
    }
}

TEST(FlowMatchingLoss, Examples) {
    const LatentState z0({0.0}), z1({2.0});
    EXPECT_DOUBLE_EQ(flow_matching_loss(std::vector<double>{0.0}, z0, z1), 4.0);
    EXPECT_DOUBLE_EQ(flow_matching_loss(std::vector<double>{2.0}, z0, z1), 0.0);
}

TEST(FlowMatchingLoss, MatchesElementLoop) {
    Rng rng(3);
    for (int k = 0; k < 20; ++k) {
        const auto z0 = random_state(rng, 9), z1 = random_state(rng, 9);
        std::vector<double> v(9);
        rng.fill_normal(v);
        double naive = 0.0;
        for (std::size_t i = 0; i < 9; ++i) {
            const double e = (z1.values()[i] - z0.values()[i]) - v[i];
            naive += e * e;
        }
        naive /= 9.0;
        EXPECT_NEAR(flow_matching_loss(v, z0, z1), naive, 1e-12);
        EXPECT_GE(flow_matching_loss(v, z0, z1), 0.0);
    }
}

TEST(PredictData, Examples) {
    const auto z = predict_data(LatentState({1.0, 2.0}), FlowTime(0.5), std::vector<double>{2.0, 2.0});
    EXPECT_DOUBLE_EQ(z.values()[0], 0.0);
    EXPECT_DOUBLE_EQ(z.values()[1], 1.0);
    const LatentState zt({0.3, -0.7});
    EXPECT_EQ(predict_data(zt, FlowTime(0.0), std::vector<double>{5.0, 5.0}), zt);
    EXPECT_EQ(predict_noise(zt, FlowTime(1.0), std::vector<double>{5.0, 5.0}), zt);
}

TEST(PredictDataNoise, ExactVelocityRecoversEndpoints) {
    Rng rng(5);
    for (int k = 0; k < 100; ++k) {
        const auto z0 = random_state(rng, 5), z1 = random_state(rng, 5);
        const FlowTime t(rng.uniform());
        const auto zt = interpolate(z0, z1, t);
        const auto v = diff(z1, z0);
        const auto d0 = predict_data(zt, t, v), d1 = predict_noise(zt, t, v);
        for (std::size_t i = 0; i < 5; ++i) {
            EXPECT_NEAR(d0.values()[i], z0.values()[i], 1e-12);
            EXPECT_NEAR(d1.values()[i], z1.values()[i], 1e-12);
        }
    }
}

TEST(PredictDataNoise, RecombineToState) {
    Rng rng(8);
    for (int k = 0; k < 100; ++k) {
        const auto zt = random_state(rng, 4);
        std::vector<double> v(4);
        rng.fill_normal(v);
        const FlowTime t(rng.uniform());
        const auto d0 = predict_data(zt, t, v), d1 = predict_noise(zt, t, v);
        for (std::size_t i = 0; i < 4; ++i) {
            EXPECT_NEAR((1.0 - t) * d0.values()[i] + t * d1.values()[i], zt.values()[i], 1e-12);
        }
    }
}

TEST(EulerStep, Examples) {
    const LatentState zt({1.0, 2.0});
    EXPECT_EQ(euler_step(zt, FlowTime(0.5), 0.0, std::vector<double>{3.0, 3.0}), zt);
    Rng rng(2);
    const auto z0 = random_state(rng, 3), z1 = random_state(rng, 3);
    const auto back = euler_step(z1, FlowTime(1.0), 1.0, diff(z1, z0));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(back.values()[i], z0.values()[i], 1e-14);
}

TEST(EulerStep, RejectsBadStep) {
    const LatentState zt({1.0});
    EXPECT_THROW(euler_step(zt, FlowTime(0.3), 0.5, std::vector<double>{1.0}), ConfigError);
    EXPECT_THROW(euler_step(zt, FlowTime(0.3), -0.1, std::vector<double>{1.0}), ConfigError);
}

TEST(LatentState, RejectsNonFinite) {
    EXPECT_THROW(LatentState(std::vector<double>{1.0, std::nan("")}), NumericError);
}
