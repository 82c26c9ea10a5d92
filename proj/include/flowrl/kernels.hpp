/// @file kernels.hpp
/// @brief Data-parallel inner loops.
///
/// Each kernel exists twice: `serial::` is the plain reference loop and
/// `omp::` is the OpenMP version used by the library. Both visit every
/// reduction in the same order, so their results are bitwise identical and
/// independent of the thread count; tests/kernels_test.cpp checks this and
/// bench/ compares their speed.

#pragma once

#include <cstddef>
#include <span>

namespace flowrl::kernels {

/// Row-major weight [out, in] and bias [out] of an affine layer.
struct DenseView {
    std::span<const double> weight;
    std::span<const double> bias;
    std::size_t out = 0;
    std::size_t in = 0;
};

/// Image gradients and current flow estimate for one Horn-Schunck sweep.
struct FlowSweepInput {
    std::span<const double> ix, iy, it;
    std::span<const double> u, v;
    std::size_t height = 0, width = 0;
    double alpha_sq = 1.0;
    bool periodic = false;
};

namespace serial {

/// y[b, o] = bias[o] + sum_i W[o, i] x[b, i]
void dense_forward(const DenseView& layer, std::span<const double> x, std::size_t batch,
                   std::span<double> y);

/// Accumulates dW += dy^T x and db += colsum(dy); writes dx = dy W when dx is non-empty.
void dense_backward(const DenseView& layer, std::span<const double> x, std::span<const double> dy,
                    std::size_t batch, std::span<double> dw, std::span<double> db,
                    std::span<double> dx);

/// One Jacobi update of the Horn-Schunck flow.
void flow_sweep(const FlowSweepInput& in, std::span<double> u_out, std::span<double> v_out);

/// Local SSIM for every fully contained win x win window (row-major over window origins).
void ssim_map(std::span<const double> a, std::span<const double> b, std::size_t height,
              std::size_t width, std::size_t win, double c1, double c2, bool sample_covariance,
              std::span<double> out);

/// Per-row sums of squared weighted differences between two [C, H, W] feature maps.
void weighted_sq_diff_rows(std::span<const double> fa, std::span<const double> fb,
                           std::span<const double> weights, std::size_t channels,
                           std::size_t height, std::size_t width, std::span<double> row_sums);

}  // namespace serial

namespace omp {

void dense_forward(const DenseView& layer, std::span<const double> x, std::size_t batch,
                   std::span<double> y);
void dense_backward(const DenseView& layer, std::span<const double> x, std::span<const double> dy,
                    std::size_t batch, std::span<double> dw, std::span<double> db,
                    std::span<double> dx);
void flow_sweep(const FlowSweepInput& in, std::span<double> u_out, std::span<double> v_out);
void ssim_map(std::span<const double> a, std::span<const double> b, std::size_t height,
              std::size_t width, std::size_t win, double c1, double c2, bool sample_covariance,
              std::span<double> out);
void weighted_sq_diff_rows(std::span<const double> fa, std::span<const double> fb,
                           std::span<const double> weights, std::size_t channels,
                           std::size_t height, std::size_t width, std::span<double> row_sums);

}  // namespace omp

}  // namespace flowrl::kernels
