#include "flowrl/kernels.hpp"

#include <cmath>
#include <cstdint>

namespace flowrl::kernels {
namespace {

inline double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline std::size_t wrap(std::int64_t i, std::size_t n, bool periodic) {
    const auto sn = static_cast<std::int64_t>(n);
    if (periodic) return static_cast<std::size_t>(((i % sn) + sn) % sn);
    if (i < 0) return 0;
    if (i >= sn) return n - 1;
    return static_cast<std::size_t>(i);
}

// Horn-Schunck neighbourhood average: 1/6 on the 4-neighbours, 1/12 on the diagonals.
inline double neighbour_mean(std::span<const double> f, std::size_t r, std::size_t c,
                             std::size_t h, std::size_t w, bool periodic) {
    const auto ri = static_cast<std::int64_t>(r);
    const auto ci = static_cast<std::int64_t>(c);
    auto at = [&](std::int64_t dr, std::int64_t dc) {
        return f[wrap(ri + dr, h, periodic) * w + wrap(ci + dc, w, periodic)];
    };
    const double edge = at(-1, 0) + at(1, 0) + at(0, -1) + at(0, 1);
    const double corner = at(-1, -1) + at(-1, 1) + at(1, -1) + at(1, 1);
    return edge / 6.0 + corner / 12.0;
}

inline void flow_pixel(const FlowSweepInput& in, std::size_t r, std::size_t c,
                       std::span<double> u_out, std::span<double> v_out) {
    const std::size_t k = r * in.width + c;
    const double ubar = neighbour_mean(in.u, r, c, in.height, in.width, in.periodic);
    const double vbar = neighbour_mean(in.v, r, c, in.height, in.width, in.periodic);
    const double ix = in.ix[k], iy = in.iy[k];
    const double common = (ix * ubar + iy * vbar + in.it[k]) / (in.alpha_sq + ix * ix + iy * iy);
    u_out[k] = ubar - ix * common;
    v_out[k] = vbar - iy * common;
}

inline double ssim_window(std::span<const double> a, std::span<const double> b, std::size_t width,
                          std::size_t r0, std::size_t c0, std::size_t win, double c1, double c2,
                          bool sample_covariance) {
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    for (std::size_t r = r0; r < r0 + win; ++r) {
        for (std::size_t c = c0; c < c0 + win; ++c) {
            const double x = a[r * width + c];
            const double y = b[r * width + c];
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
        }
    }
    const double n = static_cast<double>(win * win);
    const double mu_a = sa / n, mu_b = sb / n;
    const double norm = sample_covariance ? n / (n - 1.0) : 1.0;
    const double var_a = norm * (saa / n - mu_a * mu_a);
    const double var_b = norm * (sbb / n - mu_b * mu_b);
    const double cov = norm * (sab / n - mu_a * mu_b);
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
           ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

inline double sq_diff_row(std::span<const double> fa, std::span<const double> fb,
                          std::span<const double> weights, std::size_t channels,
                          std::size_t height, std::size_t width, std::size_t r) {
    const std::size_t plane = height * width;
    double s = 0.0;
    for (std::size_t c = 0; c < width; ++c) {
        for (std::size_t ch = 0; ch < channels; ++ch) {
            const std::size_t k = ch * plane + r * width + c;
            const double d = weights[ch] * (fa[k] - fb[k]);
            s += d * d;
        }
    }
    return s;
}

}  // namespace

namespace serial {

void dense_forward(const DenseView& layer, std::span<const double> x, std::size_t batch,
                   std::span<double> y) {
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < layer.out; ++o) {
            y[b * layer.out + o] =
                layer.bias[o] + dot(&layer.weight[o * layer.in], &x[b * layer.in], layer.in);
        }
    }
}

void dense_backward(const DenseView& layer, std::span<const double> x, std::span<const double> dy,
                    std::size_t batch, std::span<double> dw, std::span<double> db,
                    std::span<double> dx) {
    for (std::size_t o = 0; o < layer.out; ++o) {
        double* row = &dw[o * layer.in];
        for (std::size_t b = 0; b < batch; ++b) {
            const double g = dy[b * layer.out + o];
            if (g == 0.0) continue;
            const double* xb = &x[b * layer.in];
            for (std::size_t i = 0; i < layer.in; ++i) row[i] += g * xb[i];
            db[o] += g;
        }
    }
    if (dx.empty()) return;
    for (std::size_t b = 0; b < batch; ++b) {
        double* out = &dx[b * layer.in];
        for (std::size_t i = 0; i < layer.in; ++i) out[i] = 0.0;
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double g = dy[b * layer.out + o];
            if (g == 0.0) continue;
            const double* wrow = &layer.weight[o * layer.in];
            for (std::size_t i = 0; i < layer.in; ++i) out[i] += g * wrow[i];
        }
    }
}

void flow_sweep(const FlowSweepInput& in, std::span<double> u_out, std::span<double> v_out) {
    for (std::size_t r = 0; r < in.height; ++r) {
        for (std::size_t c = 0; c < in.width; ++c) flow_pixel(in, r, c, u_out, v_out);
    }
}

void ssim_map(std::span<const double> a, std::span<const double> b, std::size_t height,
              std::size_t width, std::size_t win, double c1, double c2, bool sample_covariance,
              std::span<double> out) {
    const std::size_t oh = height - win + 1, ow = width - win + 1;
    for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t c = 0; c < ow; ++c) {
            out[r * ow + c] = ssim_window(a, b, width, r, c, win, c1, c2, sample_covariance);
        }
    }
}

void weighted_sq_diff_rows(std::span<const double> fa, std::span<const double> fb,
                           std::span<const double> weights, std::size_t channels,
                           std::size_t height, std::size_t width, std::span<double> row_sums) {
    for (std::size_t r = 0; r < height; ++r) {
        row_sums[r] = sq_diff_row(fa, fb, weights, channels, height, width, r);
    }
}

}  // namespace serial

namespace omp {

void dense_forward(const DenseView& layer, std::span<const double> x, std::size_t batch,
                   std::span<double> y) {
    const auto n = static_cast<std::int64_t>(batch * layer.out);
#pragma omp parallel for schedule(static) if (n * static_cast<std::int64_t>(layer.in) > 32768)
    for (std::int64_t k = 0; k < n; ++k) {
        const std::size_t b = static_cast<std::size_t>(k) / layer.out;
        const std::size_t o = static_cast<std::size_t>(k) % layer.out;
        y[b * layer.out + o] =
            layer.bias[o] + dot(&layer.weight[o * layer.in], &x[b * layer.in], layer.in);
    }
}

void dense_backward(const DenseView& layer, std::span<const double> x, std::span<const double> dy,
                    std::size_t batch, std::span<double> dw, std::span<double> db,
                    std::span<double> dx) {
    const auto outs = static_cast<std::int64_t>(layer.out);
#pragma omp parallel for schedule(static)
    for (std::int64_t oi = 0; oi < outs; ++oi) {
        const auto o = static_cast<std::size_t>(oi);
        double* row = &dw[o * layer.in];
        for (std::size_t b = 0; b < batch; ++b) {
            const double g = dy[b * layer.out + o];
            if (g == 0.0) continue;
            const double* xb = &x[b * layer.in];
            for (std::size_t i = 0; i < layer.in; ++i) row[i] += g * xb[i];
            db[o] += g;
        }
    }
    if (dx.empty()) return;
    const auto batches = static_cast<std::int64_t>(batch);
#pragma omp parallel for schedule(static)
    for (std::int64_t bi = 0; bi < batches; ++bi) {
        const auto b = static_cast<std::size_t>(bi);
        double* out = &dx[b * layer.in];
        for (std::size_t i = 0; i < layer.in; ++i) out[i] = 0.0;
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double g = dy[b * layer.out + o];
            if (g == 0.0) continue;
            const double* wrow = &layer.weight[o * layer.in];
            for (std::size_t i = 0; i < layer.in; ++i) out[i] += g * wrow[i];
        }
    }
}

void flow_sweep(const FlowSweepInput& in, std::span<double> u_out, std::span<double> v_out) {
    const auto rows = static_cast<std::int64_t>(in.height);
#pragma omp parallel for schedule(static) if (in.height * in.width > 4096)
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < in.width; ++c) {
            flow_pixel(in, static_cast<std::size_t>(r), c, u_out, v_out);
        }
    }
}

void ssim_map(std::span<const double> a, std::span<const double> b, std::size_t height,
              std::size_t width, std::size_t win, double c1, double c2, bool sample_covariance,
              std::span<double> out) {
    const std::size_t oh = height - win + 1, ow = width - win + 1;
    const auto rows = static_cast<std::int64_t>(oh);
#pragma omp parallel for schedule(static) if (oh * ow > 1024)
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < ow; ++c) {
            out[static_cast<std::size_t>(r) * ow + c] = ssim_window(
                a, b, width, static_cast<std::size_t>(r), c, win, c1, c2, sample_covariance);
        }
    }
}

void weighted_sq_diff_rows(std::span<const double> fa, std::span<const double> fb,
                           std::span<const double> weights, std::size_t channels,
                           std::size_t height, std::size_t width, std::span<double> row_sums) {
    const auto rows = static_cast<std::int64_t>(height);
#pragma omp parallel for schedule(static) if (height * width * channels > 16384)
    for (std::int64_t r = 0; r < rows; ++r) {
        row_sums[static_cast<std::size_t>(r)] =
            sq_diff_row(fa, fb, weights, channels, height, width, static_cast<std::size_t>(r));
    }
}

}  // namespace omp
}  // namespace flowrl::kernels
