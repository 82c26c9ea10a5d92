#include "flowrl/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <string>

#include <spdlog/spdlog.h>

#include "flowrl/encoding.hpp"
#include "flowrl/errors.hpp"
#include "flowrl/kernels.hpp"

namespace flowrl {

// --- judge scores ----------------------------------------------------------

JudgeVerdict judge_score(const VideoTensor& video, Aspect aspect, JudgeClient& client,
                         const Condition* condition, const RetryPolicy& policy) {
    JudgeRequest req;
    req.prompt = aspect_prompt(aspect);
    req.aspect = std::string(to_string(aspect));
    req.video_b64 = base64_encode(encode_video_zip(video));
    req.video = &video;
    req.condition = condition;

    const int attempts = std::max(1, policy.max_attempts);
    for (int attempt = 1;; ++attempt) {
        std::string reply = client.complete(req);
        try {
            const int score = parse_judge_score(reply);
            return {aspect, score, std::move(reply)};
        } catch (const JudgeError& e) {
            if (attempt >= attempts) throw;
            spdlog::warn("unparsable {} judge reply (attempt {}/{}): {}", req.aspect, attempt, attempts,
                         e.what());
        }
    }
}

double aggregate_mllm(double lip, double expr, double motion) {
    for (double s : {lip, expr, motion}) {
        if (!(s >= 1.0 && s <= 5.0)) throw NumericError("judge score " + std::to_string(s) + " outside [1,5]");
    }
    return (lip + expr + motion) / 3.0;
}

AspectScores ClientAspectJudge::score(const VideoTensor& video, const Condition& condition) const {
    AspectScores s;
    s.lipsync = judge_score(video, Aspect::lipsync, *client_, &condition, policy_).score;
    s.expressive = judge_score(video, Aspect::expressive, *client_, &condition, policy_).score;
    s.motion = judge_score(video, Aspect::motion, *client_, &condition, policy_).score;
    return s;
}

// --- perceptual distance ---------------------------------------------------

namespace {

// Replicated-border pixel access.
inline double px(std::span<const double> img, std::int64_t r, std::int64_t c, std::size_t h, std::size_t w) {
    r = std::clamp<std::int64_t>(r, 0, static_cast<std::int64_t>(h) - 1);
    c = std::clamp<std::int64_t>(c, 0, static_cast<std::int64_t>(w) - 1);
    return img[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)];
}

FeatureMap intensity_and_gradient(std::span<const double> img, std::size_t h, std::size_t w) {
    FeatureMap fm{NumericArray({2, h, w})};
    auto out = fm.values.values();
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const auto ri = static_cast<std::int64_t>(r), ci = static_cast<std::int64_t>(c);
            auto p = [&](std::int64_t dr, std::int64_t dc) { return px(img, ri + dr, ci + dc, h, w); };
            const double gx = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
            const double gy = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            out[r * w + c] = img[r * w + c];
            out[h * w + r * w + c] = std::sqrt(gx * gx + gy * gy) / 8.0;
        }
    }
    return fm;
}

std::vector<double> pool2(std::span<const double> img, std::size_t h, std::size_t w) {
    const std::size_t oh = h / 2, ow = w / 2;
    std::vector<double> out(oh * ow);
    for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t c = 0; c < ow; ++c) {
            out[r * ow + c] = 0.25 * (img[2 * r * w + 2 * c] + img[2 * r * w + 2 * c + 1] +
                                      img[(2 * r + 1) * w + 2 * c] + img[(2 * r + 1) * w + 2 * c + 1]);
        }
    }
    return out;
}

// Divides each spatial site's channel vector by its L2 norm (+ eps).
std::vector<double> channel_normalized(const FeatureMap& fm, double eps) {
    const std::size_t ch = fm.channels(), plane = fm.height() * fm.width();
    const auto in = fm.values.values();
    std::vector<double> out(in.begin(), in.end());
    for (std::size_t k = 0; k < plane; ++k) {
        double sq = 0.0;
        for (std::size_t c = 0; c < ch; ++c) sq += in[c * plane + k] * in[c * plane + k];
        const double inv = 1.0 / (std::sqrt(sq) + eps);
        for (std::size_t c = 0; c < ch; ++c) out[c * plane + k] *= inv;
    }
    return out;
}

}  // namespace

std::vector<FeatureMap> PyramidExtractor::extract(const FrameView& frame) const {
    if (frame.pixels.size() != frame.height * frame.width) throw ShapeError("frame view size mismatch");
    std::vector<FeatureMap> layers;
    std::vector<double> level(frame.pixels.begin(), frame.pixels.end());
    std::size_t h = frame.height, w = frame.width;
    for (std::size_t l = 0; l < levels_; ++l) {
        if (h == 0 || w == 0) throw ShapeError("frame too small for the feature pyramid");
        layers.push_back(intensity_and_gradient(level, h, w));
        if (l + 1 < levels_) {
            level = pool2(level, h, w);
            h /= 2;
            w /= 2;
        }
    }
    return layers;
}

std::vector<std::size_t> PyramidExtractor::layer_channels() const { return std::vector<std::size_t>(levels_, 2); }

std::vector<std::vector<double>> unit_weights(const FeatureExtractor& extractor) {
    std::vector<std::vector<double>> w;
    for (auto c : extractor.layer_channels()) w.emplace_back(c, 1.0);
    return w;
}

double feature_distance(const std::vector<FeatureMap>& fa, const std::vector<FeatureMap>& fb,
                        const std::vector<std::vector<double>>& weights, const PerceptualConfig& cfg) {
    if (fa.size() != fb.size() || fa.size() != weights.size()) {
        throw ShapeError("feature_distance: layer counts differ");
    }
    double total = 0.0;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        if (fa[l].values.shape() != fb[l].values.shape()) throw ShapeError("feature_distance: layer shapes differ");
        const std::size_t ch = fa[l].channels(), h = fa[l].height(), w = fa[l].width();
        require_same_size(weights[l].size(), ch, "feature_distance weights");
        std::vector<double> rows(h);
        if (cfg.normalize_channels) {
            const auto na = channel_normalized(fa[l], cfg.normalize_eps);
            const auto nb = channel_normalized(fb[l], cfg.normalize_eps);
            kernels::omp::weighted_sq_diff_rows(na, nb, weights[l], ch, h, w, rows);
        } else {
            kernels::omp::weighted_sq_diff_rows(fa[l].values.values(), fb[l].values.values(), weights[l], ch, h,
                                                w, rows);
        }
        double s = 0.0;
        for (double r : rows) s += r;
        total += s / static_cast<double>(h * w);
    }
    return total;
}

double perceptual_distance(const FrameView& a, const FrameView& b, const FeatureExtractor& extractor,
                           const std::vector<std::vector<double>>& weights, const PerceptualConfig& cfg) {
    if (a.height != b.height || a.width != b.width) throw ShapeError("perceptual_distance: frame sizes differ");
    return feature_distance(extractor.extract(a), extractor.extract(b), weights, cfg);
}

double perceptual_reward(const VideoTensor& gen, const VideoTensor& ref, const FeatureExtractor& extractor,
                         const std::vector<std::vector<double>>& weights, const PerceptualConfig& cfg) {
    if (gen.frames.shape() != ref.frames.shape()) {
        throw ShapeError("perceptual_reward: video shapes differ (" + gen.frames.shape_string() + " vs " +
                         ref.frames.shape_string() + ")");
    }
    const std::size_t t_count = gen.num_frames();
    double s = 0.0;
    for (std::size_t t = 0; t < t_count; ++t) {
        s += perceptual_distance(frame_view(gen, t), frame_view(ref, t), extractor, weights, cfg);
    }
    return -s / static_cast<double>(t_count);
}

// --- optical flow ----------------------------------------------------------

void FlowConfig::validate() const {
    if (!(alpha > 0.0)) throw ConfigError("flow alpha must be positive");
    if (iterations < 1) throw ConfigError("flow iterations must be >= 1");
    if (!(intensity_scale > 0.0)) throw ConfigError("flow intensity_scale must be positive");
    if (!(tolerance > 0.0)) throw ConfigError("flow tolerance must be positive");
}

namespace {

struct FlowGrid {
    std::size_t h, w;
    bool periodic;
    std::size_t idx(std::int64_t r, std::int64_t c) const {
        const auto sh = static_cast<std::int64_t>(h), sw = static_cast<std::int64_t>(w);
        if (periodic) {
            r = ((r % sh) + sh) % sh;
            c = ((c % sw) + sw) % sw;
        } else {
            r = std::clamp<std::int64_t>(r, 0, sh - 1);
            c = std::clamp<std::int64_t>(c, 0, sw - 1);
        }
        return static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c);
    }
};

// Data term and full Horn-Schunck energy with forward-difference smoothness.
std::pair<double, double> hs_energy(const FlowGrid& g, const std::vector<double>& ix, const std::vector<double>& iy,
                                    const std::vector<double>& it, const std::vector<double>& u,
                                    const std::vector<double>& v, double alpha_sq) {
    double data = 0.0, smooth = 0.0;
    for (std::size_t r = 0; r < g.h; ++r) {
        for (std::size_t c = 0; c < g.w; ++c) {
            const std::size_t k = r * g.w + c;
            const double e = ix[k] * u[k] + iy[k] * v[k] + it[k];
            data += e * e;
            const auto ri = static_cast<std::int64_t>(r), ci = static_cast<std::int64_t>(c);
            const std::size_t kr = g.idx(ri, ci + 1), kd = g.idx(ri + 1, ci);
            const double ux = u[kr] - u[k], uy = u[kd] - u[k], vx = v[kr] - v[k], vy = v[kd] - v[k];
            smooth += ux * ux + uy * uy + vx * vx + vy * vy;
        }
    }
    return {data, data + alpha_sq * smooth};
}

}  // namespace

FlowEstimate estimate_flow(const FrameView& a, const FrameView& b, const FlowConfig& cfg) {
    cfg.validate();
    if (a.height != b.height || a.width != b.width) throw ShapeError("estimate_flow: frame sizes differ");
    const std::size_t h = a.height, w = a.width, n = h * w;
    require_same_size(a.pixels.size(), n, "estimate_flow frame a");
    require_same_size(b.pixels.size(), n, "estimate_flow frame b");
    const FlowGrid g{h, w, cfg.periodic};

    std::vector<double> avg(n), ix(n), iy(n), it(n);
    for (std::size_t k = 0; k < n; ++k) {
        avg[k] = 0.5 * cfg.intensity_scale * (a.pixels[k] + b.pixels[k]);
        it[k] = cfg.intensity_scale * (b.pixels[k] - a.pixels[k]);
    }
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const auto ri = static_cast<std::int64_t>(r), ci = static_cast<std::int64_t>(c);
            ix[r * w + c] = 0.5 * (avg[g.idx(ri, ci + 1)] - avg[g.idx(ri, ci - 1)]);
            iy[r * w + c] = 0.5 * (avg[g.idx(ri + 1, ci)] - avg[g.idx(ri - 1, ci)]);
        }
    }

    const double alpha_sq = cfg.alpha * cfg.alpha;
    std::vector<double> u(n, 0.0), v(n, 0.0), un(n), vn(n);
    std::vector<double> best_u = u, best_v = v;
    FlowEstimate est;
    auto [data0, energy0] = hs_energy(g, ix, iy, it, u, v, alpha_sq);
    double best_energy = energy0;
    for (int k = 1; k <= cfg.iterations; ++k) {
        kernels::omp::flow_sweep({ix, iy, it, u, v, h, w, alpha_sq, cfg.periodic}, un, vn);
        double max_update = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            max_update = std::max(max_update, std::hypot(un[i] - u[i], vn[i] - v[i]));
        }
        u.swap(un);
        v.swap(vn);
        const auto [data, energy] = hs_energy(g, ix, iy, it, u, v, alpha_sq);
        est.data_residual.push_back(data);
        est.energy.push_back(energy);
        est.update_norm.push_back(max_update);
        est.final_update = max_update;
        if (energy <= best_energy) {
            best_energy = energy;
            best_u = u;
            best_v = v;
            est.best_iteration = k;
        }
    }
    est.converged = est.final_update <= cfg.tolerance;
    if (!est.converged && cfg.warn_on_nonconvergence) {
        spdlog::warn("Horn-Schunck did not converge in {} sweeps (last update {:.3g} px > {:.3g}); using sweep {}",
                     cfg.iterations, est.final_update, cfg.tolerance, est.best_iteration);
    }
    NumericArray field({2, h, w});
    std::copy(best_u.begin(), best_u.end(), field.values().begin());
    std::copy(best_v.begin(), best_v.end(), field.values().begin() + static_cast<std::ptrdiff_t>(n));
    est.field = FlowField{std::move(field)};
    return est;
}

std::vector<FlowField> video_flows(const VideoTensor& video, const FlowConfig& cfg, int* nonconverged) {
    std::vector<FlowField> flows;
    FlowConfig quiet = cfg;
    quiet.warn_on_nonconvergence = false;
    int misses = 0;
    for (std::size_t t = 0; t + 1 < video.num_frames(); ++t) {
        auto est = estimate_flow(frame_view(video, t), frame_view(video, t + 1), quiet);
        if (!est.converged) ++misses;
        flows.push_back(std::move(est.field));
    }
    if (misses > 0 && cfg.warn_on_nonconvergence) {
        spdlog::debug("Horn-Schunck: {} of {} frame pairs did not reach tolerance", misses, flows.size());
    }
    if (nonconverged) *nonconverged = misses;
    return flows;
}

double jitter(const FlowField& u_t, const FlowField& u_next, double eps) {
    if (!(eps > 0.0)) throw ConfigError("jitter eps must be positive");
    if (u_t.u.shape() != u_next.u.shape() || u_t.u.rank() != 3 || u_t.u.dim(0) != 2) {
        throw ShapeError("jitter: flow fields must share shape [2,H,W]");
    }
    const auto ax = u_t.horizontal(), ay = u_t.vertical();
    const auto bx = u_next.horizontal(), by = u_next.vertical();
    double s = 0.0;
    for (std::size_t k = 0; k < ax.size(); ++k) {
        const double dx = bx[k] - ax[k], dy = by[k] - ay[k];
        s += std::sqrt(dx * dx + dy * dy) / (std::sqrt(ax[k] * ax[k] + ay[k] * ay[k]) + eps);
    }
    return s / static_cast<double>(ax.size());
}

double consistency_reward(std::span<const FlowField> flows, double eps) {
    if (flows.size() < 2) throw ConfigError("consistency_reward needs at least 2 flow fields");
    double s = 0.0;
    for (std::size_t t = 0; t + 1 < flows.size(); ++t) s += jitter(flows[t], flows[t + 1], eps);
    return -s / static_cast<double>(flows.size() - 1);
}

// --- composition -------------------------------------------------------------

std::vector<double> normalize_batch(std::span<const double> values, double floor) {
    if (values.size() < 2) throw ConfigError("normalize_batch needs at least 2 values");
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double x : values) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : values) var += (x - mean) * (x - mean);
    const double sd = std::max(std::sqrt(var / n), floor);
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (values[i] - mean) / sd;
    return out;
}

double compose(double r_mllm, double r_perc, double r_cons, double lambda1, double lambda2) {
    return r_mllm + lambda1 * r_perc + lambda2 * r_cons;
}

std::string_view to_string(RewardKind k) {
    switch (k) {
        case RewardKind::composite: return "composite";
        case RewardKind::mllm: return "mllm";
        case RewardKind::perceptual: return "perceptual";
        case RewardKind::consistency: return "consistency";
        case RewardKind::perceptual_consistency: return "perceptual_consistency";
        case RewardKind::lipsync: return "lipsync";
        case RewardKind::expressive: return "expressive";
        case RewardKind::motion: return "motion";
    }
    return "?";
}

RewardKind parse_reward_kind(std::string_view s) {
    for (auto k : {RewardKind::composite, RewardKind::mllm, RewardKind::perceptual, RewardKind::consistency,
                   RewardKind::perceptual_consistency, RewardKind::lipsync, RewardKind::expressive,
                   RewardKind::motion}) {
        if (s == to_string(k)) return k;
    }
    throw ConfigError("unknown reward kind '" + std::string(s) + "'");
}

void RewardConfig::validate() const {
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("reward lambdas must be >= 0");
    if (!(jitter_eps > 0.0)) throw ConfigError("reward jitter_eps must be positive");
    if (!(normalize_floor > 0.0)) throw ConfigError("reward normalize_floor must be positive");
    flow.validate();
}

RewardSystem::RewardSystem(RewardConfig cfg, const AspectJudge& judge,
                           std::shared_ptr<const FeatureExtractor> extractor)
    : cfg_(std::move(cfg)), judge_(&judge), extractor_(std::move(extractor)) {
    cfg_.validate();
    if (!extractor_) extractor_ = std::make_shared<PyramidExtractor>();
    weights_ = unit_weights(*extractor_);
}

RewardBreakdown RewardSystem::score_raw(const ScoringItem& item) const {
    if (!item.generated || !item.reference || !item.condition) {
        throw ConfigError("scoring item needs a generated video, a reference video and a condition");
    }
    item.generated->validate();
    RewardBreakdown rb;
    const AspectScores s = judge_->score(*item.generated, *item.condition);
    rb.judge_lipsync = s.lipsync;
    rb.judge_expressive = s.expressive;
    rb.judge_motion = s.motion;
    rb.judge_degenerate = s.degenerate;
    rb.r_mllm = aggregate_mllm(s.lipsync, s.expressive, s.motion);
    rb.r_perceptual = perceptual_reward(*item.generated, *item.reference, *extractor_, weights_, cfg_.perceptual);
    const auto flows = video_flows(*item.generated, cfg_.flow);
    rb.r_consistency = consistency_reward(flows, cfg_.jitter_eps);
    return rb;
}

std::vector<RewardBreakdown> RewardSystem::score_batch(std::span<const ScoringItem> items,
                                                       std::size_t group_size) const {
    if (items.size() < 2) throw ConfigError("reward normalization needs a batch of at least 2 videos");
    std::vector<RewardBreakdown> out(items.size());
    std::exception_ptr failure;
    const auto n = static_cast<std::int64_t>(items.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            out[static_cast<std::size_t>(i)] = score_raw(items[static_cast<std::size_t>(i)]);
        } catch (...) {
#pragma omp critical(flowrl_reward_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    finalize(out, group_size);
    return out;
}

void RewardSystem::finalize(std::span<RewardBreakdown> rewards, std::size_t group_size) const {
    if (rewards.size() < 2) throw ConfigError("reward normalization needs a batch of at least 2 videos");
    std::size_t chunk = rewards.size();
    if (cfg_.scope == NormalizationScope::group) {
        if (group_size < 2 || rewards.size() % group_size != 0) {
            throw ConfigError("group-scoped reward normalization needs the batch to be whole groups of >= 2");
        }
        chunk = group_size;
    }
    const double floor = cfg_.normalize_floor;
    for (std::size_t start = 0; start < rewards.size(); start += chunk) {
        auto part = rewards.subspan(start, chunk);
        auto column = [&](auto field) {
            std::vector<double> v;
            for (const auto& r : part) v.push_back(r.*field);
            return normalize_batch(v, floor);
        };
        const auto nm = column(&RewardBreakdown::r_mllm);
        const auto np = column(&RewardBreakdown::r_perceptual);
        const auto nc = column(&RewardBreakdown::r_consistency);
        const auto nl = column(&RewardBreakdown::judge_lipsync);
        const auto ne = column(&RewardBreakdown::judge_expressive);
        const auto nmo = column(&RewardBreakdown::judge_motion);
        for (std::size_t i = 0; i < part.size(); ++i) {
            auto& r = part[i];
            r.n_mllm = nm[i];
            r.n_perceptual = np[i];
            r.n_consistency = nc[i];
            r.composite = compose(nm[i], np[i], nc[i], cfg_.lambda1, cfg_.lambda2);
            switch (cfg_.kind) {
                case RewardKind::composite: r.reward = r.composite; break;
                case RewardKind::mllm: r.reward = nm[i]; break;
                case RewardKind::perceptual: r.reward = np[i]; break;
                case RewardKind::consistency: r.reward = nc[i]; break;
                case RewardKind::perceptual_consistency: r.reward = np[i] + nc[i]; break;
                case RewardKind::lipsync: r.reward = nl[i]; break;
                case RewardKind::expressive: r.reward = ne[i]; break;
                case RewardKind::motion: r.reward = nmo[i]; break;
            }
        }
    }
}

}  // namespace flowrl
