/// @file rewards.hpp
/// @brief Composite reward: judge scores for lip-sync, expressiveness and
/// motion, a channel-normalized perceptual frame distance against the
/// reference video, and an optical-flow jitter penalty. Each component is
/// standardized within the update batch before the weighted sum
///
///     R = R~_mllm + lambda1 R~_perceptual + lambda2 R~_consistency.

#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flowrl/array.hpp"
#include "flowrl/flow_core.hpp"
#include "flowrl/judge.hpp"
#include "flowrl/video.hpp"

namespace flowrl {

/// Displacement field, shape [2, H, W]; channel 0 horizontal, 1 vertical.
struct FlowField {
    NumericArray u;

    std::size_t height() const { return u.dim(1); }
    std::size_t width() const { return u.dim(2); }
    std::span<const double> horizontal() const { return u.values().subspan(0, height() * width()); }
    std::span<const double> vertical() const {
        return u.values().subspan(height() * width(), height() * width());
    }
};

// --- judge scores ----------------------------------------------------------

struct JudgeVerdict {
    Aspect aspect = Aspect::lipsync;
    int score = 0;
    std::string raw_response;
};

/// Sends the aspect prompt with the encoded video and parses the reply,
/// re-asking up to policy.max_attempts times when the reply is unparsable.
JudgeVerdict judge_score(const VideoTensor& video, Aspect aspect, JudgeClient& client,
                         const Condition* condition = nullptr, const RetryPolicy& policy = {});

/// (lip + expr + motion) / 3; each must lie in [1,5].
double aggregate_mllm(double lip, double expr, double motion);

struct AspectScores {
    double lipsync = 0.0;
    double expressive = 0.0;
    double motion = 0.0;
    bool degenerate = false;  ///< a judge fell back to a neutral score
};

/// Source of the three aspect scores for a generated video.
class AspectJudge {
public:
    virtual ~AspectJudge() = default;
    virtual AspectScores score(const VideoTensor& video, const Condition& condition) const = 0;
};

/// Scores each aspect with a separate judge_score request (integer scores).
class ClientAspectJudge final : public AspectJudge {
public:
    ClientAspectJudge(JudgeClient& client, RetryPolicy policy = {})
        : client_(&client), policy_(policy) {}
    AspectScores score(const VideoTensor& video, const Condition& condition) const override;

private:
    JudgeClient* client_;
    RetryPolicy policy_;
};

// --- perceptual distance ---------------------------------------------------

/// One feature layer, shape [C, H_l, W_l].
struct FeatureMap {
    NumericArray values;
    std::size_t channels() const { return values.dim(0); }
    std::size_t height() const { return values.dim(1); }
    std::size_t width() const { return values.dim(2); }
};

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::vector<FeatureMap> extract(const FrameView& frame) const = 0;
    /// Channels produced at each layer.
    virtual std::vector<std::size_t> layer_channels() const = 0;
};

/// Image pyramid whose every level carries [intensity, Sobel gradient
/// magnitude]; level l + 1 is a 2x2 average pool of level l.
class PyramidExtractor final : public FeatureExtractor {
public:
    explicit PyramidExtractor(std::size_t levels = 2) : levels_(levels) {}
    std::vector<FeatureMap> extract(const FrameView& frame) const override;
    std::vector<std::size_t> layer_channels() const override;

private:
    std::size_t levels_;
};

struct PerceptualConfig {
    bool normalize_channels = true;
    double normalize_eps = 1e-10;
};

/// Unit weight for every channel of every layer.
std::vector<std::vector<double>> unit_weights(const FeatureExtractor& extractor);

/// sum_l 1/(H_l W_l) sum_{h,w} || w_l * (y_a - y_b) ||^2 over channel-normalized features.
double perceptual_distance(const FrameView& a, const FrameView& b, const FeatureExtractor& extractor,
                           const std::vector<std::vector<double>>& weights,
                           const PerceptualConfig& cfg = {});

/// Same as perceptual_distance, on already extracted features.
double feature_distance(const std::vector<FeatureMap>& fa, const std::vector<FeatureMap>& fb,
                        const std::vector<std::vector<double>>& weights,
                        const PerceptualConfig& cfg = {});

/// -(1/T) sum_t d(gen_t, ref_t)
double perceptual_reward(const VideoTensor& gen, const VideoTensor& ref,
                         const FeatureExtractor& extractor,
                         const std::vector<std::vector<double>>& weights,
                         const PerceptualConfig& cfg = {});

// --- optical flow and jitter -------------------------------------------------

struct FlowConfig {
    double alpha = 10.0;             ///< smoothness weight
    int iterations = 100;
    double intensity_scale = 255.0;  ///< frames are rescaled from [0,1] before solving
    double tolerance = 1e-3;         ///< max per-pixel update at the last sweep, in pixels
    bool periodic = false;           ///< wrap-around instead of replicated borders
    bool warn_on_nonconvergence = true;

    void validate() const;
};

struct FlowEstimate {
    FlowField field;
    std::vector<double> energy;          ///< Horn-Schunck energy after each sweep
    std::vector<double> data_residual;   ///< brightness-constancy term after each sweep
    /// Largest per-pixel Euclidean change of (u, v) at each sweep. Each Jacobi
    /// update is a convex neighbour average followed by a non-expansive
    /// projection, so this sequence never increases.
    std::vector<double> update_norm;
    int best_iteration = 0;
    double final_update = 0.0;
    bool converged = false;
};

/// Horn-Schunck flow from @p a to @p b via Jacobi sweeps; returns the
/// lowest-energy iterate.
FlowEstimate estimate_flow(const FrameView& a, const FrameView& b, const FlowConfig& cfg = {});

/// Flows between consecutive frames (T - 1 fields).
std::vector<FlowField> video_flows(const VideoTensor& video, const FlowConfig& cfg = {},
                                   int* nonconverged = nullptr);

/// Spatial mean of ||u_next - u_t|| / (||u_t|| + eps), norms per pixel.
double jitter(const FlowField& u_t, const FlowField& u_next, double eps);

/// -(1/(F-1)) sum of jitter over consecutive flow pairs, F = flows.size() >= 2.
double consistency_reward(std::span<const FlowField> flows, double eps);

// --- composition -------------------------------------------------------------

/// (x - mean) / max(population std, floor)
std::vector<double> normalize_batch(std::span<const double> values, double floor);

/// r_mllm + lambda1 r_perc + lambda2 r_cons
double compose(double r_mllm, double r_perc, double r_cons, double lambda1, double lambda2);

enum class RewardKind {
    composite,
    mllm,
    perceptual,
    consistency,
    perceptual_consistency,
    lipsync,
    expressive,
    motion,
};

std::string_view to_string(RewardKind k);
RewardKind parse_reward_kind(std::string_view s);

enum class NormalizationScope { batch, group };

struct RewardConfig {
    double lambda1 = 0.2;
    double lambda2 = 0.2;
    double jitter_eps = 1e-3;
    double normalize_floor = 1e-6;
    RewardKind kind = RewardKind::composite;
    NormalizationScope scope = NormalizationScope::batch;
    FlowConfig flow;
    PerceptualConfig perceptual;

    void validate() const;
};

struct RewardBreakdown {
    double judge_lipsync = 0.0;
    double judge_expressive = 0.0;
    double judge_motion = 0.0;
    double r_mllm = 0.0;
    double r_perceptual = 0.0;
    double r_consistency = 0.0;
    double n_mllm = 0.0;
    double n_perceptual = 0.0;
    double n_consistency = 0.0;
    double composite = 0.0;
    double reward = 0.0;  ///< the value selected by RewardConfig::kind
    bool judge_degenerate = false;
};

struct ScoringItem {
    const VideoTensor* generated = nullptr;
    const VideoTensor* reference = nullptr;
    const Condition* condition = nullptr;
};

class RewardSystem {
public:
    RewardSystem(RewardConfig cfg, const AspectJudge& judge,
                 std::shared_ptr<const FeatureExtractor> extractor = nullptr);

    const RewardConfig& config() const noexcept { return cfg_; }

    /// Raw (unnormalized) components for one video.
    RewardBreakdown score_raw(const ScoringItem& item) const;

    /// Raw components for every item, then batch (or per-group) normalization
    /// and composition. Needs at least two items.
    std::vector<RewardBreakdown> score_batch(std::span<const ScoringItem> items,
                                             std::size_t group_size = 0) const;

    /// Normalizes and composes already-scored raw breakdowns in place.
    void finalize(std::span<RewardBreakdown> rewards, std::size_t group_size = 0) const;

private:
    RewardConfig cfg_;
    const AspectJudge* judge_;
    std::shared_ptr<const FeatureExtractor> extractor_;
    std::vector<std::vector<double>> weights_;
};

}  // namespace flowrl
