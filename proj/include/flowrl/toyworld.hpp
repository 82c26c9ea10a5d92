/// @file toyworld.hpp
/// @brief Synthetic signal-driven video domain: a Gaussian dot whose vertical
/// position follows a smooth scalar "audio" signal, a trivial frame codec,
/// dot-position read-out and deterministic mock judges built on it.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "flowrl/flow_core.hpp"
#include "flowrl/judge.hpp"
#include "flowrl/rewards.hpp"
#include "flowrl/rng.hpp"
#include "flowrl/video.hpp"

namespace flowrl {

enum class Codec { identity, pool2 };

std::string_view to_string(Codec c);
Codec parse_codec(std::string_view s);

struct ToyConfig {
    int frame_size = 16;  ///< H == W
    int num_frames = 8;   ///< T
    double blob_sigma = 1.5;
    double amplitude = 0.5;
    std::uint64_t seed = 0;
    Codec codec = Codec::identity;

    void validate() const;
    std::size_t frame_pixels() const;
    std::size_t latent_dim() const;
};

void to_json(nlohmann::json& j, const ToyConfig& c);
/// Strict: unknown keys raise ConfigError.
void from_json(const nlohmann::json& j, ToyConfig& c);

struct ToySample {
    std::uint64_t id = 0;
    Condition condition;  ///< signal [T], reference = first frame [H*W]
    VideoTensor video;
    LatentState latent;
};

/// 3-tap moving average of white noise, affinely rescaled to span [-1, 1].
NumericArray smooth_signal(int length, Rng& rng);

/// Renders the dot for each signal value; frames are rounded through float32
/// so they survive the on-disk format bit for bit.
VideoTensor render_video(std::span<const double> signal, const ToyConfig& cfg);

/// Condition, video and latent for a given signal.
ToySample make_sample(std::span<const double> signal, const ToyConfig& cfg, std::uint64_t id = 0);

/// Sample @p id of the dataset defined by cfg.seed (independent stream per id).
ToySample generate_sample(const ToyConfig& cfg, std::uint64_t id);
ToySample generate_sample(const ToyConfig& cfg, Rng& rng, std::uint64_t id = 0);

LatentState encode(const VideoTensor& video, const ToyConfig& cfg);
/// Inverse of encode; values are clamped to [0, 1].
VideoTensor decode(std::span<const double> latent, const ToyConfig& cfg);

/// Per-frame intensity-weighted vertical centroid, mapped so that the frame
/// centre is 0 and the frame edges are -1 / +1. Throws NumericError on an
/// all-zero frame.
NumericArray extract_position(const VideoTensor& video);

struct MockJudgeConstants {
    double lip_offset = 3.0;
    double lip_slope = 2.0;
    double expr_offset = 1.0;
    double expr_slope = 4.0;
    double motion_scale = 1.0;   ///< score = 5 - motion_scale * mean |second difference|
};

struct MockScores {
    double lipsync = 3.0;
    double expressive = 1.0;
    double motion = 5.0;
    bool degenerate = false;  ///< correlation or range undefined; neutral fallback used
};

/// lip    = 3 + 2 corr(position, signal)
/// expr   = 1 + 4 range(position) / range(amplitude * signal)
/// motion = 5 - k mean |position[t+1] - 2 position[t] + position[t-1]|
/// each clamped to [1, 5].
MockScores mock_judges(const VideoTensor& video, const Condition& condition, const ToyConfig& cfg,
                       const MockJudgeConstants& k = {});

/// Same formulas applied to an already extracted position track.
MockScores mock_scores_from_position(std::span<const double> position, std::span<const double> signal,
                                     double amplitude, const MockJudgeConstants& k = {});

/// AspectJudge returning the continuous mock scores.
class MockToyJudge final : public AspectJudge {
public:
    MockToyJudge(ToyConfig cfg, MockJudgeConstants k = {}) : cfg_(cfg), k_(k) {}
    AspectScores score(const VideoTensor& video, const Condition& condition) const override;

private:
    ToyConfig cfg_;
    MockJudgeConstants k_;
};

/// JudgeClient speaking the reply protocol; scores are the mock scores
/// rounded to the nearest integer. Needs request.video and request.condition.
class MockToyJudgeClient final : public JudgeClient {
public:
    MockToyJudgeClient(ToyConfig cfg, MockJudgeConstants k = {}) : cfg_(cfg), k_(k) {}
    std::string complete(const JudgeRequest& request) override;

private:
    ToyConfig cfg_;
    MockJudgeConstants k_;
};

// --- dataset files ---------------------------------------------------------

/// One file per sample: a JSON header line, then little-endian float32 signal
/// [T] followed by frames [T, H, W].
void write_sample(const std::filesystem::path& path, const ToySample& sample, const ToyConfig& cfg);
ToySample read_sample(const std::filesystem::path& path, ToyConfig* cfg_out = nullptr);

/// Writes samples 0..count-1 as sample_00000.bin, ...; returns the file paths.
std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& dir, const ToyConfig& cfg,
                                                 std::size_t count);
/// Reads every sample_*.bin in @p dir in name order.
std::vector<ToySample> read_dataset(const std::filesystem::path& dir, ToyConfig* cfg_out = nullptr);

/// Binary PGM (P5) of one frame.
void write_pgm(const std::filesystem::path& path, const FrameView& frame);

}  // namespace flowrl
