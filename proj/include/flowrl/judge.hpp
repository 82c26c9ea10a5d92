/// @file judge.hpp
/// @brief Judge-model protocol: prompt templates, the HTTP endpoint client
/// and reply parsing.
///
/// Wire contract: POST JSON {"prompt", "video_b64", "aspect"} and receive
/// JSON {"text"}. A scoring reply carries free-form reasoning inside one
/// <think>...</think> block followed by a JSON object {"score": 1..5}.
/// Comparison replies end in {"choice": "first" | "second"}.

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "flowrl/flow_core.hpp"
#include "flowrl/video.hpp"

namespace flowrl {

enum class Aspect { lipsync, expressive, motion };

std::string_view to_string(Aspect a);
Aspect parse_aspect(std::string_view s);
inline constexpr Aspect kAllAspects[] = {Aspect::lipsync, Aspect::expressive, Aspect::motion};

struct JudgeRequest {
    std::string prompt;
    std::string aspect;     ///< "lipsync", "holistic", "compare", "compare:motion", ...
    std::string video_b64;  ///< zipped PNG frames; empty for text-only requests
    // In-process context for mock judges; never sent over the wire.
    const VideoTensor* video = nullptr;
    const VideoTensor* second_video = nullptr;
    const Condition* condition = nullptr;
    std::vector<std::string> video_ids;  ///< ids in presentation order
};

class JudgeClient {
public:
    virtual ~JudgeClient() = default;
    /// Returns the judge's reply text. Throws JudgeError(kind = transport).
    virtual std::string complete(const JudgeRequest& request) = 0;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{200};
    double backoff_multiplier = 2.0;
};

struct HttpJudgeConfig {
    std::string endpoint;                        ///< e.g. http://host:port/v1/judge
    std::string api_key_env = "FLOWRL_JUDGE_API_KEY";
    int timeout_ms = 60000;
    int max_inflight = 4;
    RetryPolicy retry;

    void validate() const;
};

/// Blocking client for the judge endpoint. Safe to share between threads;
/// at most max_inflight requests are outstanding at once.
class HttpJudgeClient final : public JudgeClient {
public:
    explicit HttpJudgeClient(HttpJudgeConfig cfg);
    ~HttpJudgeClient() override;
    std::string complete(const JudgeRequest& request) override;

    /// Attempts made by the most recent successful or failed call (diagnostics).
    int last_attempts() const noexcept { return last_attempts_.load(); }

private:
    HttpJudgeConfig cfg_;
    std::string scheme_host_port_;
    std::string path_;
    std::string api_key_;
    std::unique_ptr<std::counting_semaphore<>> inflight_;
    std::atomic<int> last_attempts_{0};
};

// --- prompts -----------------------------------------------------------------

/// Single-video, single-aspect scoring prompt.
std::string aspect_prompt(Aspect aspect);
/// Single-video holistic score following the annotation rubric.
std::string holistic_prompt();
/// Single-video prompt asking for all three aspect scores in one reply.
std::string multi_aspect_prompt();
/// Two-video forced choice; with_examples adds one in-context example per aspect.
std::string comparison_prompt(bool with_examples);
/// Two-video forced choice restricted to one aspect.
std::string aspect_comparison_prompt(Aspect aspect);
/// Aggregates three aspect decisions into a final choice.
std::string aggregation_prompt(const std::vector<std::pair<Aspect, int>>& decisions);

// --- reply parsing -----------------------------------------------------------

/// Removes the first <think>...</think> block and returns the trimmed rest.
std::string strip_think_block(std::string_view text);

/// Parses {"score": n} after the think block; n must be an integer in [1,5].
int parse_judge_score(std::string_view text);

/// Parses {"lipsync": a, "expressive": b, "motion": c} after the think block.
std::vector<int> parse_multi_aspect_scores(std::string_view text);

/// Parses {"choice": "first"|"second"} (or 1/2); returns 0 for first, 1 for second.
int parse_judge_choice(std::string_view text);

/// Formats a scoring reply the way a compliant judge would.
std::string format_score_reply(int score, std::string_view reasoning = "");
std::string format_choice_reply(int index, std::string_view reasoning = "");

// --- video payload ---------------------------------------------------------

/// Zip archive (stored entries) of one grayscale PNG per frame, named
/// <prefix>frame_000.png, ...
std::vector<unsigned char> encode_video_zip(const VideoTensor& video, std::string_view prefix = "");
/// Two videos in one archive, prefixed "first/" and "second/".
std::vector<unsigned char> encode_video_pair_zip(const VideoTensor& first, const VideoTensor& second);

}  // namespace flowrl
