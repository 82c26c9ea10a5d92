/// @file eval_align.hpp
/// @brief Agreement between an automatic evaluator and human annotators on
/// pairwise video preferences.
///
/// Annotators rank the k videos of a sample (ties allowed). Every pair whose
/// order all annotators agree on, strictly, becomes a PreferenceRecord with a
/// human winner. An evaluator then predicts A, B or tie per pair, either from
/// per-video scores or from a forced-choice comparison judge, and the
/// predictions are summarized as
///
///     Acc      = (correct + ties / 2) / n
///     Acc_nt   = correct / non-tied
///     Coverage = non-tied / n

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flowrl/judge.hpp"
#include "flowrl/video.hpp"

namespace flowrl {

struct AnnotationRecord {
    std::string sample_id;
    std::string video_id;
    std::string annotator_id;
    int lipsync = 0;
    int expressive = 0;
    int motion = 0;
    int rank_position = 1;  ///< 1 = best; equal positions are ties
    std::string generator;  ///< optional: which system produced the video

    void validate() const;
};

/// One record per non-empty line; field names as in AnnotationRecord.
std::vector<AnnotationRecord> read_annotations_jsonl(std::istream& is);
std::vector<AnnotationRecord> read_annotations_jsonl(const std::filesystem::path& path);
void write_annotations_jsonl(std::ostream& os, std::span<const AnnotationRecord> records);

enum class Verdict { A, B, tie };
std::string_view to_string(Verdict v);

struct PreferenceRecord {
    std::string sample_id;
    std::string video_a;
    std::string video_b;
    Verdict human_winner = Verdict::A;  ///< A or B; only unanimous pairs exist
    Verdict evaluator_prediction = Verdict::tie;
    std::string generator_a;
    std::string generator_b;

    /// Order-independent identifier "sample/min(id)/max(id)".
    std::string pair_id() const;
};

struct PairBuildStats {
    std::size_t samples = 0;
    std::size_t samples_skipped = 0;
    std::size_t candidate_pairs = 0;
    std::size_t consensus_pairs = 0;
    double consensus_fraction() const {
        return candidate_pairs ? static_cast<double>(consensus_pairs) / static_cast<double>(candidate_pairs) : 0.0;
    }
};

/// C(k,2) candidate pairs per sample (videos in id order, so video_a < video_b),
/// keeping those every annotator orders the same way with a strict preference.
/// Samples where some annotator did not rank every video are skipped with a warning.
std::vector<PreferenceRecord> build_pairs(std::span<const AnnotationRecord> annotations,
                                          PairBuildStats* stats = nullptr);

/// Higher score wins; exact equality is a tie. Throws DataError on a missing id.
Verdict score_based_predict(const std::map<std::string, double>& scores, const PreferenceRecord& pair);

/// Fills evaluator_prediction for every pair from per-video scores.
void predict_from_scores(std::span<PreferenceRecord> pairs, const std::map<std::string, double>& scores);

enum class CompareStrategy { direct, icl, multi_agent };
std::string_view to_string(CompareStrategy s);
CompareStrategy parse_compare_strategy(std::string_view s);

/// Video lookup for building comparison payloads; may return nullptr, in
/// which case the request carries ids only.
using VideoLookup = std::function<const VideoTensor*(const std::string& video_id)>;

struct ComparisonConfig {
    CompareStrategy strategy = CompareStrategy::direct;
    std::uint64_t seed = 0;     ///< presentation order is drawn per pair from (seed, pair id)
    bool randomize_order = true;
};

/// True when the pair is shown as (video_b, video_a).
bool presentation_swapped(const PreferenceRecord& pair, std::uint64_t seed);

/// Asks the judge for a forced choice and maps it back to A/B. multi_agent
/// asks one judge per aspect and a fourth request aggregates their choices.
/// Judge errors are rethrown with the pair id prepended.
Verdict comparison_predict(const PreferenceRecord& pair, const ComparisonConfig& cfg, JudgeClient& client,
                           const VideoLookup& videos = {});

/// comparison_predict over all pairs (parallel across pairs).
void predict_by_comparison(std::span<PreferenceRecord> pairs, const ComparisonConfig& cfg, JudgeClient& client,
                           const VideoLookup& videos = {});

/// Always answers "first" (the positional-bias mock).
class FirstPositionJudge final : public JudgeClient {
public:
    std::string complete(const JudgeRequest& request) override;
};

/// Answers every comparison with the human winner, looked up by the two
/// video ids in the request (aggregation requests included).
class OracleComparisonJudge final : public JudgeClient {
public:
    explicit OracleComparisonJudge(std::span<const PreferenceRecord> truth);
    std::string complete(const JudgeRequest& request) override;

private:
    std::map<std::pair<std::string, std::string>, std::string> winner_;  // (id, id) -> winning id
};

struct GeneratorError {
    std::size_t pairs = 0;
    double errors = 0.0;  ///< wrong = 1, tie = 0.5
    double rate() const { return pairs ? errors / static_cast<double>(pairs) : 0.0; }
};

struct AlignmentReport {
    double acc = 0.0;
    double acc_nt = 0.0;    ///< 0 when every prediction is a tie
    double coverage = 0.0;
    std::size_t n_pairs = 0;
    std::size_t correct = 0;
    std::size_t ties = 0;
    std::map<std::string, GeneratorError> per_generator_error;  ///< key "genA|genB" in sorted order
};

/// Throws ConfigError on empty input.
AlignmentReport alignment_metrics(std::span<const PreferenceRecord> records);

void write_report_json(const std::filesystem::path& path, const AlignmentReport& report,
                       const PairBuildStats* stats = nullptr);
void write_generator_error_csv(const std::filesystem::path& path, const AlignmentReport& report);

/// Rows source,aspect,score,count for score in 1..5. Human scores come from
/// the annotations; evaluator scores (aspect -> video -> score) are rounded.
void write_score_histograms_csv(const std::filesystem::path& path, std::span<const AnnotationRecord> annotations,
                                const std::map<std::string, std::map<std::string, double>>& evaluator_scores = {});

// --- SSIM ----------------------------------------------------------------------

struct SsimConfig {
    std::size_t window = 7;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
    bool sample_covariance = true;  ///< N/(N-1) variance normalization
};

/// Mean local SSIM over every fully contained window.
double ssim(const FrameView& a, const FrameView& b, const SsimConfig& cfg = {});
/// Mean frame SSIM of two equally shaped videos.
double ssim_video(const VideoTensor& a, const VideoTensor& b, const SsimConfig& cfg = {});

}  // namespace flowrl
