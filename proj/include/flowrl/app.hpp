/// @file app.hpp
/// @brief Run configuration and the command implementations behind the
/// `flowrl` executable (gen-data, train-flow, rl, score, align, report).
///
/// A run config is one JSON file with optional sections toy, data, net, flow,
/// sampler, grpo, rewards, judges, eval plus top-level seed and output_dir.
/// Unknown keys are rejected; command-line flags are applied on top and the
/// effective config is written into every run manifest.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowrl/eval_align.hpp"
#include "flowrl/rewards.hpp"
#include "flowrl/toyworld.hpp"
#include "flowrl/training.hpp"

namespace flowrl::app {

/// Version string recorded in manifests.
std::string code_version();

struct DataSection {
    std::string dir;          ///< dataset directory (input for training, output for gen-data)
    std::size_t count = 512;  ///< samples written by gen-data
};

struct FlowSection {
    SftConfig sft{};       ///< desk preset: 500 updates, batch 32, lr 2e-3
    int log_every = 10;
};

struct JudgeSection {
    std::string kind = "mock";  ///< mock | http
    HttpJudgeConfig http{};
    MockJudgeConstants mock{};
};

struct EvalSection {
    EvalConfig sampling{};
    std::size_t num_prompts = 50;
    std::uint64_t prompt_seed = 4242;  ///< held-out conditions come from this toy seed
    CompareStrategy strategy = CompareStrategy::direct;
    SsimConfig ssim{};
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "runs/default";
    ToyConfig toy{};
    DataSection data{};
    NetConfig net{};  ///< latent/signal/reference sizes are derived from toy
    FlowSection flow{};
    RlConfig rl{};    ///< desk preset: batch 16, 200 updates, lr 1e-4
    RewardConfig rewards{};
    std::size_t pyramid_levels = 2;
    JudgeSection judges{};
    EvalSection eval{};

    RunConfig();
    /// Range checks for every section; throws ConfigError.
    void validate() const;
};

/// Overlays @p j onto @p cfg (strict: unknown keys throw ConfigError).
void apply_json(RunConfig& cfg, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

/// Holds <dir>/.lock for the lifetime of the object; a second holder gets ConfigError.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

/// Collects artifacts and writes manifest.json atomically at the end of a run.
class Manifest {
public:
    Manifest(std::string command, const RunConfig& cfg);
    void add_artifact(const std::filesystem::path& path);
    void set(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }
    /// Hashes every artifact and writes <dir>/manifest.json via a rename.
    void write(const std::filesystem::path& dir, const std::string& status = "ok");

private:
    std::string command_;
    nlohmann::json config_;
    std::string started_;
    std::vector<std::filesystem::path> artifacts_;
    nlohmann::json extra_ = nlohmann::json::object();
};

/// Judges selected by cfg.judges (mock or HTTP endpoint).
struct JudgeBundle {
    std::unique_ptr<JudgeClient> client;
    std::unique_ptr<AspectJudge> aspect;
};
JudgeBundle make_judges(const RunConfig& cfg);
std::shared_ptr<const FeatureExtractor> make_extractor(const RunConfig& cfg);
/// Reward configuration with cfg.toy-derived sizes filled in.
NetConfig effective_net_config(const RunConfig& cfg);

nlohmann::json breakdown_to_json(const RewardBreakdown& r);
nlohmann::json report_to_json(const AlignmentReport& r);

// --- commands ------------------------------------------------------------------

struct GenDataResult {
    std::filesystem::path dir;
    std::vector<std::filesystem::path> files;
};
struct GenDataOptions {
    bool export_pgm = false;  ///< also write sample 0's frames as PGM under pgm/
};
GenDataResult cmd_gen_data(const RunConfig& cfg, const GenDataOptions& opt = {});

struct TrainFlowOptions {
    std::string resume;  ///< checkpoint to continue from (params + optimizer)
};
struct TrainFlowResult {
    std::filesystem::path checkpoint;
    std::vector<double> losses;  ///< per update, this invocation only
    std::int64_t final_step = 0;
};
TrainFlowResult cmd_train_flow(const RunConfig& cfg, const TrainFlowOptions& opt = {});

struct RlOptions {
    std::string init;  ///< SFT checkpoint (required)
};
struct RlResult {
    std::filesystem::path checkpoint;
    std::vector<RlStep> steps;
};
RlResult cmd_rl(const RunConfig& cfg, const RlOptions& opt);

struct ScoreOptions {
    std::vector<std::string> samples;  ///< toy sample files; a directory expands to its samples
    std::string checkpoint;            ///< when set, score the model's generations for each condition
};
/// One breakdown per sample (batch-normalized across all of them).
std::vector<RewardBreakdown> cmd_score(const RunConfig& cfg, const ScoreOptions& opt);

struct AlignOptions {
    std::string annotations;
    std::string scores;     ///< JSON {video_id: score} or {video_id: {lipsync, expressive, motion}}
    std::string evaluator;  ///< oracle | first-position | http (comparison judges)
};
AlignmentReport cmd_align(const RunConfig& cfg, const AlignOptions& opt);

struct ReportOptions {
    std::string run_dir;  ///< directory with rl_log.jsonl and/or flow_log.jsonl
    std::string compare_a;  ///< checkpoint pair for a pooled reward comparison
    std::string compare_b;
};
nlohmann::json cmd_report(const RunConfig& cfg, const ReportOptions& opt);

/// Writes a PNG line chart of @p series (each a y sequence over x = 0..n-1).
void write_line_plot_png(const std::filesystem::path& path, const std::vector<std::vector<double>>& series,
                         int width = 640, int height = 360);

}  // namespace flowrl::app
