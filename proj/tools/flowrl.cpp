/// @file flowrl.cpp
/// @brief `flowrl` command-line tool: gen-data, train-flow, rl, score, align, report.
///
/// Exit codes: 0 ok, 1 unexpected error, 2 configuration error, 3 numeric
/// divergence, 4 judge failure.

#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "flowrl/app.hpp"
#include "flowrl/errors.hpp"

namespace {

using flowrl::app::RunConfig;
using json = nlohmann::json;

/// Flags shared by every subcommand; unset ones leave the config file value alone.
struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output;
    std::optional<std::string> data;
    std::optional<std::string> judge;

    void attach(CLI::App* sub) {
        sub->add_option("-c,--config", config, "JSON run config")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "run seed");
        sub->add_option("-o,--output", output, "output directory");
        sub->add_option("--data", data, "dataset directory");
        sub->add_option("--judge", judge, "judge kind: mock | http");
    }

    RunConfig load() const {
        RunConfig cfg = config.empty() ? RunConfig{} : flowrl::app::load_run_config(config);
        if (seed) cfg.seed = *seed;
        if (output) cfg.output_dir = *output;
        if (data) cfg.data.dir = *data;
        if (judge) cfg.judges.kind = *judge;
        return cfg;
    }
};

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const flowrl::ConfigError*>(&e)) return 2;
    if (dynamic_cast<const flowrl::NumericError*>(&e)) return 3;
    if (dynamic_cast<const flowrl::JudgeError*>(&e)) return 4;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flowrl: flow-matching video generator training and judge alignment on a toy domain"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "debug logging");

    // gen-data
    CommonFlags gen_flags;
    std::optional<std::size_t> gen_count;
    std::optional<std::string> gen_codec;
    bool gen_pgm = false;
    auto* gen = app.add_subcommand("gen-data", "write a seeded toy dataset");
    gen_flags.attach(gen);
    gen->add_option("-n,--count", gen_count, "number of samples");
    gen->add_option("--codec", gen_codec, "latent codec: identity | pool2");
    gen->add_flag("--pgm", gen_pgm, "also export sample 0 as PGM frames");

    // train-flow
    CommonFlags flow_flags;
    std::optional<int> flow_updates;
    std::optional<double> flow_lr;
    std::string flow_resume;
    auto* train = app.add_subcommand("train-flow", "supervised flow-matching training");
    flow_flags.attach(train);
    train->add_option("--updates", flow_updates, "optimizer updates in this invocation");
    train->add_option("--lr", flow_lr, "learning rate");
    train->add_option("--resume", flow_resume, "continue from a checkpoint (params and optimizer state)");

    // rl
    CommonFlags rl_flags;
    std::optional<std::string> rl_reward;
    std::optional<double> rl_eta, rl_lr;
    std::optional<int> rl_window, rl_updates;
    std::string rl_init;
    auto* rl = app.add_subcommand("rl", "GRPO post-training from an SFT checkpoint");
    rl_flags.attach(rl);
    rl->add_option("--init", rl_init, "SFT checkpoint")->required();
    rl->add_option("--reward", rl_reward,
                   "composite | mllm | perceptual | consistency | perceptual_consistency | lipsync | expressive | motion");
    rl->add_option("--eta", rl_eta, "CPS noise level in [0,1]");
    rl->add_option("--window", rl_window, "stochastic window size");
    rl->add_option("--updates", rl_updates, "GRPO updates");
    rl->add_option("--lr", rl_lr, "learning rate");

    // score
    CommonFlags score_flags;
    flowrl::app::ScoreOptions score_opt;
    auto* score = app.add_subcommand("score", "reward breakdown per toy sample (JSON lines on stdout)");
    score_flags.attach(score);
    score->add_option("samples", score_opt.samples, "sample files or dataset directories")->required();
    score->add_option("--checkpoint", score_opt.checkpoint, "score this model's generations instead");

    // align
    CommonFlags align_flags;
    flowrl::app::AlignOptions align_opt;
    std::optional<std::string> align_strategy;
    auto* align = app.add_subcommand("align", "judge/human preference alignment report");
    align_flags.attach(align);
    align->add_option("--annotations", align_opt.annotations, "annotation JSONL")->required();
    align->add_option("--scores", align_opt.scores, "per-video judge scores JSON");
    align->add_option("--evaluator", align_opt.evaluator, "oracle | first-position | http");
    align->add_option("--strategy", align_strategy, "direct | icl | multi_agent");

    // report
    CommonFlags report_flags;
    flowrl::app::ReportOptions report_opt;
    std::vector<std::string> compare;
    auto* report = app.add_subcommand("report", "curves and pooled checkpoint comparison");
    report_flags.attach(report);
    report->add_option("--run", report_opt.run_dir, "run directory with logs");
    report->add_option("--compare", compare, "two checkpoints: baseline, candidate")->expected(2);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (*gen) {
            auto cfg = gen_flags.load();
            if (gen_count) cfg.data.count = *gen_count;
            if (gen_codec) cfg.toy.codec = flowrl::parse_codec(*gen_codec);
            const auto res = flowrl::app::cmd_gen_data(cfg, {gen_pgm});
            std::cout << json{{"dir", res.dir.string()}, {"samples", res.files.size()}}.dump() << '\n';
        } else if (*train) {
            auto cfg = flow_flags.load();
            if (flow_updates) cfg.flow.sft.updates = *flow_updates;
            if (flow_lr) cfg.flow.sft.adam.lr = *flow_lr;
            const auto res = flowrl::app::cmd_train_flow(cfg, {flow_resume});
            std::cout << json{{"checkpoint", res.checkpoint.string()},
                              {"final_step", res.final_step},
                              {"first_loss", res.losses.empty() ? 0.0 : res.losses.front()},
                              {"last_loss", res.losses.empty() ? 0.0 : res.losses.back()}}
                             .dump()
                      << '\n';
        } else if (*rl) {
            auto cfg = rl_flags.load();
            if (rl_reward) cfg.rewards.kind = flowrl::parse_reward_kind(*rl_reward);
            if (rl_eta) cfg.rl.sampler.eta = *rl_eta;
            if (rl_window) cfg.rl.sampler.window_size = *rl_window;
            if (rl_updates) cfg.rl.grpo.updates = *rl_updates;
            if (rl_lr) cfg.rl.adam.lr = *rl_lr;
            const auto res = flowrl::app::cmd_rl(cfg, {rl_init});
            std::cout << json{{"checkpoint", res.checkpoint.string()}, {"updates", res.steps.size()}}.dump() << '\n';
        } else if (*score) {
            const auto cfg = score_flags.load();
            for (const auto& r : flowrl::app::cmd_score(cfg, score_opt)) {
                std::cout << flowrl::app::breakdown_to_json(r).dump() << '\n';
            }
        } else if (*align) {
            auto cfg = align_flags.load();
            if (align_strategy) cfg.eval.strategy = flowrl::parse_compare_strategy(*align_strategy);
            std::cout << flowrl::app::report_to_json(flowrl::app::cmd_align(cfg, align_opt)).dump(2) << '\n';
        } else if (*report) {
            const auto cfg = report_flags.load();
            if (compare.size() == 2) {
                report_opt.compare_a = compare[0];
                report_opt.compare_b = compare[1];
            }
            std::cout << flowrl::app::cmd_report(cfg, report_opt).dump(2) << '\n';
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return exit_code_for(e);
    }
    return 0;
}
