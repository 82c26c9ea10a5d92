#include "flowrl/app.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>

#include <png.h>
#include <spdlog/spdlog.h>

#include "flowrl/encoding.hpp"
#include "flowrl/errors.hpp"
#include "flowrl/json_fields.hpp"

#ifndef FLOWRL_VERSION
#define FLOWRL_VERSION "0.0.0"
#endif

namespace flowrl::app {

using json = nlohmann::json;
namespace fs = std::filesystem;
namespace jf = json_fields;

std::string code_version() { return std::string("flowrl ") + FLOWRL_VERSION; }

// --- config --------------------------------------------------------------------

RunConfig::RunConfig() {
    net.time_encoding = TimeEncoding::sinusoidal;
    flow.sft.updates = 500;
    flow.sft.batch_size = 32;
    flow.sft.adam.lr = 2e-3;
    rl.grpo.batch_rollouts = 16;
    rl.grpo.updates = 200;
    rl.adam.lr = 1e-4;
    rewards.flow.warn_on_nonconvergence = false;
}

void RunConfig::validate() const {
    toy.validate();
    if (net.hidden.empty()) throw ConfigError("net.hidden needs at least one layer");
    for (auto h : net.hidden) {
        if (h == 0) throw ConfigError("net.hidden sizes must be positive");
    }
    if (net.time_encoding == TimeEncoding::sinusoidal && net.time_frequencies == 0) {
        throw ConfigError("net.time_frequencies must be positive for sinusoidal encoding");
    }
    flow.sft.validate();
    if (flow.log_every < 1) throw ConfigError("flow.log_every must be >= 1");
    rl.grpo.validate();
    rl.sampler.validate();
    rl.adam.validate();
    rewards.validate();
    if (pyramid_levels < 1) throw ConfigError("rewards.pyramid_levels must be >= 1");
    if (toy.frame_size >> (pyramid_levels - 1) < 1) throw ConfigError("rewards.pyramid_levels too deep for frame_size");
    if (judges.kind != "mock" && judges.kind != "http") throw ConfigError("judges.kind must be mock or http");
    if (judges.kind == "http") judges.http.validate();
    if (eval.num_prompts < 2) throw ConfigError("eval.num_prompts must be >= 2");
    if (eval.sampling.num_steps < 1) throw ConfigError("eval.num_steps must be >= 1");
    if (eval.ssim.window < 2) throw ConfigError("eval.ssim_window must be >= 2");
}

namespace {

TimeEncoding parse_time_encoding(const std::string& s) {
    if (s == "raw") return TimeEncoding::raw;
    if (s == "sinusoidal") return TimeEncoding::sinusoidal;
    throw ConfigError("unknown net.time_encoding '" + s + "' (raw|sinusoidal)");
}

void read_adam(const json& j, const char* section, AdamConfig& a) {
    jf::read(j, section, "lr", a.lr);
    jf::read(j, section, "beta1", a.beta1);
    jf::read(j, section, "beta2", a.beta2);
    jf::read(j, section, "weight_decay", a.weight_decay);
    jf::read(j, section, "adam_eps", a.eps);
}

json adam_json(const AdamConfig& a) {
    return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"weight_decay", a.weight_decay}, {"adam_eps", a.eps}};
}

}  // namespace

void apply_json(RunConfig& cfg, const json& j) {
    jf::reject_unknown(j, "config",
                       {"seed", "output_dir", "toy", "data", "net", "flow", "sampler", "grpo", "rewards", "judges", "eval"});
    jf::read(j, "config", "seed", cfg.seed);
    jf::read(j, "config", "output_dir", cfg.output_dir);
    if (auto it = j.find("toy"); it != j.end()) {
        ToyConfig t = cfg.toy;
        json merged = cfg.toy;
        for (const auto& item : it->items()) merged[item.key()] = item.value();
        from_json(merged, t);
        cfg.toy = t;
    }
    if (auto it = j.find("data"); it != j.end()) {
        jf::reject_unknown(*it, "data", {"dir", "count"});
        jf::read(*it, "data", "dir", cfg.data.dir);
        jf::read(*it, "data", "count", cfg.data.count);
    }
    if (auto it = j.find("net"); it != j.end()) {
        jf::reject_unknown(*it, "net", {"hidden", "activation", "skip_gate", "time_encoding", "time_frequencies"});
        jf::read(*it, "net", "hidden", cfg.net.hidden);
        std::string act(to_string(cfg.net.activation));
        jf::read(*it, "net", "activation", act);
        cfg.net.activation = parse_activation(act);
        jf::read(*it, "net", "skip_gate", cfg.net.skip_gate);
        std::string enc = cfg.net.time_encoding == TimeEncoding::raw ? "raw" : "sinusoidal";
        jf::read(*it, "net", "time_encoding", enc);
        cfg.net.time_encoding = parse_time_encoding(enc);
        jf::read(*it, "net", "time_frequencies", cfg.net.time_frequencies);
    }
    if (auto it = j.find("flow"); it != j.end()) {
        jf::reject_unknown(*it, "flow",
                           {"updates", "batch_size", "log_every", "lr", "beta1", "beta2", "weight_decay", "adam_eps"});
        jf::read(*it, "flow", "updates", cfg.flow.sft.updates);
        jf::read(*it, "flow", "batch_size", cfg.flow.sft.batch_size);
        jf::read(*it, "flow", "log_every", cfg.flow.log_every);
        read_adam(*it, "flow", cfg.flow.sft.adam);
    }
    if (auto it = j.find("sampler"); it != j.end()) {
        jf::reject_unknown(*it, "sampler", {"num_steps", "eta", "window_size", "placement", "window_start"});
        auto& s = cfg.rl.sampler;
        jf::read(*it, "sampler", "num_steps", s.num_steps);
        jf::read(*it, "sampler", "eta", s.eta);
        jf::read(*it, "sampler", "window_size", s.window_size);
        std::string placement = s.placement == WindowPlacement::random ? "random" : "fixed";
        jf::read(*it, "sampler", "placement", placement);
        if (placement != "random" && placement != "fixed") throw ConfigError("sampler.placement must be random or fixed");
        s.placement = placement == "random" ? WindowPlacement::random : WindowPlacement::fixed;
        jf::read(*it, "sampler", "window_start", s.window_start);
    }
    if (auto it = j.find("grpo"); it != j.end()) {
        jf::reject_unknown(*it, "grpo",
                           {"group_size", "clip_epsilon", "kl_beta", "batch_rollouts", "updates", "advantage_std_floor",
                            "ratio_log_clamp", "lr", "beta1", "beta2", "weight_decay", "adam_eps"});
        auto& g = cfg.rl.grpo;
        jf::read(*it, "grpo", "group_size", g.group_size);
        jf::read(*it, "grpo", "clip_epsilon", g.clip_epsilon);
        jf::read(*it, "grpo", "kl_beta", g.kl_beta);
        jf::read(*it, "grpo", "batch_rollouts", g.batch_rollouts);
        jf::read(*it, "grpo", "updates", g.updates);
        jf::read(*it, "grpo", "advantage_std_floor", g.advantage_std_floor);
        jf::read(*it, "grpo", "ratio_log_clamp", g.ratio_log_clamp);
        read_adam(*it, "grpo", cfg.rl.adam);
    }
    if (auto it = j.find("rewards"); it != j.end()) {
        jf::reject_unknown(*it, "rewards",
                           {"lambda1", "lambda2", "jitter_eps", "normalize_floor", "kind", "scope", "flow_alpha",
                            "flow_iterations", "flow_tolerance", "flow_periodic", "normalize_channels",
                            "pyramid_levels"});
        auto& r = cfg.rewards;
        jf::read(*it, "rewards", "lambda1", r.lambda1);
        jf::read(*it, "rewards", "lambda2", r.lambda2);
        jf::read(*it, "rewards", "jitter_eps", r.jitter_eps);
        jf::read(*it, "rewards", "normalize_floor", r.normalize_floor);
        std::string kind(to_string(r.kind));
        jf::read(*it, "rewards", "kind", kind);
        r.kind = parse_reward_kind(kind);
        std::string scope = r.scope == NormalizationScope::batch ? "batch" : "group";
        jf::read(*it, "rewards", "scope", scope);
        if (scope != "batch" && scope != "group") throw ConfigError("rewards.scope must be batch or group");
        r.scope = scope == "batch" ? NormalizationScope::batch : NormalizationScope::group;
        jf::read(*it, "rewards", "flow_alpha", r.flow.alpha);
        jf::read(*it, "rewards", "flow_iterations", r.flow.iterations);
        jf::read(*it, "rewards", "flow_tolerance", r.flow.tolerance);
        jf::read(*it, "rewards", "flow_periodic", r.flow.periodic);
        jf::read(*it, "rewards", "normalize_channels", r.perceptual.normalize_channels);
        jf::read(*it, "rewards", "pyramid_levels", cfg.pyramid_levels);
    }
    if (auto it = j.find("judges"); it != j.end()) {
        jf::reject_unknown(*it, "judges",
                           {"kind", "endpoint", "api_key_env", "timeout_ms", "max_inflight", "retries", "backoff_ms",
                            "mock"});
        auto& jd = cfg.judges;
        jf::read(*it, "judges", "kind", jd.kind);
        jf::read(*it, "judges", "endpoint", jd.http.endpoint);
        jf::read(*it, "judges", "api_key_env", jd.http.api_key_env);
        jf::read(*it, "judges", "timeout_ms", jd.http.timeout_ms);
        jf::read(*it, "judges", "max_inflight", jd.http.max_inflight);
        jf::read(*it, "judges", "retries", jd.http.retry.max_attempts);
        std::int64_t backoff = jd.http.retry.initial_backoff.count();
        jf::read(*it, "judges", "backoff_ms", backoff);
        jd.http.retry.initial_backoff = std::chrono::milliseconds(backoff);
        if (auto m = it->find("mock"); m != it->end()) {
            jf::reject_unknown(*m, "judges.mock",
                               {"lip_offset", "lip_slope", "expr_offset", "expr_slope", "motion_scale"});
            jf::read(*m, "judges.mock", "lip_offset", jd.mock.lip_offset);
            jf::read(*m, "judges.mock", "lip_slope", jd.mock.lip_slope);
            jf::read(*m, "judges.mock", "expr_offset", jd.mock.expr_offset);
            jf::read(*m, "judges.mock", "expr_slope", jd.mock.expr_slope);
            jf::read(*m, "judges.mock", "motion_scale", jd.mock.motion_scale);
        }
    }
    if (auto it = j.find("eval"); it != j.end()) {
        jf::reject_unknown(*it, "eval", {"num_prompts", "num_steps", "seed", "prompt_seed", "strategy", "ssim_window"});
        jf::read(*it, "eval", "num_prompts", cfg.eval.num_prompts);
        jf::read(*it, "eval", "num_steps", cfg.eval.sampling.num_steps);
        jf::read(*it, "eval", "seed", cfg.eval.sampling.seed);
        jf::read(*it, "eval", "prompt_seed", cfg.eval.prompt_seed);
        std::string strategy(to_string(cfg.eval.strategy));
        jf::read(*it, "eval", "strategy", strategy);
        cfg.eval.strategy = parse_compare_strategy(strategy);
        jf::read(*it, "eval", "ssim_window", cfg.eval.ssim.window);
    }
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(is, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    RunConfig cfg;
    apply_json(cfg, j);
    return cfg;
}

json to_json(const RunConfig& c) {
    json toy = c.toy;
    toy.erase("seed");
    const auto& s = c.rl.sampler;
    const auto& g = c.rl.grpo;
    const auto& r = c.rewards;
    json flow = adam_json(c.flow.sft.adam);
    flow["updates"] = c.flow.sft.updates;
    flow["batch_size"] = c.flow.sft.batch_size;
    flow["log_every"] = c.flow.log_every;
    json grpo = adam_json(c.rl.adam);
    grpo.update(json{{"group_size", g.group_size},
                     {"clip_epsilon", g.clip_epsilon},
                     {"kl_beta", g.kl_beta},
                     {"batch_rollouts", g.batch_rollouts},
                     {"updates", g.updates},
                     {"advantage_std_floor", g.advantage_std_floor},
                     {"ratio_log_clamp", g.ratio_log_clamp}});
    return json{
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"toy", toy},
        {"data", {{"dir", c.data.dir}, {"count", c.data.count}}},
        {"net",
         {{"hidden", c.net.hidden},
          {"activation", to_string(c.net.activation)},
          {"skip_gate", c.net.skip_gate},
          {"time_encoding", c.net.time_encoding == TimeEncoding::raw ? "raw" : "sinusoidal"},
          {"time_frequencies", c.net.time_frequencies}}},
        {"flow", flow},
        {"sampler",
         {{"num_steps", s.num_steps},
          {"eta", s.eta},
          {"window_size", s.window_size},
          {"placement", s.placement == WindowPlacement::random ? "random" : "fixed"},
          {"window_start", s.window_start}}},
        {"grpo", grpo},
        {"rewards",
         {{"lambda1", r.lambda1},
          {"lambda2", r.lambda2},
          {"jitter_eps", r.jitter_eps},
          {"normalize_floor", r.normalize_floor},
          {"kind", to_string(r.kind)},
          {"scope", r.scope == NormalizationScope::batch ? "batch" : "group"},
          {"flow_alpha", r.flow.alpha},
          {"flow_iterations", r.flow.iterations},
          {"flow_tolerance", r.flow.tolerance},
          {"flow_periodic", r.flow.periodic},
          {"normalize_channels", r.perceptual.normalize_channels},
          {"pyramid_levels", c.pyramid_levels}}},
        {"judges",
         {{"kind", c.judges.kind},
          {"endpoint", c.judges.http.endpoint},
          {"api_key_env", c.judges.http.api_key_env},
          {"timeout_ms", c.judges.http.timeout_ms},
          {"max_inflight", c.judges.http.max_inflight},
          {"retries", c.judges.http.retry.max_attempts},
          {"backoff_ms", c.judges.http.retry.initial_backoff.count()},
          {"mock",
           {{"lip_offset", c.judges.mock.lip_offset},
            {"lip_slope", c.judges.mock.lip_slope},
            {"expr_offset", c.judges.mock.expr_offset},
            {"expr_slope", c.judges.mock.expr_slope},
            {"motion_scale", c.judges.mock.motion_scale}}}}},
        {"eval",
         {{"num_prompts", c.eval.num_prompts},
          {"num_steps", c.eval.sampling.num_steps},
          {"seed", c.eval.sampling.seed},
          {"prompt_seed", c.eval.prompt_seed},
          {"strategy", to_string(c.eval.strategy)},
          {"ssim_window", c.eval.ssim.window}}},
    };
}

// --- lock and manifest -----------------------------------------------------------

RunLock::RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw ConfigError("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
    std::fclose(f);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

namespace {

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot write " + tmp.string());
        os << text;
        if (!os) throw DataError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

}  // namespace

Manifest::Manifest(std::string command, const RunConfig& cfg)
    : command_(std::move(command)), config_(to_json(cfg)), started_(utc_now()) {}

void Manifest::add_artifact(const fs::path& path) { artifacts_.push_back(path); }

void Manifest::write(const fs::path& dir, const std::string& status) {
    json files = json::array();
    for (const auto& p : artifacts_) {
        if (!fs::exists(p)) continue;
        files.push_back({{"path", fs::relative(p, dir).generic_string()},
                         {"sha256", sha256_file(p)},
                         {"bytes", fs::file_size(p)}});
    }
    json m{{"command", command_}, {"status", status},         {"code_version", code_version()},
           {"config", config_},   {"started_at", started_},   {"finished_at", utc_now()},
           {"artifacts", files}};
    m.update(extra_);
    write_text_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

// --- shared pieces -------------------------------------------------------------

JudgeBundle make_judges(const RunConfig& cfg) {
    JudgeBundle b;
    if (cfg.judges.kind == "mock") {
        b.client = std::make_unique<MockToyJudgeClient>(cfg.toy, cfg.judges.mock);
        b.aspect = std::make_unique<MockToyJudge>(cfg.toy, cfg.judges.mock);
    } else {
        b.client = std::make_unique<HttpJudgeClient>(cfg.judges.http);
        b.aspect = std::make_unique<ClientAspectJudge>(*b.client, cfg.judges.http.retry);
    }
    return b;
}

std::shared_ptr<const FeatureExtractor> make_extractor(const RunConfig& cfg) {
    return std::make_shared<PyramidExtractor>(cfg.pyramid_levels);
}

NetConfig effective_net_config(const RunConfig& cfg) {
    NetConfig n = cfg.net;
    const NetConfig sizes = toy_net_config(cfg.toy);
    n.latent_dim = sizes.latent_dim;
    n.signal_len = sizes.signal_len;
    n.reference_len = sizes.reference_len;
    return n;
}

json breakdown_to_json(const RewardBreakdown& r) {
    return {{"judge_lipsync", r.judge_lipsync},
            {"judge_expressive", r.judge_expressive},
            {"judge_motion", r.judge_motion},
            {"judge_degenerate", r.judge_degenerate},
            {"r_mllm", r.r_mllm},
            {"r_perceptual", r.r_perceptual},
            {"r_consistency", r.r_consistency},
            {"n_mllm", r.n_mllm},
            {"n_perceptual", r.n_perceptual},
            {"n_consistency", r.n_consistency},
            {"composite", r.composite},
            {"reward", r.reward}};
}

json report_to_json(const AlignmentReport& r) {
    json per = json::object();
    for (const auto& [k, g] : r.per_generator_error) {
        per[k] = {{"pairs", g.pairs}, {"errors", g.errors}, {"error_rate", g.rate()}};
    }
    return {{"acc", r.acc},         {"acc_nt", r.acc_nt},   {"coverage", r.coverage},
            {"n_pairs", r.n_pairs}, {"correct", r.correct}, {"ties", r.ties},
            {"per_generator_error", per}};
}

namespace {

void require_dir_input(const std::string& dir, const char* what) {
    if (dir.empty()) throw ConfigError(std::string(what) + " is not set");
    if (!fs::is_directory(dir)) throw ConfigError(std::string(what) + " '" + dir + "' does not exist");
}

void require_file_input(const std::string& file, const char* what) {
    if (file.empty()) throw ConfigError(std::string(what) + " is not set");
    if (!fs::is_regular_file(file)) throw ConfigError(std::string(what) + " '" + file + "' does not exist");
}

std::vector<ToySample> load_training_data(const RunConfig& cfg) {
    ToyConfig file_cfg;
    auto data = read_dataset(cfg.data.dir, &file_cfg);
    if (file_cfg.frame_size != cfg.toy.frame_size || file_cfg.num_frames != cfg.toy.num_frames ||
        file_cfg.codec != cfg.toy.codec) {
        throw ConfigError("dataset " + cfg.data.dir + " was generated with a different toy config");
    }
    return data;
}

std::vector<ToySample> held_out_prompts(const RunConfig& cfg) {
    ToyConfig t = cfg.toy;
    t.seed = cfg.eval.prompt_seed;
    std::vector<ToySample> out;
    for (std::size_t i = 0; i < cfg.eval.num_prompts; ++i) out.push_back(generate_sample(t, i));
    return out;
}

void check_checkpoint_matches(const ModelParams& p, const RunConfig& cfg, const std::string& path) {
    const auto want = effective_net_config(cfg);
    if (p.config.latent_dim != want.latent_dim || p.config.signal_len != want.signal_len ||
        p.config.reference_len != want.reference_len) {
        throw ConfigError("checkpoint " + path + " does not match the toy config (latent " +
                          std::to_string(p.config.latent_dim) + " vs " + std::to_string(want.latent_dim) + ")");
    }
}

}  // namespace

// --- commands ------------------------------------------------------------------

GenDataResult cmd_gen_data(const RunConfig& cfg_in, const GenDataOptions& opt) {
    RunConfig cfg = cfg_in;
    cfg.toy.seed = cfg.seed;
    cfg.validate();
    if (cfg.data.count == 0) throw ConfigError("data.count must be positive");
    const fs::path dir = cfg.data.dir.empty() ? fs::path(cfg.output_dir) : fs::path(cfg.data.dir);
    RunLock lock(dir);
    Manifest manifest("gen-data", cfg);
    GenDataResult res{dir, write_dataset(dir, cfg.toy, cfg.data.count)};
    for (const auto& f : res.files) manifest.add_artifact(f);
    if (opt.export_pgm && !res.files.empty()) {
        const auto first = read_sample(res.files.front());
        fs::create_directories(dir / "pgm");
        for (std::size_t f = 0; f < first.video.num_frames(); ++f) {
            char name[32];
            std::snprintf(name, sizeof name, "frame_%03zu.pgm", f);
            write_pgm(dir / "pgm" / name, frame_view(first.video, f));
            manifest.add_artifact(dir / "pgm" / name);
        }
    }
    manifest.set("latent_dim", cfg.toy.latent_dim());
    manifest.set("samples", res.files.size());
    manifest.write(dir);
    return res;
}

TrainFlowResult cmd_train_flow(const RunConfig& cfg_in, const TrainFlowOptions& opt) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    require_dir_input(cfg.data.dir, "data.dir");
    if (!opt.resume.empty()) require_file_input(opt.resume, "--resume checkpoint");
    const fs::path dir = cfg.output_dir;
    RunLock lock(dir);
    Manifest manifest("train-flow", cfg);
    const auto data = load_training_data(cfg);

    ModelParams params;
    OptimizerState optimizer;
    if (!opt.resume.empty()) {
        auto ck = load_checkpoint(opt.resume);
        check_checkpoint_matches(ck.params, cfg, opt.resume);
        params = std::move(ck.params);
        optimizer = ck.optimizer ? std::move(*ck.optimizer) : make_optimizer(params, cfg.flow.sft.adam);
        optimizer.hyper = cfg.flow.sft.adam;
        manifest.set("resumed_from", opt.resume);
    } else {
        params = init_params(effective_net_config(cfg), cfg.seed);
        optimizer = make_optimizer(params, cfg.flow.sft.adam);
    }
    SftConfig sft = cfg.flow.sft;
    sft.seed = cfg.seed;

    const fs::path log_path = dir / "flow_log.jsonl";
    std::ofstream log(log_path, opt.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw DataError("cannot write " + log_path.string());
    TrainFlowResult res;
    double window_sum = 0.0, window_ms = 0.0, total = 0.0;
    int window_n = 0;
    std::int64_t seen = 0;
    try {
        train_flow_matching(params, optimizer, data, sft, [&](const SftStep& s) {
            res.losses.push_back(s.loss);
            window_sum += s.loss;
            window_ms += s.wall_ms;
            total += s.loss;
            ++window_n;
            ++seen;
            if (window_n == cfg.flow.log_every || seen == sft.updates) {
                log << json{{"update", s.update},
                            {"loss", window_sum / window_n},
                            {"running_mean", total / static_cast<double>(seen)},
                            {"wall_ms", window_ms}}
                           .dump()
                    << '\n';
                log.flush();
                window_sum = window_ms = 0.0;
                window_n = 0;
            }
        });
    } catch (...) {
        log.close();
        manifest.add_artifact(log_path);
        manifest.write(dir, "failed");
        throw;
    }
    log.close();
    res.final_step = optimizer.step;
    res.checkpoint = dir / "flow.ckpt";
    save_checkpoint(res.checkpoint, params, &optimizer);
    manifest.add_artifact(res.checkpoint);
    manifest.add_artifact(log_path);
    manifest.set("final_step", res.final_step);
    manifest.write(dir);
    return res;
}

RlResult cmd_rl(const RunConfig& cfg_in, const RlOptions& opt) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    cfg.rl.seed = cfg.seed;
    cfg.rl.validate();
    require_dir_input(cfg.data.dir, "data.dir");
    require_file_input(opt.init, "--init checkpoint");
    const fs::path dir = cfg.output_dir;
    RunLock lock(dir);
    Manifest manifest("rl", cfg);
    manifest.set("init", opt.init);
    const auto data = load_training_data(cfg);
    auto ck = load_checkpoint(opt.init);
    check_checkpoint_matches(ck.params, cfg, opt.init);
    ModelParams params = std::move(ck.params);
    OptimizerState optimizer = make_optimizer(params, cfg.rl.adam);

    const auto judges = make_judges(cfg);
    const RewardSystem rewards(cfg.rewards, *judges.aspect, make_extractor(cfg));

    const fs::path log_path = dir / "rl_log.jsonl";
    const fs::path curve_path = dir / "reward_curve.csv";
    std::ofstream log(log_path, std::ios::trunc);
    std::ofstream curve(curve_path, std::ios::trunc);
    if (!log || !curve) throw DataError("cannot write RL logs in " + dir.string());
    curve << "update,mean_reward,r_mllm,r_perceptual,r_consistency,judge_lipsync,judge_expressive,judge_motion\n";

    RlResult res;
    manifest.add_artifact(log_path);
    manifest.add_artifact(curve_path);
    try {
        train_rl(params, optimizer, data, cfg.toy, rewards, cfg.rl, 0, [&](const RlStep& s) {
            res.steps.push_back(s);
            log << json{{"update", s.update},
                        {"mean_reward", s.mean_reward},
                        {"r_mllm", s.mean_r_mllm},
                        {"r_perceptual", s.mean_r_perceptual},
                        {"r_consistency", s.mean_r_consistency},
                        {"judge_lipsync", s.mean_judge_lipsync},
                        {"judge_expressive", s.mean_judge_expressive},
                        {"judge_motion", s.mean_judge_motion},
                        {"clip_fraction", s.stats.clip_fraction},
                        {"mean_ratio", s.stats.mean_ratio},
                        {"kl", s.stats.kl_value},
                        {"loss", s.stats.loss},
                        {"update_norm", s.stats.update_norm},
                        {"wall_ms", s.wall_ms}}
                       .dump()
                << '\n';
            log.flush();
            curve << s.update << ',' << s.mean_reward << ',' << s.mean_r_mllm << ',' << s.mean_r_perceptual << ','
                  << s.mean_r_consistency << ',' << s.mean_judge_lipsync << ',' << s.mean_judge_expressive << ','
                  << s.mean_judge_motion << '\n';
            curve.flush();
        });
    } catch (...) {
        log.close();
        curve.close();
        // Keep what was learned so far next to the partial logs.
        const fs::path partial = dir / "rl_partial.ckpt";
        save_checkpoint(partial, params, &optimizer);
        manifest.add_artifact(partial);
        manifest.set("completed_updates", res.steps.size());
        manifest.write(dir, "failed");
        throw;
    }
    log.close();
    curve.close();
    res.checkpoint = dir / "rl.ckpt";
    save_checkpoint(res.checkpoint, params, &optimizer);
    manifest.add_artifact(res.checkpoint);
    manifest.set("completed_updates", res.steps.size());
    manifest.write(dir);
    return res;
}

std::vector<RewardBreakdown> cmd_score(const RunConfig& cfg_in, const ScoreOptions& opt) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    std::vector<fs::path> files;
    for (const auto& s : opt.samples) {
        if (fs::is_directory(s)) {
            for (const auto& e : fs::directory_iterator(s)) {
                const auto name = e.path().filename().string();
                if (name.rfind("sample_", 0) == 0 && e.path().extension() == ".bin") files.push_back(e.path());
            }
        } else {
            require_file_input(s, "sample file");
            files.emplace_back(s);
        }
    }
    std::sort(files.begin(), files.end());
    if (files.size() < 2) throw ConfigError("score needs at least 2 videos: rewards are normalized within the batch");
    if (!opt.checkpoint.empty()) require_file_input(opt.checkpoint, "--checkpoint");

    std::vector<ToySample> samples;
    for (const auto& f : files) samples.push_back(read_sample(f));
    std::vector<VideoTensor> videos;
    if (!opt.checkpoint.empty()) {
        const auto ck = load_checkpoint(opt.checkpoint);
        check_checkpoint_matches(ck.params, cfg, opt.checkpoint);
        videos = generate_videos(ck.params, samples, cfg.toy, cfg.eval.sampling);
    } else {
        for (const auto& s : samples) videos.push_back(s.video);
    }
    const auto judges = make_judges(cfg);
    const RewardSystem rewards(cfg.rewards, *judges.aspect, make_extractor(cfg));
    std::vector<ScoringItem> items;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        items.push_back({&videos[i], &samples[i].video, &samples[i].condition});
    }
    return rewards.score_batch(items);
}

AlignmentReport cmd_align(const RunConfig& cfg_in, const AlignOptions& opt) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    require_file_input(opt.annotations, "--annotations");
    if (opt.scores.empty() == opt.evaluator.empty()) {
        throw ConfigError("align needs exactly one of --scores or --evaluator");
    }
    if (!opt.scores.empty()) require_file_input(opt.scores, "--scores");
    if (!opt.evaluator.empty() && opt.evaluator != "oracle" && opt.evaluator != "first-position" &&
        opt.evaluator != "http") {
        throw ConfigError("--evaluator must be oracle, first-position or http");
    }
    const fs::path dir = cfg.output_dir;
    RunLock lock(dir);
    Manifest manifest("align", cfg);

    const auto annotations = read_annotations_jsonl(fs::path(opt.annotations));
    PairBuildStats stats;
    auto pairs = build_pairs(annotations, &stats);
    if (pairs.empty()) throw DataError("no consensus pairs in " + opt.annotations);

    std::map<std::string, std::map<std::string, double>> evaluator_hist;
    if (!opt.scores.empty()) {
        std::ifstream is(opt.scores);
        const json j = json::parse(is);
        std::map<std::string, double> scores;
        for (const auto& [vid, v] : j.items()) {
            if (v.is_number()) {
                scores[vid] = v.get<double>();
                evaluator_hist["holistic"][vid] = scores[vid];
            } else {
                const double l = v.at("lipsync").get<double>(), e = v.at("expressive").get<double>(),
                             m = v.at("motion").get<double>();
                scores[vid] = (l + e + m) / 3.0;
                evaluator_hist["lipsync"][vid] = l;
                evaluator_hist["expressive"][vid] = e;
                evaluator_hist["motion"][vid] = m;
            }
        }
        predict_from_scores(pairs, scores);
        manifest.set("evaluator", "scores:" + opt.scores);
    } else {
        std::unique_ptr<JudgeClient> client;
        if (opt.evaluator == "oracle") {
            client = std::make_unique<OracleComparisonJudge>(pairs);
        } else if (opt.evaluator == "first-position") {
            client = std::make_unique<FirstPositionJudge>();
        } else {
            cfg.judges.http.validate();
            client = std::make_unique<HttpJudgeClient>(cfg.judges.http);
        }
        ComparisonConfig cc{cfg.eval.strategy, cfg.seed, true};
        predict_by_comparison(pairs, cc, *client);
        manifest.set("evaluator", opt.evaluator + ":" + std::string(to_string(cfg.eval.strategy)));
    }
    const auto report = alignment_metrics(pairs);

    const auto report_path = dir / "report.json";
    const auto gen_path = dir / "generator_errors.csv";
    const auto hist_path = dir / "score_histograms.csv";
    const auto pairs_path = dir / "pairs.jsonl";
    write_report_json(report_path, report, &stats);
    write_generator_error_csv(gen_path, report);
    write_score_histograms_csv(hist_path, annotations, evaluator_hist);
    {
        std::ofstream os(pairs_path);
        for (const auto& p : pairs) {
            os << json{{"sample_id", p.sample_id},
                       {"video_a", p.video_a},
                       {"video_b", p.video_b},
                       {"human_winner", to_string(p.human_winner)},
                       {"evaluator_prediction", to_string(p.evaluator_prediction)}}
                      .dump()
               << '\n';
        }
    }
    for (const auto& p : {report_path, gen_path, hist_path, pairs_path}) manifest.add_artifact(p);
    manifest.write(dir);
    return report;
}

namespace {

std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream is(path);
    std::vector<json> out;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty()) out.push_back(json::parse(line));
    }
    return out;
}

}  // namespace

json cmd_report(const RunConfig& cfg_in, const ReportOptions& opt) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    if (opt.run_dir.empty() && opt.compare_a.empty()) {
        throw ConfigError("report needs --run and/or --compare A B");
    }
    if (!opt.run_dir.empty()) require_dir_input(opt.run_dir, "--run");
    if (!opt.compare_a.empty()) {
        require_file_input(opt.compare_a, "--compare checkpoint A");
        require_file_input(opt.compare_b, "--compare checkpoint B");
    }
    json out = json::object();
    if (!opt.run_dir.empty()) {
        const fs::path run = opt.run_dir;
        if (fs::exists(run / "rl_log.jsonl")) {
            const auto rows = read_jsonl(run / "rl_log.jsonl");
            std::vector<std::vector<double>> series(4);
            for (const auto& r : rows) {
                series[0].push_back(r.at("mean_reward").get<double>());
                series[1].push_back(r.at("r_mllm").get<double>());
                series[2].push_back(r.at("r_perceptual").get<double>());
                series[3].push_back(r.at("r_consistency").get<double>());
            }
            if (!rows.empty()) {
                write_line_plot_png(run / "reward_curve.png", {series[1], series[2], series[3]});
                out["rl"] = {{"updates", rows.size()},
                             {"first", rows.front()},
                             {"last", rows.back()},
                             {"plot", (run / "reward_curve.png").string()}};
            }
        }
        if (fs::exists(run / "flow_log.jsonl")) {
            const auto rows = read_jsonl(run / "flow_log.jsonl");
            std::vector<double> loss;
            for (const auto& r : rows) loss.push_back(r.at("loss").get<double>());
            if (!rows.empty()) {
                write_line_plot_png(run / "flow_loss.png", {loss});
                out["flow"] = {{"entries", rows.size()},
                               {"first_loss", loss.front()},
                               {"last_loss", loss.back()},
                               {"plot", (run / "flow_loss.png").string()}};
            }
        }
    }
    if (!opt.compare_a.empty()) {
        const auto a = load_checkpoint(opt.compare_a).params;
        const auto b = load_checkpoint(opt.compare_b).params;
        check_checkpoint_matches(a, cfg, opt.compare_a);
        check_checkpoint_matches(b, cfg, opt.compare_b);
        const auto prompts = held_out_prompts(cfg);
        const auto judges = make_judges(cfg);
        RewardConfig rc = cfg.rewards;
        rc.scope = NormalizationScope::batch;
        const RewardSystem rewards(rc, *judges.aspect, make_extractor(cfg));
        const auto ra = evaluate_policy(a, prompts, cfg.toy, rewards, cfg.eval.sampling);
        const auto rb = evaluate_policy(b, prompts, cfg.toy, rewards, cfg.eval.sampling);
        const auto pc = pooled_comparison(ra, rb, rewards);
        auto summarize = [](const std::vector<RewardBreakdown>& v, double composite) {
            json s{{"composite", composite}};
            double m = 0, p = 0, c = 0, l = 0, e = 0, mo = 0;
            for (const auto& r : v) {
                m += r.r_mllm;
                p += r.r_perceptual;
                c += r.r_consistency;
                l += r.judge_lipsync;
                e += r.judge_expressive;
                mo += r.judge_motion;
            }
            const double n = static_cast<double>(v.size());
            s.update(json{{"r_mllm", m / n},
                          {"r_perceptual", p / n},
                          {"r_consistency", c / n},
                          {"judge_lipsync", l / n},
                          {"judge_expressive", e / n},
                          {"judge_motion", mo / n}});
            return s;
        };
        out["compare"] = {{"a", opt.compare_a},
                          {"b", opt.compare_b},
                          {"prompts", prompts.size()},
                          {"policy_a", summarize(pc.a, pc.mean_a)},
                          {"policy_b", summarize(pc.b, pc.mean_b)},
                          {"composite_gain", pc.mean_b - pc.mean_a}};
    }
    return out;
}

// --- plotting --------------------------------------------------------------------

void write_line_plot_png(const fs::path& path, const std::vector<std::vector<double>>& series, int width,
                         int height) {
    if (width < 32 || height < 32) throw ConfigError("plot too small");
    std::vector<unsigned char> rgb(static_cast<std::size_t>(width * height * 3), 255);
    auto put = [&](int x, int y, const unsigned char* c) {
        if (x < 0 || y < 0 || x >= width || y >= height) return;
        const auto k = static_cast<std::size_t>((y * width + x) * 3);
        rgb[k] = c[0];
        rgb[k + 1] = c[1];
        rgb[k + 2] = c[2];
    };
    const int margin = 16;
    const unsigned char axis[3] = {0, 0, 0};
    for (int x = margin; x < width - margin; ++x) {
        put(x, height - margin, axis);
        put(x, margin, axis);
    }
    for (int y = margin; y <= height - margin; ++y) {
        put(margin, y, axis);
        put(width - margin, y, axis);
    }
    static constexpr unsigned char palette[][3] = {{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {148, 103, 189}};
    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& ys = series[s];
        if (ys.size() < 2) continue;
        // Each series gets its own vertical scale so components of different magnitude are all visible.
        const auto [lo_it, hi_it] = std::minmax_element(ys.begin(), ys.end());
        const double lo = *lo_it, span = std::max(*hi_it - *lo_it, 1e-12);
        auto sx = [&](std::size_t i) {
            return margin + static_cast<double>(i) * (width - 2 * margin) / static_cast<double>(ys.size() - 1);
        };
        auto sy = [&](double v) { return height - margin - (v - lo) / span * (height - 2 * margin); };
        for (std::size_t i = 0; i + 1 < ys.size(); ++i) {
            const double x0 = sx(i), y0 = sy(ys[i]), x1 = sx(i + 1), y1 = sy(ys[i + 1]);
            const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
            for (int k = 0; k <= steps; ++k) {
                const double f = static_cast<double>(k) / steps;
                put(static_cast<int>(std::lround(x0 + f * (x1 - x0))), static_cast<int>(std::lround(y0 + f * (y1 - y0))),
                    palette[s % 4]);
            }
        }
    }

    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw DataError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw DataError("PNG encoding failed for " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y) png_write_row(png, rgb.data() + static_cast<std::size_t>(y * width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace flowrl::app
