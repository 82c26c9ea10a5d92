#include "flowrl/eval_align.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "flowrl/encoding.hpp"
#include "flowrl/errors.hpp"
#include "flowrl/kernels.hpp"
#include "flowrl/rng.hpp"

namespace flowrl {

using json = nlohmann::json;

// --- annotations -------------------------------------------------------------

void AnnotationRecord::validate() const {
    if (sample_id.empty() || video_id.empty() || annotator_id.empty()) {
        throw DataError("annotation record needs sample_id, video_id and annotator_id");
    }
    for (int s : {lipsync, expressive, motion}) {
        if (s < 1 || s > 5) {
            throw DataError("annotation " + sample_id + "/" + video_id + "/" + annotator_id + ": score " +
                            std::to_string(s) + " outside 1-5");
        }
    }
    if (rank_position < 1) throw DataError("annotation " + sample_id + "/" + video_id + ": rank_position must be >= 1");
}

std::vector<AnnotationRecord> read_annotations_jsonl(std::istream& is) {
    std::vector<AnnotationRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            AnnotationRecord r;
            r.sample_id = j.at("sample_id").get<std::string>();
            r.video_id = j.at("video_id").get<std::string>();
            r.annotator_id = j.at("annotator_id").get<std::string>();
            r.lipsync = j.at("lipsync").get<int>();
            r.expressive = j.at("expressive").get<int>();
            r.motion = j.at("motion").get<int>();
            r.rank_position = j.at("rank_position").get<int>();
            r.generator = j.value("generator", "");
            r.validate();
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw DataError("annotations line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<AnnotationRecord> read_annotations_jsonl(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open annotations " + path.string());
    return read_annotations_jsonl(is);
}

void write_annotations_jsonl(std::ostream& os, std::span<const AnnotationRecord> records) {
    for (const auto& r : records) {
        json j{{"sample_id", r.sample_id},       {"video_id", r.video_id},     {"annotator_id", r.annotator_id},
               {"lipsync", r.lipsync},           {"expressive", r.expressive}, {"motion", r.motion},
               {"rank_position", r.rank_position}};
        if (!r.generator.empty()) j["generator"] = r.generator;
        os << j.dump() << '\n';
    }
}

std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::A: return "A";
        case Verdict::B: return "B";
        case Verdict::tie: return "tie";
    }
    return "?";
}

std::string PreferenceRecord::pair_id() const {
    const auto& lo = std::min(video_a, video_b);
    const auto& hi = std::max(video_a, video_b);
    return sample_id + "/" + lo + "/" + hi;
}

// --- pairs -------------------------------------------------------------------

std::vector<PreferenceRecord> build_pairs(std::span<const AnnotationRecord> annotations, PairBuildStats* stats) {
    // sample -> annotator -> video -> rank
    std::map<std::string, std::map<std::string, std::map<std::string, int>>> ranks;
    std::map<std::string, std::map<std::string, std::string>> generators;
    for (const auto& r : annotations) {
        r.validate();
        ranks[r.sample_id][r.annotator_id][r.video_id] = r.rank_position;
        if (!r.generator.empty()) generators[r.sample_id][r.video_id] = r.generator;
    }

    PairBuildStats st;
    std::vector<PreferenceRecord> out;
    for (const auto& [sample, by_annotator] : ranks) {
        ++st.samples;
        std::set<std::string> videos;
        for (const auto& [_, by_video] : by_annotator) {
            for (const auto& [vid, __] : by_video) videos.insert(vid);
        }
        bool complete = videos.size() >= 2;
        for (const auto& [_, by_video] : by_annotator) complete = complete && by_video.size() == videos.size();
        if (!complete) {
            spdlog::warn("sample '{}' skipped: not every annotator ranked all {} videos", sample, videos.size());
            ++st.samples_skipped;
            continue;
        }
        const std::vector<std::string> ids(videos.begin(), videos.end());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            for (std::size_t j = i + 1; j < ids.size(); ++j) {
                ++st.candidate_pairs;
                int a_wins = 0, b_wins = 0;
                for (const auto& [_, by_video] : by_annotator) {
                    const int ra = by_video.at(ids[i]), rb = by_video.at(ids[j]);
                    a_wins += ra < rb;
                    b_wins += rb < ra;
                }
                const int n = static_cast<int>(by_annotator.size());
                if (a_wins != n && b_wins != n) continue;
                PreferenceRecord p;
                p.sample_id = sample;
                p.video_a = ids[i];
                p.video_b = ids[j];
                p.human_winner = a_wins == n ? Verdict::A : Verdict::B;
                if (auto g = generators.find(sample); g != generators.end()) {
                    if (auto it = g->second.find(ids[i]); it != g->second.end()) p.generator_a = it->second;
                    if (auto it = g->second.find(ids[j]); it != g->second.end()) p.generator_b = it->second;
                }
                out.push_back(std::move(p));
                ++st.consensus_pairs;
            }
        }
    }
    if (stats) *stats = st;
    return out;
}

// --- predictions ---------------------------------------------------------------

Verdict score_based_predict(const std::map<std::string, double>& scores, const PreferenceRecord& pair) {
    const auto a = scores.find(pair.video_a);
    const auto b = scores.find(pair.video_b);
    if (a == scores.end() || b == scores.end()) {
        throw DataError("pair " + pair.pair_id() + ": no evaluator score for " +
                        (a == scores.end() ? pair.video_a : pair.video_b));
    }
    if (a->second > b->second) return Verdict::A;
    if (b->second > a->second) return Verdict::B;
    return Verdict::tie;
}

void predict_from_scores(std::span<PreferenceRecord> pairs, const std::map<std::string, double>& scores) {
    for (auto& p : pairs) p.evaluator_prediction = score_based_predict(scores, p);
}

std::string_view to_string(CompareStrategy s) {
    switch (s) {
        case CompareStrategy::direct: return "direct";
        case CompareStrategy::icl: return "icl";
        case CompareStrategy::multi_agent: return "multi_agent";
    }
    return "?";
}

CompareStrategy parse_compare_strategy(std::string_view s) {
    if (s == "direct") return CompareStrategy::direct;
    if (s == "icl") return CompareStrategy::icl;
    if (s == "multi_agent") return CompareStrategy::multi_agent;
    throw ConfigError("unknown comparison strategy '" + std::string(s) + "' (direct|icl|multi_agent)");
}

namespace {

// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

bool presentation_swapped(const PreferenceRecord& pair, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {fnv1a(pair.pair_id())}));
    const bool canonical_first_is_a = pair.video_a <= pair.video_b;
    const bool show_canonical_swapped = rng.uniform() < 0.5;
    // The coin is tied to the canonical (sorted) order so relabeling a/b does
    // not change what the judge sees.
    return show_canonical_swapped == canonical_first_is_a;
}

Verdict comparison_predict(const PreferenceRecord& pair, const ComparisonConfig& cfg, JudgeClient& client,
                           const VideoLookup& videos) {
    const bool swapped = cfg.randomize_order && presentation_swapped(pair, cfg.seed);
    const std::string& first = swapped ? pair.video_b : pair.video_a;
    const std::string& second = swapped ? pair.video_a : pair.video_b;

    JudgeRequest base;
    base.video_ids = {first, second};
    if (videos) {
        base.video = videos(first);
        base.second_video = videos(second);
        if (base.video && base.second_video) {
            base.video_b64 = base64_encode(encode_video_pair_zip(*base.video, *base.second_video));
        }
    }

    int choice = 0;
    try {
        if (cfg.strategy == CompareStrategy::multi_agent) {
            std::vector<std::pair<Aspect, int>> decisions;
            for (Aspect a : kAllAspects) {
                JudgeRequest req = base;
                req.prompt = aspect_comparison_prompt(a);
                req.aspect = "compare:" + std::string(to_string(a));
                decisions.emplace_back(a, parse_judge_choice(client.complete(req)));
            }
            JudgeRequest agg;
            agg.video_ids = base.video_ids;
            agg.prompt = aggregation_prompt(decisions);
            agg.aspect = "aggregate";
            choice = parse_judge_choice(client.complete(agg));
        } else {
            JudgeRequest req = base;
            req.prompt = comparison_prompt(cfg.strategy == CompareStrategy::icl);
            req.aspect = "compare";
            choice = parse_judge_choice(client.complete(req));
        }
    } catch (const JudgeError& e) {
        throw JudgeError(e.kind(), "pair " + pair.pair_id() + ": " + e.what());
    }
    const bool first_wins = choice == 0;
    // first is video_a unless swapped
    return first_wins != swapped ? Verdict::A : Verdict::B;
}

void predict_by_comparison(std::span<PreferenceRecord> pairs, const ComparisonConfig& cfg, JudgeClient& client,
                           const VideoLookup& videos) {
    std::exception_ptr failure;
    const auto n = static_cast<std::int64_t>(pairs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            auto& p = pairs[static_cast<std::size_t>(i)];
            p.evaluator_prediction = comparison_predict(p, cfg, client, videos);
        } catch (...) {
#pragma omp critical(flowrl_compare_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
}

std::string FirstPositionJudge::complete(const JudgeRequest&) { return format_choice_reply(0, "first is better"); }

OracleComparisonJudge::OracleComparisonJudge(std::span<const PreferenceRecord> truth) {
    for (const auto& p : truth) {
        const auto& w = p.human_winner == Verdict::A ? p.video_a : p.video_b;
        winner_[{p.video_a, p.video_b}] = w;
        winner_[{p.video_b, p.video_a}] = w;
    }
}

std::string OracleComparisonJudge::complete(const JudgeRequest& request) {
    if (request.video_ids.size() != 2) {
        throw JudgeError(JudgeError::Kind::transport, "oracle judge needs the two presented video ids");
    }
    const auto it = winner_.find({request.video_ids[0], request.video_ids[1]});
    if (it == winner_.end()) {
        throw JudgeError(JudgeError::Kind::transport,
                         "oracle judge has no verdict for " + request.video_ids[0] + " vs " + request.video_ids[1]);
    }
    return format_choice_reply(it->second == request.video_ids[0] ? 0 : 1, "oracle");
}

// --- metrics -------------------------------------------------------------------

AlignmentReport alignment_metrics(std::span<const PreferenceRecord> records) {
    if (records.empty()) throw ConfigError("alignment_metrics needs at least one pair");
    AlignmentReport r;
    r.n_pairs = records.size();
    for (const auto& p : records) {
        if (p.human_winner == Verdict::tie) throw DataError("pair " + p.pair_id() + " has no human winner");
        double err = 0.0;
        if (p.evaluator_prediction == Verdict::tie) {
            ++r.ties;
            err = 0.5;
        } else if (p.evaluator_prediction == p.human_winner) {
            ++r.correct;
        } else {
            err = 1.0;
        }
        if (!p.generator_a.empty() || !p.generator_b.empty()) {
            const auto key = std::min(p.generator_a, p.generator_b) + "|" + std::max(p.generator_a, p.generator_b);
            auto& g = r.per_generator_error[key];
            ++g.pairs;
            g.errors += err;
        }
    }
    const double n = static_cast<double>(r.n_pairs);
    const std::size_t non_tied = r.n_pairs - r.ties;
    r.acc = (static_cast<double>(r.correct) + 0.5 * static_cast<double>(r.ties)) / n;
    r.coverage = static_cast<double>(non_tied) / n;
    r.acc_nt = non_tied ? static_cast<double>(r.correct) / static_cast<double>(non_tied) : 0.0;
    return r;
}

void write_report_json(const std::filesystem::path& path, const AlignmentReport& report,
                       const PairBuildStats* stats) {
    json j{{"acc", report.acc},           {"acc_nt", report.acc_nt}, {"coverage", report.coverage},
           {"n_pairs", report.n_pairs},   {"correct", report.correct}, {"ties", report.ties}};
    json per = json::object();
    for (const auto& [k, g] : report.per_generator_error) {
        per[k] = {{"pairs", g.pairs}, {"errors", g.errors}, {"error_rate", g.rate()}};
    }
    j["per_generator_error"] = per;
    if (stats) {
        j["pairs"] = {{"samples", stats->samples},
                      {"samples_skipped", stats->samples_skipped},
                      {"candidate_pairs", stats->candidate_pairs},
                      {"consensus_pairs", stats->consensus_pairs},
                      {"consensus_fraction", stats->consensus_fraction()}};
    }
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

void write_generator_error_csv(const std::filesystem::path& path, const AlignmentReport& report) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path.string());
    os << "generators,pairs,errors,error_rate\n";
    for (const auto& [k, g] : report.per_generator_error) {
        os << k << ',' << g.pairs << ',' << g.errors << ',' << g.rate() << '\n';
    }
}

void write_score_histograms_csv(const std::filesystem::path& path, std::span<const AnnotationRecord> annotations,
                                const std::map<std::string, std::map<std::string, double>>& evaluator_scores) {
    std::map<std::pair<std::string, std::string>, std::array<std::size_t, 5>> counts;
    auto bump = [&](const std::string& source, const std::string& aspect, int score) {
        auto& c = counts[{source, aspect}];
        c[static_cast<std::size_t>(std::clamp(score, 1, 5) - 1)]++;
    };
    for (const auto& r : annotations) {
        bump("human", "lipsync", r.lipsync);
        bump("human", "expressive", r.expressive);
        bump("human", "motion", r.motion);
    }
    for (const auto& [aspect, by_video] : evaluator_scores) {
        for (const auto& [_, s] : by_video) bump("evaluator", aspect, static_cast<int>(std::lround(s)));
    }
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path.string());
    os << "source,aspect,score,count\n";
    for (const auto& [key, c] : counts) {
        for (int s = 1; s <= 5; ++s) {
            os << key.first << ',' << key.second << ',' << s << ',' << c[static_cast<std::size_t>(s - 1)] << '\n';
        }
    }
}

// --- SSIM ----------------------------------------------------------------------

double ssim(const FrameView& a, const FrameView& b, const SsimConfig& cfg) {
    if (a.height != b.height || a.width != b.width) throw ShapeError("ssim: frame sizes differ");
    require_same_size(a.pixels.size(), a.height * a.width, "ssim frame a");
    require_same_size(b.pixels.size(), b.height * b.width, "ssim frame b");
    if (cfg.window < 2 || a.height < cfg.window || a.width < cfg.window) {
        throw ShapeError("ssim: frame " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                         " is smaller than the " + std::to_string(cfg.window) + "x" + std::to_string(cfg.window) +
                         " window");
    }
    const double c1 = (cfg.k1 * cfg.data_range) * (cfg.k1 * cfg.data_range);
    const double c2 = (cfg.k2 * cfg.data_range) * (cfg.k2 * cfg.data_range);
    const std::size_t oh = a.height - cfg.window + 1, ow = a.width - cfg.window + 1;
    std::vector<double> local(oh * ow);
    kernels::omp::ssim_map(a.pixels, b.pixels, a.height, a.width, cfg.window, c1, c2, cfg.sample_covariance, local);
    double s = 0.0;
    for (double v : local) s += v;
    return s / static_cast<double>(local.size());
}

double ssim_video(const VideoTensor& a, const VideoTensor& b, const SsimConfig& cfg) {
    if (a.frames.shape() != b.frames.shape()) throw ShapeError("ssim_video: video shapes differ");
    double s = 0.0;
    for (std::size_t t = 0; t < a.num_frames(); ++t) s += ssim(frame_view(a, t), frame_view(b, t), cfg);
    return s / static_cast<double>(a.num_frames());
}

}  // namespace flowrl
