/// @file eval_align_test.cpp
/// @brief Pair construction, evaluator predictions, agreement metrics and SSIM.

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flowrl/errors.hpp"
#include "flowrl/eval_align.hpp"
#include "flowrl/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace flowrl;

namespace {

AnnotationRecord rec(const std::string& sample, const std::string& video, const std::string& annotator, int rank) {
    AnnotationRecord r;
    r.sample_id = sample;
    r.video_id = video;
    r.annotator_id = annotator;
    r.lipsync = r.expressive = r.motion = 3;
    r.rank_position = rank;
    return r;
}

/// Annotator rankings given as best-first strings, e.g. "ABCD".
std::vector<AnnotationRecord> rankings(const std::string& sample, const std::vector<std::string>& orders) {
    std::vector<AnnotationRecord> out;
    for (std::size_t a = 0; a < orders.size(); ++a) {
        for (std::size_t pos = 0; pos < orders[a].size(); ++pos) {
            out.push_back(rec(sample, std::string(1, orders[a][pos]), "ann" + std::to_string(a), static_cast<int>(pos) + 1));
        }
    }
    return out;
}

PreferenceRecord pair(const std::string& a, const std::string& b, Verdict human, Verdict pred) {
    PreferenceRecord p;
    p.sample_id = "s";
    p.video_a = a;
    p.video_b = b;
    p.human_winner = human;
    p.evaluator_prediction = pred;
    return p;
}

std::vector<PreferenceRecord> random_pairs(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<PreferenceRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        const Verdict h = rng.uniform() < 0.5 ? Verdict::A : Verdict::B;
        const double u = rng.uniform();
        const Verdict p = u < 0.2 ? Verdict::tie : (u < 0.6 ? Verdict::A : Verdict::B);
        out.push_back(pair("v" + std::to_string(2 * i), "v" + std::to_string(2 * i + 1), h, p));
        out.back().sample_id = "s" + std::to_string(i);
    }
    return out;
}

void expect_identity(const AlignmentReport& r) {
    EXPECT_NEAR(r.acc, r.acc_nt * r.coverage + 0.5 * (1.0 - r.coverage), 1e-12);
}

}  // namespace

// --- pairs ------------------------------------------------------------------------

TEST(BuildPairs, FourVideosGiveSixCandidates) {
    PairBuildStats st;
    const auto pairs = build_pairs(rankings("s1", {"ABCD"}), &st);
    EXPECT_EQ(st.candidate_pairs, 6u);
    EXPECT_EQ(pairs.size(), 6u);
    for (const auto& p : pairs) {
        EXPECT_LT(p.video_a, p.video_b);
        EXPECT_EQ(p.human_winner, Verdict::A);  // alphabetical order == rank order here
    }
}

TEST(BuildPairs, DisagreementDropsPair) {
    PairBuildStats st;
    const auto pairs = build_pairs(rankings("s1", {"ABCD", "ABCD", "ACBD"}), &st);
    std::set<std::string> kept;
    for (const auto& p : pairs) kept.insert(p.video_a + p.video_b);
    EXPECT_EQ(kept, (std::set<std::string>{"AB", "AC", "AD", "BD", "CD"}));
    EXPECT_EQ(st.consensus_pairs, 5u);
    EXPECT_NEAR(st.consensus_fraction(), 5.0 / 6.0, 1e-15);
}

TEST(BuildPairs, WinnerFollowsRanks) {
    const auto pairs = build_pairs(rankings("s", {"DCBA", "DCBA"}));
    ASSERT_EQ(pairs.size(), 6u);
    for (const auto& p : pairs) EXPECT_EQ(p.human_winner, Verdict::B);
}

TEST(BuildPairs, AnnotatorTieDropsPair) {
    std::vector<AnnotationRecord> a;
    for (int k = 0; k < 3; ++k) {
        const std::string ann = "ann" + std::to_string(k);
        a.push_back(rec("s", "A", ann, 1));
        a.push_back(rec("s", "B", ann, 1));
        a.push_back(rec("s", "C", ann, 3));
    }
    const auto pairs = build_pairs(a);
    EXPECT_EQ(pairs.size(), 2u);
    for (const auto& p : pairs) EXPECT_EQ(p.video_b, "C");
}

TEST(BuildPairs, IncompleteSampleIsSkipped) {
    auto a = rankings("full", {"ABC", "BAC"});
    auto partial = rankings("part", {"ABC", "ABC"});
    partial.pop_back();  // ann1 did not rank C
    a.insert(a.end(), partial.begin(), partial.end());
    PairBuildStats st;
    const auto pairs = build_pairs(a, &st);
    EXPECT_EQ(st.samples, 2u);
    EXPECT_EQ(st.samples_skipped, 1u);
    for (const auto& p : pairs) EXPECT_EQ(p.sample_id, "full");
    EXPECT_EQ(pairs.size(), 2u);  // (A,C), (B,C)
}

TEST(Annotations, JsonlRoundTripAndValidation) {
    auto a = rankings("s", {"AB"});
    a[0].generator = "gen1";
    std::stringstream ss;
    write_annotations_jsonl(ss, a);
    const auto back = read_annotations_jsonl(ss);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].generator, "gen1");
    EXPECT_EQ(back[1].rank_position, 2);
    std::stringstream bad("{\"sample_id\":\"s\",\"video_id\":\"v\",\"annotator_id\":\"a\",\"lipsync\":7,"
                          "\"expressive\":3,\"motion\":3,\"rank_position\":1}\n");
    EXPECT_THROW(read_annotations_jsonl(bad), Error);
}

// --- predictions ------------------------------------------------------------------

TEST(ScoreBased, Examples) {
    const auto p = pair("x", "y", Verdict::A, Verdict::tie);
    EXPECT_EQ(score_based_predict({{"x", 3.2}, {"y", 3.0}}, p), Verdict::A);
    EXPECT_EQ(score_based_predict({{"x", 3.0}, {"y", 3.0}}, p), Verdict::tie);
    EXPECT_EQ(score_based_predict({{"x", 2.0}, {"y", 3.0}}, p), Verdict::B);
    EXPECT_THROW(score_based_predict({{"x", 3.0}}, p), DataError);
}

TEST(ScoreBased, MultiAspectMean) {
    // Per-video score is the mean of three aspect scores.
    const std::map<std::string, double> s{{"x", (4 + 3 + 5) / 3.0}, {"y", (5 + 5 + 1) / 3.0}};
    EXPECT_EQ(score_based_predict(s, pair("x", "y", Verdict::A, Verdict::tie)), Verdict::A);
}

TEST(ScoreBased, SwapMetamorphic) {
    Rng rng(3);
    for (int k = 0; k < 200; ++k) {
        std::map<std::string, double> s{{"p", std::round(rng.uniform() * 4) + 1}, {"q", std::round(rng.uniform() * 4) + 1}};
        const Verdict v = score_based_predict(s, pair("p", "q", Verdict::A, Verdict::tie));
        const Verdict w = score_based_predict(s, pair("q", "p", Verdict::B, Verdict::tie));
        if (v == Verdict::tie) {
            EXPECT_EQ(w, Verdict::tie);
        } else {
            EXPECT_NE(v, w);
        }
    }
}

TEST(Comparison, OrderMapping) {
    FirstPositionJudge first;
    ComparisonConfig cfg;
    // Find a pair shown swapped, and one shown as is.
    int found = 0;
    for (int i = 0; i < 50 && found != 3; ++i) {
        const auto p = pair("a" + std::to_string(i), "b" + std::to_string(i), Verdict::A, Verdict::tie);
        const bool sw = presentation_swapped(p, cfg.seed);
        EXPECT_EQ(comparison_predict(p, cfg, first), sw ? Verdict::B : Verdict::A);
        found |= sw ? 1 : 2;
    }
    EXPECT_EQ(found, 3);
    cfg.randomize_order = false;
    EXPECT_EQ(comparison_predict(pair("a", "b", Verdict::A, Verdict::tie), cfg, first), Verdict::A);
}

TEST(Comparison, PositionalBiasCancels) {
    std::vector<PreferenceRecord> pairs;
    for (int i = 0; i < 1000; ++i) pairs.push_back(pair("x" + std::to_string(i), "y" + std::to_string(i), Verdict::A, Verdict::tie));
    FirstPositionJudge first;
    ComparisonConfig cfg;
    cfg.seed = 2024;
    predict_by_comparison(pairs, cfg, first);
    std::size_t a = 0;
    for (const auto& p : pairs) a += p.evaluator_prediction == Verdict::A;
    EXPECT_LE(std::abs(static_cast<double>(a) - 500.0), 3.0 * std::sqrt(1000 * 0.25));
}

TEST(Comparison, RelabelingDoesNotChangeChosenVideo) {
    FirstPositionJudge first;
    ComparisonConfig cfg;
    for (int i = 0; i < 100; ++i) {
        const auto p = pair("m" + std::to_string(i), "n" + std::to_string(i), Verdict::A, Verdict::tie);
        const auto q = pair(p.video_b, p.video_a, Verdict::B, Verdict::tie);
        EXPECT_EQ(p.pair_id(), q.pair_id());
        const Verdict vp = comparison_predict(p, cfg, first), vq = comparison_predict(q, cfg, first);
        const auto& winner_p = vp == Verdict::A ? p.video_a : p.video_b;
        const auto& winner_q = vq == Verdict::A ? q.video_a : q.video_b;
        EXPECT_EQ(winner_p, winner_q);
    }
}

TEST(Comparison, OracleJudgeIsPerfectForEveryStrategy) {
    auto pairs = build_pairs(rankings("s", {"CADB", "CADB", "CADB"}));
    auto more = build_pairs(rankings("t", {"FE", "FE"}));  // video ids are unique across samples
    pairs.insert(pairs.end(), more.begin(), more.end());
    for (auto strategy : {CompareStrategy::direct, CompareStrategy::icl, CompareStrategy::multi_agent}) {
        OracleComparisonJudge oracle(pairs);
        ComparisonConfig cfg;
        cfg.strategy = strategy;
        auto work = pairs;
        predict_by_comparison(work, cfg, oracle);
        const auto r = alignment_metrics(work);
        EXPECT_EQ(r.acc, 1.0) << to_string(strategy);
        EXPECT_EQ(r.coverage, 1.0);
        EXPECT_EQ(parse_compare_strategy(to_string(strategy)), strategy);
    }
}

TEST(Comparison, JudgeErrorsNameThePair) {
    class Broken final : public JudgeClient {
    public:
        std::string complete(const JudgeRequest&) override { return "{\"choice\": \"neither\"}"; }
    } broken;
    const auto p = pair("a", "b", Verdict::A, Verdict::tie);
    try {
        comparison_predict(p, ComparisonConfig{}, broken);
        FAIL();
    } catch (const JudgeError& e) {
        EXPECT_NE(std::string(e.what()).find(p.pair_id()), std::string::npos);
    }
}

// --- metrics ------------------------------------------------------------------

TEST(Metrics, WorkedFixture) {
    const std::vector<PreferenceRecord> r{
        pair("a", "b", Verdict::A, Verdict::A), pair("c", "d", Verdict::B, Verdict::B),
        pair("e", "f", Verdict::A, Verdict::A), pair("g", "h", Verdict::B, Verdict::tie)};
    const auto m = alignment_metrics(r);
    EXPECT_EQ(m.acc, 0.875);
    EXPECT_EQ(m.acc_nt, 1.0);
    EXPECT_EQ(m.coverage, 0.75);
    EXPECT_EQ(m.correct, 3u);
    EXPECT_EQ(m.ties, 1u);
    expect_identity(m);
}

TEST(Metrics, AllTiesAndEmpty) {
    const std::vector<PreferenceRecord> r{pair("a", "b", Verdict::A, Verdict::tie), pair("c", "d", Verdict::B, Verdict::tie)};
    const auto m = alignment_metrics(r);
    EXPECT_EQ(m.acc, 0.5);
    EXPECT_EQ(m.coverage, 0.0);
    EXPECT_EQ(m.acc_nt, 0.0);
    expect_identity(m);
    EXPECT_THROW(alignment_metrics(std::vector<PreferenceRecord>{}), ConfigError);
}

TEST(Metrics, MatchesRecount) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto r = random_pairs(50, seed);
        std::size_t correct = 0, ties = 0;
        for (const auto& p : r) {
            if (p.evaluator_prediction == Verdict::tie) {
                ++ties;
            } else if (p.evaluator_prediction == p.human_winner) {
                ++correct;
            }
        }
        const auto m = alignment_metrics(r);
        EXPECT_EQ(m.correct, correct);
        EXPECT_EQ(m.ties, ties);
        EXPECT_EQ(m.n_pairs, 50u);
        EXPECT_DOUBLE_EQ(m.acc, (correct + 0.5 * ties) / 50.0);
        EXPECT_DOUBLE_EQ(m.coverage, (50.0 - ties) / 50.0);
        EXPECT_DOUBLE_EQ(m.acc_nt, static_cast<double>(correct) / (50.0 - ties));
        expect_identity(m);
    }
}

TEST(Metrics, PerGeneratorErrors) {
    auto r = std::vector<PreferenceRecord>{pair("a", "b", Verdict::A, Verdict::B), pair("c", "d", Verdict::A, Verdict::tie),
                                           pair("e", "f", Verdict::A, Verdict::A)};
    r[0].generator_a = "zeta";
    r[0].generator_b = "alpha";
    r[1].generator_a = "alpha";
    r[1].generator_b = "zeta";
    r[2].generator_a = r[2].generator_b = "alpha";
    const auto m = alignment_metrics(r);
    ASSERT_EQ(m.per_generator_error.count("alpha|zeta"), 1u);
    EXPECT_EQ(m.per_generator_error.at("alpha|zeta").pairs, 2u);
    EXPECT_DOUBLE_EQ(m.per_generator_error.at("alpha|zeta").errors, 1.5);
    EXPECT_DOUBLE_EQ(m.per_generator_error.at("alpha|alpha").rate(), 0.0);
}

TEST(Metrics, ReportFiles) {
    flowrl::testing::TempDir dir("report");
    const auto r = random_pairs(10, 1);
    const auto m = alignment_metrics(r);
    PairBuildStats st{2, 0, 12, 10};
    write_report_json(dir / "report.json", m, &st);
    std::ifstream is(dir / "report.json");
    const auto j = nlohmann::json::parse(is);
    EXPECT_EQ(j.at("acc").get<double>(), m.acc);
    EXPECT_EQ(j.at("n_pairs"), 10);
    EXPECT_EQ(j.at("pairs").at("consensus_pairs"), 10);
    write_generator_error_csv(dir / "gen.csv", m);
    std::ifstream cs(dir / "gen.csv");
    std::string header;
    std::getline(cs, header);
    EXPECT_EQ(header, "generators,pairs,errors,error_rate");
}

// --- SSIM ----------------------------------------------------------------------

TEST(Ssim, Examples) {
    Rng rng(1);
    std::vector<double> a(256), inv(256);
    for (double& x : a) x = rng.uniform();
    for (std::size_t k = 0; k < 256; ++k) inv[k] = 1.0 - a[k];
    const FrameView fa{a, 16, 16}, fi{inv, 16, 16};
    EXPECT_NEAR(ssim(fa, fa), 1.0, 1e-12);
    EXPECT_LT(ssim(fa, fi), 1.0);
    EXPECT_GE(ssim(fa, fi), -1.0);
    std::vector<double> small(36, 0.5);
    EXPECT_THROW(ssim(FrameView{small, 6, 6}, FrameView{small, 6, 6}), ShapeError);
}

TEST(Ssim, MatchesSlidingWindowOracle) {
    Rng rng(2);
    const SsimConfig cfg;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    for (int k = 0; k < 10; ++k) {
        std::vector<double> a(256), b(256);
        for (double& x : a) x = rng.uniform();
        for (std::size_t i = 0; i < 256; ++i) b[i] = std::clamp(a[i] + 0.2 * rng.normal(), 0.0, 1.0);
        const FrameView fa{a, 16, 16}, fb{b, 16, 16};
        const double got = ssim(fa, fb, cfg);
        EXPECT_NEAR(got, oracle::ssim(fa, fb, 7, c1, c2), 1e-8);
        EXPECT_LE(got, 1.0);
        EXPECT_GE(got, -1.0);
    }
}
