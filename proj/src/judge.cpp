#include "flowrl/judge.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <png.h>
#include <spdlog/spdlog.h>
#include <zlib.h>

#include "flowrl/encoding.hpp"
#include "flowrl/errors.hpp"

namespace flowrl {

using json = nlohmann::json;

std::string_view to_string(Aspect a) {
    switch (a) {
        case Aspect::lipsync: return "lipsync";
        case Aspect::expressive: return "expressive";
        case Aspect::motion: return "motion";
    }
    return "?";
}

Aspect parse_aspect(std::string_view s) {
    if (s == "lipsync") return Aspect::lipsync;
    if (s == "expressive") return Aspect::expressive;
    if (s == "motion") return Aspect::motion;
    throw ConfigError("unknown aspect '" + std::string(s) + "'");
}

// --- prompts -----------------------------------------------------------------

namespace {

constexpr std::string_view kOutputConstraints = R"(Output Constraints:
1. Put all reasoning and analysis inside <think>...</think>.
2. After </think>, output only a valid JSON object with key "score" and an integer 1-5.
3. Do not include natural language, commentary, markdown, or extra quotes outside the <think> block.
4. The final JSON must be valid and contain only the score.

Example Output:
<think>
(detailed reasoning here, free-form, any text allowed)
</think>
{"score": integer between 1 and 5})";

constexpr std::string_view kLipsyncPrompt =
    R"(Prompt Name: Lip-Sync Evaluation Prompt (Single-Video, Single-Aspect)

Role: You are a specialized analyst focusing on audio-visual synchronization in digital media. Your expertise lies in phonetics and the precise mapping of mouth movements to speech.

Context: You will analyze a single video. Your sole focus is to evaluate and score its lip-sync quality. You must ignore all other aspects like emotional expression or head movement.

Primary Objective: Conduct a rigorous analysis and scoring of the lip-sync quality for this video. Your analysis must justify the score given and return a JSON dictionary with the score.

Evaluation Criteria:
- Precision: How accurately do the lip movements match vowel/consonant shapes (visemes)?
- Timing: Any noticeable delay/lead between audio and corresponding lip movements?
- Naturalness: Human/fluid vs. artificial/robotic/flappy; warping or artifacts around the mouth?

Scoring Rubric (1-5):
- 5 (Perfect): Precision matches all phonemes; timing perfectly synchronized; natural, fluid, no artifacts.
- 4 (Excellent): Mostly correct visemes with subtle inaccuracies; near-imperceptible lag/lead; slightly scripted.
- 3 (Good/Acceptable): Generally correct but simplified/puppet-like; slight consistent lag/lead; minor artifacts possible.
- 2 (Poor): Frequently incorrect visemes; clearly off-sync and distracting; robotic/jerky, obvious warping/flapping.
- 1 (Failure): No correlation to speech; severely out of sync; bizarre/distorted/nonsensical or static mouth.

)";

constexpr std::string_view kExpressivePrompt =
    R"(Prompt Name: Facial Expressiveness Evaluation Prompt (Single-Video, Single-Aspect)

Role: You are a specialized analyst in human emotion and facial expression, with expertise in facial action coding systems (FACS) and psychological realism in digital actors.

Context: You will analyze a single video. Your sole focus is to evaluate and score its facial expressiveness and emotional authenticity. You must apply the scoring rubric below to assign a score from 1 to 5.

Primary Objective: Conduct a rigorous analysis of the video's facial expressiveness, assign a score based on the provided rubric, and return a JSON dictionary with the score.

Evaluation Criteria:
- Emotional Match: Does the facial expression accurately reflect the audio's tone, sentiment, and emphasis?
- Realism & Subtlety: Are there subtle micro-expressions (e.g., brow movements, eye crinkling, cheek twitches), or does the face appear uncanny or plastic?
- Natural Dynamics: Do expressions transition smoothly with speech, or appear robotic, delayed, or disconnected?

Scoring Rubric (1-5):
- 5 (Excellent): Perfect emotional alignment with the audio; rich micro-expressions; fully genuine and human-like.
- 4 (Good): Strong emotional match with minor inconsistencies; realistic but slightly acted or less nuanced.
- 3 (Average): Generally appropriate emotion but muted, delayed, or underspecified; mildly uncanny or plastic.
- 2 (Poor): Clear emotional mismatch or fixed neutral/awkward state; highly unnatural and artificial.
- 1 (Very Poor): Completely incorrect or absent emotion; static, mask-like, or mannequin-like face.

)";

constexpr std::string_view kMotionPrompt =
    R"(Prompt Name: Motion Smoothness and Background Quality Evaluation Prompt (Single-Video, Single-Aspect)

Role: You are a specialized analyst in motion quality and video composition. Your expertise lies in identifying motion artifacts, assessing movement naturalness, and spotting background anomalies in synthesized media.

Context: You will analyze a single video. Your sole focus is to evaluate and score its motion smoothness and background integrity. You must ignore all other aspects such as lip-sync or facial emotion.

Primary Objective: Conduct a rigorous analysis of the video's motion quality and background stability, assign a score using the provided rubric, and return a JSON dictionary with the score.

Evaluation Criteria:
- Head Movement: Are head motions smooth, fluid, and purposeful, or stiff, jittery, and robotic?
- Subtle Motions: Are natural micro-movements (e.g., blinking, slight tilts, posture shifts) present and realistic?
- Consistency: Does motion remain coherent and human-like throughout, without locking or abrupt artifacts?
- Background Quality: Is the background stable, with clean edges around hair and shoulders, or does it exhibit warping, shimmering, or distortion?

Scoring Rubric (1-5):
- 5 (Excellent): Perfectly smooth and purposeful head motion; rich subtle movements; fully consistent and human-like; background entirely stable with no artifacts.
- 4 (Good): Smooth and consistent motion but somewhat simple or repetitive; natural blinking; minor, non-distracting background artifacts.
- 3 (Average): Slightly stiff, jerky, or floaty motion; unnatural blinking cadence or frequent stillness; noticeable but moderate background warping or blur.
- 2 (Poor): Clearly robotic or jittery motion with unnatural jerks; no subtle movements; distracting instability; obvious background distortion or melting.
- 1 (Failure): Completely static or locked head; frozen face with no movement; entirely artificial appearance; severe background and subject distortion.

)";

constexpr std::string_view kChoiceConstraints = R"(Output Constraints:
1. Put all reasoning and analysis inside <think>...</think>.
2. After </think>, output only a valid JSON object with key "choice" whose value is "first" or "second".
3. Do not include natural language, commentary, markdown, or extra quotes outside the <think> block.

Example Output:
<think>
(detailed reasoning here, free-form, any text allowed)
</think>
{"choice": "first"})";

std::string_view aspect_title(Aspect a) {
    switch (a) {
        case Aspect::lipsync: return "lip-sync quality";
        case Aspect::expressive: return "facial expressiveness";
        case Aspect::motion: return "motion smoothness and background quality";
    }
    return "";
}

}  // namespace

std::string aspect_prompt(Aspect aspect) {
    std::string_view body;
    switch (aspect) {
        case Aspect::lipsync: body = kLipsyncPrompt; break;
        case Aspect::expressive: body = kExpressivePrompt; break;
        case Aspect::motion: body = kMotionPrompt; break;
    }
    return std::string(body) + std::string(kOutputConstraints);
}

std::string holistic_prompt() {
    return "Prompt Name: Holistic Evaluation Prompt (Single-Video, Single-Aspect)\n\n"
           "Role: You are an expert reviewer of audio-driven portrait animation.\n\n"
           "Context: You will analyze a single video and assign one overall quality score "
           "that jointly reflects lip-sync quality, facial expressiveness, and motion "
           "smoothness, following the human annotation rubric (1 = worst, 5 = best).\n\n" +
           std::string(kOutputConstraints);
}

std::string multi_aspect_prompt() {
    std::string p =
        "Prompt Name: Multi-Aspect Evaluation Prompt (Single-Video, Multi-Aspect)\n\n"
        "Context: You will analyze a single video and score three aspects separately, "
        "each on a 1-5 scale: lip-sync quality, facial expressiveness, and motion "
        "smoothness.\n\n"
        "Output Constraints:\n"
        "1. Put all reasoning and analysis inside <think>...</think>.\n"
        "2. After </think>, output only a valid JSON object with integer keys "
        "\"lipsync\", \"expressive\", and \"motion\", each between 1 and 5.\n\n"
        "Example Output:\n<think>\n(detailed reasoning here)\n</think>\n"
        "{\"lipsync\": 4, \"expressive\": 3, \"motion\": 5}";
    return p;
}

std::string comparison_prompt(bool with_examples) {
    std::string p =
        "Prompt Name: Pairwise Comparison Prompt (Two-Video, Forced Choice)\n\n"
        "Context: You will watch two portrait animations generated from the same audio "
        "and reference image, shown as \"first\" and \"second\". Decide which video has "
        "better overall quality, considering lip-sync, facial expressiveness, and motion "
        "smoothness. Ties are not allowed.\n\n";
    if (with_examples) {
        p += "In-context examples:\n"
             "- Lip-sync: the first video's mouth closes on bilabial sounds while the "
             "second lags by several frames -> first.\n"
             "- Expressiveness: the first face stays neutral through an emphatic phrase "
             "while the second raises its brows -> second.\n"
             "- Motion: the second video's head jitters between frames while the first "
             "moves smoothly -> first.\n\n";
    }
    return p + std::string(kChoiceConstraints);
}

std::string aspect_comparison_prompt(Aspect aspect) {
    return "Prompt Name: Pairwise Comparison Prompt (Two-Video, Single-Aspect)\n\n"
           "Context: You will watch two portrait animations, shown as \"first\" and "
           "\"second\". Your sole focus is " +
           std::string(aspect_title(aspect)) +
           "; ignore every other aspect. Decide which video is better on this aspect. "
           "Ties are not allowed.\n\n" +
           std::string(kChoiceConstraints);
}

std::string aggregation_prompt(const std::vector<std::pair<Aspect, int>>& decisions) {
    std::string p =
        "Prompt Name: Decision Aggregation Prompt\n\n"
        "Context: Three specialist reviewers compared the same two videos, each on one "
        "aspect. Their decisions were:\n";
    for (const auto& [aspect, choice] : decisions) {
        p += "- " + std::string(aspect_title(aspect)) + ": " + (choice == 0 ? "first" : "second") + "\n";
    }
    p += "\nCombine these decisions into one final preference between the two videos.\n\n";
    return p + std::string(kChoiceConstraints);
}

// --- reply parsing -----------------------------------------------------------

std::string strip_think_block(std::string_view text) {
    constexpr std::string_view open = "<think>";
    constexpr std::string_view close = "</think>";
    std::string_view rest = text;
    const auto end = text.find(close);
    if (end != std::string_view::npos) {
        rest = text.substr(end + close.size());
    } else if (text.find(open) != std::string_view::npos) {
        throw JudgeError(JudgeError::Kind::malformed_json, "judge reply has an unterminated think block");
    }
    const auto first = rest.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = rest.find_last_not_of(" \t\r\n");
    return std::string(rest.substr(first, last - first + 1));
}

namespace {

json parse_reply_object(std::string_view text) {
    const std::string body = strip_think_block(text);
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw JudgeError(JudgeError::Kind::malformed_json,
                         "judge reply is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw JudgeError(JudgeError::Kind::malformed_json, "judge reply is not a JSON object");
    return j;
}

int checked_score(const json& j, const char* key) {
    if (!j.contains(key)) {
        throw JudgeError(JudgeError::Kind::missing_score, std::string("judge reply lacks key '") + key + "'");
    }
    const auto& v = j.at(key);
    double x = 0.0;
    if (v.is_number_integer()) {
        x = static_cast<double>(v.get<std::int64_t>());
    } else if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>()) {
        x = v.get<double>();
    } else {
        throw JudgeError(JudgeError::Kind::malformed_json, std::string("judge '") + key + "' is not an integer");
    }
    if (x < 1.0 || x > 5.0) {
        throw JudgeError(JudgeError::Kind::out_of_range,
                         std::string("judge '") + key + "' " + std::to_string(static_cast<long long>(x)) +
                             " outside 1-5");
    }
    return static_cast<int>(x);
}

}  // namespace

int parse_judge_score(std::string_view text) { return checked_score(parse_reply_object(text), "score"); }

std::vector<int> parse_multi_aspect_scores(std::string_view text) {
    const json j = parse_reply_object(text);
    return {checked_score(j, "lipsync"), checked_score(j, "expressive"), checked_score(j, "motion")};
}

int parse_judge_choice(std::string_view text) {
    const json j = parse_reply_object(text);
    if (!j.contains("choice")) throw JudgeError(JudgeError::Kind::missing_score, "judge reply lacks key 'choice'");
    const auto& c = j.at("choice");
    if (c.is_string()) {
        std::string s = c.get<std::string>();
        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (s == "first" || s == "a" || s == "1") return 0;
        if (s == "second" || s == "b" || s == "2") return 1;
    } else if (c.is_number_integer()) {
        const auto v = c.get<std::int64_t>();
        if (v == 1) return 0;
        if (v == 2) return 1;
    }
    throw JudgeError(JudgeError::Kind::out_of_range, "judge choice must be \"first\" or \"second\"");
}

std::string format_score_reply(int score, std::string_view reasoning) {
    return "<think>" + std::string(reasoning) + "</think>\n" + json{{"score", score}}.dump();
}

std::string format_choice_reply(int index, std::string_view reasoning) {
    return "<think>" + std::string(reasoning) + "</think>\n" +
           json{{"choice", index == 0 ? "first" : "second"}}.dump();
}

// --- HTTP client -------------------------------------------------------------

void HttpJudgeConfig::validate() const {
    if (endpoint.empty()) throw ConfigError("judge endpoint URL is empty");
    if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0) {
        throw ConfigError("judge endpoint must start with http:// or https://");
    }
    if (timeout_ms <= 0) throw ConfigError("judge timeout_ms must be positive");
    if (max_inflight <= 0) throw ConfigError("judge max_inflight must be positive");
    if (retry.max_attempts <= 0) throw ConfigError("judge retries must allow at least one attempt");
}

HttpJudgeClient::HttpJudgeClient(HttpJudgeConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto scheme_end = cfg_.endpoint.find("://") + 3;
    const auto path_start = cfg_.endpoint.find('/', scheme_end);
    scheme_host_port_ = cfg_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : cfg_.endpoint.substr(path_start);
    if (!cfg_.api_key_env.empty()) {
        if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
    }
    inflight_ = std::make_unique<std::counting_semaphore<>>(cfg_.max_inflight);
}

HttpJudgeClient::~HttpJudgeClient() = default;

std::string HttpJudgeClient::complete(const JudgeRequest& request) {
    const std::string body =
        json{{"prompt", request.prompt}, {"video_b64", request.video_b64}, {"aspect", request.aspect}}.dump();

    inflight_->acquire();
    struct Release {
        std::counting_semaphore<>* s;
        ~Release() { s->release(); }
    } release{inflight_.get()};

    httplib::Client cli(scheme_host_port_);
    const auto timeout = std::chrono::milliseconds(cfg_.timeout_ms);
    cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                               static_cast<time_t>((timeout.count() % 1000) * 1000));
    cli.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                         static_cast<time_t>((timeout.count() % 1000) * 1000));
    cli.set_write_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                          static_cast<time_t>((timeout.count() % 1000) * 1000));
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    auto backoff = cfg_.retry.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
        last_attempts_ = attempt;
        auto res = cli.Post(path_, headers, body, "application/json");
        if (res && res->status == 200) {
            try {
                const auto j = json::parse(res->body);
                return j.at("text").get<std::string>();
            } catch (const json::exception& e) {
                last_error = "endpoint reply is not {\"text\": ...}: " + std::string(e.what());
            }
        } else if (res) {
            last_error = "endpoint returned HTTP " + std::to_string(res->status);
            // Client errors other than rate limiting will not succeed on retry.
            if (res->status >= 400 && res->status < 500 && res->status != 429) break;
        } else {
            last_error = "transport failure: " + httplib::to_string(res.error());
        }
        if (attempt < cfg_.retry.max_attempts) {
            spdlog::warn("judge request failed ({}), retrying in {} ms", last_error, backoff.count());
            std::this_thread::sleep_for(backoff);
            backoff = std::chrono::milliseconds(
                static_cast<std::int64_t>(static_cast<double>(backoff.count()) * cfg_.retry.backoff_multiplier));
        }
    }
    throw JudgeError(JudgeError::Kind::transport, "judge endpoint " + cfg_.endpoint + ": " + last_error);
}

// --- video payload -----------------------------------------------------------

namespace {

std::vector<unsigned char> encode_png(std::span<const double> pixels, std::size_t height, std::size_t width) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw Error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    std::vector<unsigned char> out;
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("PNG encoding failed");
    }
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t len) {
            auto* buf = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(p));
            buf->insert(buf->end(), data, data + len);
        },
        nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(width);
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            const double v = std::clamp(pixels[r * width + c], 0.0, 1.0);
            row[c] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

void put16(std::vector<unsigned char>& b, std::uint32_t v) {
    b.push_back(static_cast<unsigned char>(v & 0xff));
    b.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}
void put32(std::vector<unsigned char>& b, std::uint32_t v) {
    put16(b, v & 0xffff);
    put16(b, v >> 16);
}

struct ZipEntry {
    std::string name;
    std::vector<unsigned char> data;
};

std::vector<unsigned char> zip_stored(const std::vector<ZipEntry>& entries) {
    std::vector<unsigned char> out, central;
    for (const auto& e : entries) {
        const auto crc = static_cast<std::uint32_t>(crc32(0L, e.data.data(), static_cast<uInt>(e.data.size())));
        const auto offset = static_cast<std::uint32_t>(out.size());
        const auto size = static_cast<std::uint32_t>(e.data.size());
        const auto name_len = static_cast<std::uint32_t>(e.name.size());
        put32(out, 0x04034b50);
        put16(out, 20);  // version needed
        put16(out, 0);   // flags
        put16(out, 0);   // stored
        put16(out, 0);   // mod time
        put16(out, 0x21);  // mod date 1980-01-01
        put32(out, crc);
        put32(out, size);
        put32(out, size);
        put16(out, name_len);
        put16(out, 0);
        out.insert(out.end(), e.name.begin(), e.name.end());
        out.insert(out.end(), e.data.begin(), e.data.end());

        put32(central, 0x02014b50);
        put16(central, 20);
        put16(central, 20);
        put16(central, 0);
        put16(central, 0);
        put16(central, 0);
        put16(central, 0x21);
        put32(central, crc);
        put32(central, size);
        put32(central, size);
        put16(central, name_len);
        put16(central, 0);
        put16(central, 0);
        put16(central, 0);
        put16(central, 0);
        put32(central, 0);
        put32(central, offset);
        central.insert(central.end(), e.name.begin(), e.name.end());
    }
    const auto cd_offset = static_cast<std::uint32_t>(out.size());
    const auto cd_size = static_cast<std::uint32_t>(central.size());
    out.insert(out.end(), central.begin(), central.end());
    put32(out, 0x06054b50);
    put16(out, 0);
    put16(out, 0);
    put16(out, static_cast<std::uint32_t>(entries.size()));
    put16(out, static_cast<std::uint32_t>(entries.size()));
    put32(out, cd_size);
    put32(out, cd_offset);
    put16(out, 0);
    return out;
}

void append_frames(std::vector<ZipEntry>& entries, const VideoTensor& video, std::string_view prefix) {
    char name[32];
    for (std::size_t t = 0; t < video.num_frames(); ++t) {
        std::snprintf(name, sizeof name, "frame_%03zu.png", t);
        entries.push_back({std::string(prefix) + name, encode_png(video.frame(t), video.height(), video.width())});
    }
}

}  // namespace

std::vector<unsigned char> encode_video_zip(const VideoTensor& video, std::string_view prefix) {
    video.validate();
    std::vector<ZipEntry> entries;
    append_frames(entries, video, prefix);
    return zip_stored(entries);
}

std::vector<unsigned char> encode_video_pair_zip(const VideoTensor& first, const VideoTensor& second) {
    first.validate();
    second.validate();
    std::vector<ZipEntry> entries;
    append_frames(entries, first, "first/");
    append_frames(entries, second, "second/");
    return zip_stored(entries);
}

}  // namespace flowrl
