#include "flowrl/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "flowrl/errors.hpp"
#include "flowrl/json_fields.hpp"

namespace flowrl {

using json = nlohmann::json;

std::string_view to_string(Codec c) { return c == Codec::identity ? "identity" : "pool2"; }

Codec parse_codec(std::string_view s) {
    if (s == "identity") return Codec::identity;
    if (s == "pool2") return Codec::pool2;
    throw ConfigError("unknown codec '" + std::string(s) + "' (identity|pool2)");
}

void ToyConfig::validate() const {
    if (frame_size < 4) throw ConfigError("toy frame_size must be >= 4");
    if (num_frames < 3) throw ConfigError("toy num_frames must be >= 3 (jitter needs two flow pairs)");
    if (!(blob_sigma > 0.0)) throw ConfigError("toy blob_sigma must be positive");
    if (!(3.0 * blob_sigma < frame_size / 2.0)) throw ConfigError("toy blob does not fit: need 3*sigma < H/2");
    if (!(amplitude > 0.0 && amplitude < 1.0)) throw ConfigError("toy amplitude must lie in (0,1)");
    if (codec == Codec::pool2 && frame_size % 2 != 0) throw ConfigError("pool2 codec needs an even frame_size");
}

std::size_t ToyConfig::frame_pixels() const {
    return static_cast<std::size_t>(frame_size) * static_cast<std::size_t>(frame_size);
}

std::size_t ToyConfig::latent_dim() const {
    const auto t = static_cast<std::size_t>(num_frames);
    return codec == Codec::identity ? t * frame_pixels() : t * frame_pixels() / 4;
}

void to_json(json& j, const ToyConfig& c) {
    j = json{{"frame_size", c.frame_size}, {"num_frames", c.num_frames}, {"blob_sigma", c.blob_sigma},
             {"amplitude", c.amplitude},   {"seed", c.seed},             {"codec", to_string(c.codec)}};
}

void from_json(const json& j, ToyConfig& c) {
    json_fields::reject_unknown(j, "toy", {"frame_size", "num_frames", "blob_sigma", "amplitude", "seed", "codec"});
    json_fields::read(j, "toy", "frame_size", c.frame_size);
    json_fields::read(j, "toy", "num_frames", c.num_frames);
    json_fields::read(j, "toy", "blob_sigma", c.blob_sigma);
    json_fields::read(j, "toy", "amplitude", c.amplitude);
    json_fields::read(j, "toy", "seed", c.seed);
    std::string codec(to_string(c.codec));
    json_fields::read(j, "toy", "codec", codec);
    c.codec = parse_codec(codec);
}

// --- generation ----------------------------------------------------------------

NumericArray smooth_signal(int length, Rng& rng) {
    if (length < 1) throw ConfigError("signal length must be >= 1");
    std::vector<double> noise(static_cast<std::size_t>(length) + 2);
    rng.fill_normal(noise);
    std::vector<double> s(static_cast<std::size_t>(length));
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = (noise[i] + noise[i + 1] + noise[i + 2]) / 3.0;
    const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    const double mn = *lo, range = *hi - *lo;
    if (range > 0.0) {
        for (double& x : s) x = 2.0 * (x - mn) / range - 1.0;
    } else {
        std::fill(s.begin(), s.end(), 0.0);
    }
    return NumericArray::from_vector(std::move(s));
}

VideoTensor render_video(std::span<const double> signal, const ToyConfig& cfg) {
    cfg.validate();
    const auto h = static_cast<std::size_t>(cfg.frame_size);
    const auto t_count = signal.size();
    if (t_count == 0) throw ShapeError("render_video: empty signal");
    const double mid = (static_cast<double>(h) - 1.0) / 2.0;
    const double half = static_cast<double>(h) / 2.0;
    const double inv2s2 = 1.0 / (2.0 * cfg.blob_sigma * cfg.blob_sigma);
    VideoTensor v{NumericArray({t_count, h, h})};
    auto px = v.frames.values();
    for (std::size_t t = 0; t < t_count; ++t) {
        const double cr = mid + cfg.amplitude * half * signal[t];
        for (std::size_t r = 0; r < h; ++r) {
            const double dr = static_cast<double>(r) - cr;
            for (std::size_t c = 0; c < h; ++c) {
                const double dc = static_cast<double>(c) - mid;
                const double value = std::exp(-(dr * dr + dc * dc) * inv2s2);
                px[(t * h + r) * h + c] = static_cast<double>(static_cast<float>(value));
            }
        }
    }
    return v;
}

ToySample make_sample(std::span<const double> signal, const ToyConfig& cfg, std::uint64_t id) {
    ToySample s;
    s.id = id;
    s.video = render_video(signal, cfg);
    s.condition.signal = NumericArray::from_vector(std::vector<double>(signal.begin(), signal.end()));
    const auto first = s.video.frame(0);
    s.condition.reference = NumericArray::from_vector(std::vector<double>(first.begin(), first.end()));
    s.latent = encode(s.video, cfg);
    return s;
}

ToySample generate_sample(const ToyConfig& cfg, Rng& rng, std::uint64_t id) {
    cfg.validate();
    const auto signal = smooth_signal(cfg.num_frames, rng);
    // Signals are stored as float32 on disk; round now so regenerated and loaded samples agree.
    std::vector<double> s(signal.values().begin(), signal.values().end());
    for (double& x : s) x = static_cast<double>(static_cast<float>(x));
    return make_sample(s, cfg, id);
}

ToySample generate_sample(const ToyConfig& cfg, std::uint64_t id) {
    Rng rng(derive_seed(cfg.seed, {id}));
    return generate_sample(cfg, rng, id);
}

// --- codec -------------------------------------------------------------------

LatentState encode(const VideoTensor& video, const ToyConfig& cfg) {
    const auto h = static_cast<std::size_t>(cfg.frame_size);
    if (video.frames.rank() != 3 || video.height() != h || video.width() != h) {
        throw ShapeError("encode: video shape " + video.frames.shape_string() + " does not match the toy config");
    }
    const auto v = video.frames.values();
    if (cfg.codec == Codec::identity) return LatentState(std::vector<double>(v.begin(), v.end()));
    const std::size_t oh = h / 2, t_count = video.num_frames();
    std::vector<double> z(t_count * oh * oh);
    for (std::size_t t = 0; t < t_count; ++t) {
        const double* f = v.data() + t * h * h;
        for (std::size_t r = 0; r < oh; ++r) {
            for (std::size_t c = 0; c < oh; ++c) {
                z[(t * oh + r) * oh + c] = 0.25 * (f[2 * r * h + 2 * c] + f[2 * r * h + 2 * c + 1] +
                                                   f[(2 * r + 1) * h + 2 * c] + f[(2 * r + 1) * h + 2 * c + 1]);
            }
        }
    }
    return LatentState(std::move(z));
}

VideoTensor decode(std::span<const double> latent, const ToyConfig& cfg) {
    require_same_size(latent.size(), cfg.latent_dim(), "decode latent");
    const auto h = static_cast<std::size_t>(cfg.frame_size);
    const auto t_count = static_cast<std::size_t>(cfg.num_frames);
    VideoTensor v{NumericArray({t_count, h, h})};
    auto px = v.frames.values();
    auto clamp01 = [](double x) { return std::isnan(x) ? 0.0 : std::clamp(x, 0.0, 1.0); };
    if (cfg.codec == Codec::identity) {
        for (std::size_t i = 0; i < latent.size(); ++i) px[i] = clamp01(latent[i]);
        return v;
    }
    const std::size_t oh = h / 2;
    for (std::size_t t = 0; t < t_count; ++t) {
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < h; ++c) {
                px[(t * h + r) * h + c] = clamp01(latent[(t * oh + r / 2) * oh + c / 2]);
            }
        }
    }
    return v;
}

// --- read-out and mock judges --------------------------------------------------

NumericArray extract_position(const VideoTensor& video) {
    if (video.frames.rank() != 3 || video.num_frames() == 0) throw ShapeError("extract_position: empty video");
    const std::size_t h = video.height(), w = video.width();
    const double mid = (static_cast<double>(h) - 1.0) / 2.0;
    const double half = static_cast<double>(h) / 2.0;
    std::vector<double> pos(video.num_frames());
    for (std::size_t t = 0; t < pos.size(); ++t) {
        const auto f = video.frame(t);
        double mass = 0.0, moment = 0.0;
        for (std::size_t r = 0; r < h; ++r) {
            double row = 0.0;
            for (std::size_t c = 0; c < w; ++c) row += f[r * w + c];
            mass += row;
            moment += row * static_cast<double>(r);
        }
        if (!(mass > 0.0)) {
            throw NumericError("extract_position: frame " + std::to_string(t) + " has no intensity");
        }
        pos[t] = (moment / mass - mid) / half;
    }
    return NumericArray::from_vector(std::move(pos));
}

namespace {

double pearson(std::span<const double> a, std::span<const double> b, bool& defined) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    constexpr double kTiny = 1e-18;
    defined = saa > kTiny && sbb > kTiny;
    return defined ? sab / std::sqrt(saa * sbb) : 0.0;
}

double range_of(std::span<const double> x) {
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    return *hi - *lo;
}

double clamp15(double s) { return std::clamp(s, 1.0, 5.0); }

}  // namespace

MockScores mock_scores_from_position(std::span<const double> position, std::span<const double> signal,
                                     double amplitude, const MockJudgeConstants& k) {
    require_same_size(position.size(), signal.size(), "mock judge position/signal");
    if (position.empty()) throw ShapeError("mock judges need at least one frame");
    MockScores s;
    bool defined = false;
    const double corr = pearson(position, signal, defined);
    if (defined) {
        s.lipsync = clamp15(k.lip_offset + k.lip_slope * corr);
    } else {
        s.lipsync = 3.0;
        s.degenerate = true;
    }
    const double signal_range = amplitude * range_of(signal);
    if (signal_range > 0.0) {
        s.expressive = clamp15(k.expr_offset + k.expr_slope * range_of(position) / signal_range);
    } else {
        s.expressive = 3.0;
        s.degenerate = true;
    }
    double d2 = 0.0;
    if (position.size() >= 3) {
        for (std::size_t t = 1; t + 1 < position.size(); ++t) {
            d2 += std::abs(position[t + 1] - 2.0 * position[t] + position[t - 1]);
        }
        d2 /= static_cast<double>(position.size() - 2);
    }
    s.motion = clamp15(5.0 - k.motion_scale * d2);
    return s;
}

MockScores mock_judges(const VideoTensor& video, const Condition& condition, const ToyConfig& cfg,
                       const MockJudgeConstants& k) {
    const auto pos = extract_position(video);
    return mock_scores_from_position(pos.values(), condition.signal.values(), cfg.amplitude, k);
}

AspectScores MockToyJudge::score(const VideoTensor& video, const Condition& condition) const {
    const auto m = mock_judges(video, condition, cfg_, k_);
    return {m.lipsync, m.expressive, m.motion, m.degenerate};
}

std::string MockToyJudgeClient::complete(const JudgeRequest& request) {
    if (!request.video || !request.condition) {
        throw JudgeError(JudgeError::Kind::transport, "mock toy judge needs the in-process video and condition");
    }
    const auto m = mock_judges(*request.video, *request.condition, cfg_, k_);
    double s = 0.0;
    if (request.aspect == "lipsync") {
        s = m.lipsync;
    } else if (request.aspect == "expressive") {
        s = m.expressive;
    } else if (request.aspect == "motion") {
        s = m.motion;
    } else {
        throw JudgeError(JudgeError::Kind::transport, "mock toy judge does not handle aspect '" + request.aspect + "'");
    }
    return format_score_reply(static_cast<int>(std::lround(s)), "mock toy judge");
}

// --- files -------------------------------------------------------------------

void write_sample(const std::filesystem::path& path, const ToySample& sample, const ToyConfig& cfg) {
    const json header{{"format", "flowrl-toy-sample"},
                      {"version", 1},
                      {"config", cfg},
                      {"sample_id", sample.id},
                      {"seed", derive_seed(cfg.seed, {sample.id})},
                      {"signal_len", sample.condition.signal.size()},
                      {"frames_shape", sample.video.frames.shape()}};
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot write " + tmp.string());
        os << header.dump() << '\n';
        const auto sig = sample.condition.signal.values();
        const auto frames = sample.video.frames.values();
        std::vector<float> buf(sig.begin(), sig.end());
        detail::write_f32(os, buf);
        buf.assign(frames.begin(), frames.end());
        detail::write_f32(os, buf);
    }
    std::filesystem::rename(tmp, path);
}

ToySample read_sample(const std::filesystem::path& path, ToyConfig* cfg_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    std::string line;
    std::getline(is, line);
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": bad header: " + e.what());
    }
    if (header.value("format", "") != "flowrl-toy-sample") throw DataError(path.string() + ": not a toy sample file");
    ToyConfig cfg = header.at("config").get<ToyConfig>();
    const auto n_sig = header.at("signal_len").get<std::size_t>();
    const auto shape = header.at("frames_shape").get<std::vector<std::size_t>>();
    std::vector<float> sig(n_sig), frames(shape_product(shape));
    detail::read_f32(is, sig);
    detail::read_f32(is, frames);
    ToySample s;
    s.id = header.at("sample_id").get<std::uint64_t>();
    s.condition.signal = NumericArray::from_vector(std::vector<double>(sig.begin(), sig.end()));
    s.video.frames = NumericArray(shape, std::vector<double>(frames.begin(), frames.end()));
    s.video.validate();
    const auto first = s.video.frame(0);
    s.condition.reference = NumericArray::from_vector(std::vector<double>(first.begin(), first.end()));
    s.latent = encode(s.video, cfg);
    if (cfg_out) *cfg_out = cfg;
    return s;
}

std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& dir, const ToyConfig& cfg,
                                                 std::size_t count) {
    cfg.validate();
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths(count);
    char name[32];
    for (std::size_t i = 0; i < count; ++i) {
        std::snprintf(name, sizeof name, "sample_%05zu.bin", i);
        paths[i] = dir / name;
        write_sample(paths[i], generate_sample(cfg, i), cfg);
    }
    return paths;
}

std::vector<ToySample> read_dataset(const std::filesystem::path& dir, ToyConfig* cfg_out) {
    if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory " + dir.string() + " not found");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name.rfind("sample_", 0) == 0 && e.path().extension() == ".bin") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("dataset directory " + dir.string() + " has no sample files");
    std::vector<ToySample> out;
    ToyConfig first_cfg;
    for (std::size_t i = 0; i < files.size(); ++i) {
        ToyConfig c;
        out.push_back(read_sample(files[i], &c));
        if (i == 0) {
            first_cfg = c;
        } else if (c.frame_size != first_cfg.frame_size || c.num_frames != first_cfg.num_frames ||
                   c.codec != first_cfg.codec) {
            throw DataError(files[i].string() + ": toy config differs from the rest of the dataset");
        }
    }
    if (cfg_out) *cfg_out = first_cfg;
    return out;
}

void write_pgm(const std::filesystem::path& path, const FrameView& frame) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    os << "P5\n" << frame.width << ' ' << frame.height << "\n255\n";
    for (double v : frame.pixels) os.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    if (!os) throw DataError("write failed for " + path.string());
}

}  // namespace flowrl
