#include "kwspot/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "kwspot/error.hpp"
#include "kwspot/features.hpp"

namespace kwspot {

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "dev") return Split::dev;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "' (expected train, dev or test)");
}

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
    }
    return "?";
}

std::vector<const ManifestEntry*> Manifest::split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries) {
        if (e.split == s) out.push_back(&e);
    }
    return out;
}

std::filesystem::path Manifest::resolve(const ManifestEntry& e) const {
    std::filesystem::path p(e.wav);
    return p.is_absolute() ? p : base_dir / p;
}

Alignment to_alignment(const ManifestEntry& e, int total_frames) {
    Alignment a;
    a.utterance_id = e.id;
    a.total_frames = total_frames;
    for (auto [s, t] : e.segments) a.segments.push_back({s, t, kKeywordClass});
    a.validate();
    return a;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path.string());
    for (const auto& e : manifest.entries) {
        nlohmann::ordered_json j;
        j["wav"] = e.wav;
        j["id"] = e.id;
        j["segments"] = nlohmann::json::array();
        for (auto [s, t] : e.segments) j["segments"].push_back({s, t});
        j["split"] = to_string(e.split);
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    Manifest m;
    m.base_dir = path.parent_path();
    std::set<std::string> ids;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ": line " + std::to_string(line_no);
        ManifestEntry e;
        try {
            const auto j = nlohmann::json::parse(line);
            e.wav = j.at("wav").get<std::string>();
            e.id = j.at("id").get<std::string>();
            e.split = parse_split(j.at("split").get<std::string>());
            for (const auto& seg : j.at("segments")) {
                if (!seg.is_array() || seg.size() != 2) throw FormatError("segment must be [start, end]");
                e.segments.emplace_back(seg[0].get<int>(), seg[1].get<int>());
            }
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError(where + ": " + ex.what());
        } catch (const Error& ex) {
            throw FormatError(where + ": " + ex.what());
        }
        if (!ids.insert(e.id).second) throw ValidationError(where + ": duplicate id " + e.id);
        int total = std::numeric_limits<int>::max();
        if (const auto wav = m.resolve(e); std::filesystem::exists(wav)) {
            total = static_cast<int>(num_frames(wav_sample_count(wav)));
        }
        try {
            to_alignment(e, total);
        } catch (const ValidationError& ex) {
            throw ValidationError(where + ": " + ex.what());
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

void SynthSpec::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("synth spec: " + field + " " + why);
    };
    if (!(utterance_seconds > 0.0)) fail("utterance_seconds", "must be positive");
    if (keywords_min < 0 || keywords_max < keywords_min) fail("keywords", "range is invalid");
    if (distractors_min < 0 || distractors_max < distractors_min) fail("distractors", "range is invalid");
    if (chirp_ms < 50.0) fail("chirp_ms", "must be at least 50 ms (5 frames)");
    if (chirp_start_hz <= 0 || chirp_end_hz <= 0 || chirp_start_hz >= 8000 || chirp_end_hz >= 8000) {
        fail("chirp_start_hz/chirp_end_hz", "must be inside (0, 8000)");
    }
    if (!std::isfinite(snr_db.min) || !std::isfinite(snr_db.max) || snr_db.max < snr_db.min) {
        fail("snr_db", "must be a finite [min, max] range");
    }
    if (!std::isfinite(noise_level_db) || noise_level_db > -6.0) fail("noise_level_db", "must be <= -6 dBFS");
    if (min_gap_frames < 0) fail("min_gap_frames", "must be >= 0");
    if (train_count < 0 || dev_count < 0 || test_count < 0) fail("counts", "must be >= 0");
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec s;
    static const std::set<std::string> known = {
        "seed", "utterance_seconds", "keywords", "chirp_start_hz", "chirp_end_hz", "chirp_ms",
        "distractors", "noise_level_db", "snr_db", "min_gap_frames", "counts"};
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw ConfigError("synth spec: unknown field '" + key + "'");
    }
    auto range = [&](const char* key, auto& lo, auto& hi) {
        if (!j.contains(key)) return;
        const auto& r = j.at(key);
        if (!r.is_array() || r.size() != 2) throw ConfigError(std::string("synth spec: ") + key + " must be [min, max]");
        r[0].get_to(lo);
        r[1].get_to(hi);
    };
    try {
        if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("utterance_seconds")) s.utterance_seconds = j.at("utterance_seconds").get<double>();
        range("keywords", s.keywords_min, s.keywords_max);
        range("distractors", s.distractors_min, s.distractors_max);
        range("snr_db", s.snr_db.min, s.snr_db.max);
        if (j.contains("chirp_start_hz")) s.chirp_start_hz = j.at("chirp_start_hz").get<double>();
        if (j.contains("chirp_end_hz")) s.chirp_end_hz = j.at("chirp_end_hz").get<double>();
        if (j.contains("chirp_ms")) s.chirp_ms = j.at("chirp_ms").get<double>();
        if (j.contains("noise_level_db")) s.noise_level_db = j.at("noise_level_db").get<double>();
        if (j.contains("min_gap_frames")) s.min_gap_frames = j.at("min_gap_frames").get<int>();
        if (j.contains("counts")) {
            const auto& c = j.at("counts");
            s.train_count = c.value("train", s.train_count);
            s.dev_count = c.value("dev", s.dev_count);
            s.test_count = c.value("test", s.test_count);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("synth spec: ") + ex.what());
    }
    s.validate();
    return s;
}

nlohmann::json to_json(const SynthSpec& s) {
    return {{"seed", s.seed},
            {"utterance_seconds", s.utterance_seconds},
            {"keywords", {s.keywords_min, s.keywords_max}},
            {"distractors", {s.distractors_min, s.distractors_max}},
            {"chirp_start_hz", s.chirp_start_hz},
            {"chirp_end_hz", s.chirp_end_hz},
            {"chirp_ms", s.chirp_ms},
            {"noise_level_db", s.noise_level_db},
            {"snr_db", {s.snr_db.min, s.snr_db.max}},
            {"min_gap_frames", s.min_gap_frames},
            {"counts", {{"train", s.train_count}, {"dev", s.dev_count}, {"test", s.test_count}}}};
}

std::pair<int, int> covered_frames(std::size_t begin, std::size_t end, int total_frames) {
    const int first = static_cast<int>((begin + kFrameShift - 1) / kFrameShift);
    const int last = std::min(static_cast<int>(end / kFrameShift) - 1, total_frames - 1);
    if (last < first) throw ValidationError("keyword covers no complete frame");
    return {first, last};
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

constexpr double kFullScale = 32767.0;

std::vector<double> colored_noise(std::size_t n, double rms, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> x(n);
    double low = 0.0;
    for (auto& v : x) {
        low = 0.95 * low + gauss(rng);
        v = 0.3 * low + gauss(rng);
    }
    double energy = 0.0;
    for (double v : x) energy += v * v;
    const double scale = rms / std::sqrt(energy / static_cast<double>(n));
    for (auto& v : x) v *= scale;
    return x;
}

// Linear chirp with a 10% raised-cosine taper at each end, unit RMS over its body.
std::vector<double> chirp(std::size_t n, double f0, double f1, double phase) {
    std::vector<double> out(n);
    const double dur = static_cast<double>(n) / kSampleRate;
    const std::size_t taper = n / 10;
    double energy = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) / kSampleRate;
        const double ph = 2.0 * std::numbers::pi * (f0 * t + 0.5 * (f1 - f0) * t * t / dur) + phase;
        double env = 1.0;
        if (k < taper) env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(k) / taper);
        if (k >= n - taper) env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(n - 1 - k) / taper);
        out[k] = env * std::sin(ph);
        energy += out[k] * out[k];
    }
    const double scale = 1.0 / std::sqrt(energy / static_cast<double>(n));
    for (auto& v : out) v *= scale;
    return out;
}

}  // namespace

SynthUtterance synth_utterance(const SynthSpec& spec, std::uint64_t seed, const std::string& id) {
    spec.validate();
    std::mt19937_64 rng(seed);
    const auto n = static_cast<std::size_t>(std::llround(spec.utterance_seconds * kSampleRate));
    const int total_frames = static_cast<int>(num_frames(n));
    if (total_frames == 0) throw ConfigError("synth spec: utterance shorter than one frame");

    const double noise_rms = kFullScale * std::pow(10.0, spec.noise_level_db / 20.0);
    std::vector<double> signal = colored_noise(n, noise_rms, rng);

    std::uniform_int_distribution<int> n_kw(spec.keywords_min, spec.keywords_max);
    std::uniform_int_distribution<int> n_dist(spec.distractors_min, spec.distractors_max);
    std::vector<bool> is_keyword(static_cast<std::size_t>(n_kw(rng)), true);
    is_keyword.resize(is_keyword.size() + static_cast<std::size_t>(n_dist(rng)), false);
    std::shuffle(is_keyword.begin(), is_keyword.end(), rng);

    const auto len = static_cast<std::size_t>(std::llround(spec.chirp_ms * kSampleRate / 1000.0));
    // One extra hop absorbs partial-frame rounding at both edges of a gap.
    const std::size_t gap = static_cast<std::size_t>(spec.min_gap_frames + 1) * kFrameShift;
    const std::size_t margin = 10 * kFrameShift;
    // Keep the last event inside the final complete frame.
    const std::size_t usable = n - (kFrameLength - kFrameShift);
    const std::size_t events = is_keyword.size();
    const std::size_t needed = events * len + (events > 0 ? events - 1 : 0) * gap + 2 * margin;
    if (events > 0 && needed > usable) {
        throw ValidationError("synth: cannot place " + std::to_string(events) + " events in " +
                              std::to_string(spec.utterance_seconds) + " s without overlap");
    }

    // Spread the slack over the events by sorted uniform cut points.
    std::vector<std::size_t> cuts;
    if (events > 0) {
        std::uniform_int_distribution<std::size_t> slack_dist(0, usable - needed);
        for (std::size_t e = 0; e < events; ++e) cuts.push_back(slack_dist(rng));
        std::sort(cuts.begin(), cuts.end());
    }

    std::uniform_real_distribution<double> snr(spec.snr_db.min, spec.snr_db.max);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    SynthUtterance out;
    out.alignment.utterance_id = id;
    out.alignment.total_frames = total_frames;
    for (std::size_t e = 0; e < events; ++e) {
        const std::size_t begin = margin + cuts[e] + e * (len + gap);
        const double amp = noise_rms * std::pow(10.0, snr(rng) / 20.0);
        const auto tone = is_keyword[e] ? chirp(len, spec.chirp_start_hz, spec.chirp_end_hz, phase(rng))
                                        : chirp(len, spec.chirp_end_hz, spec.chirp_start_hz, phase(rng));
        for (std::size_t k = 0; k < len; ++k) signal[begin + k] += amp * tone[k];
        if (is_keyword[e]) {
            auto [first, last] = covered_frames(begin, begin + len, total_frames);
            out.alignment.segments.push_back({first, last, kKeywordClass});
        }
    }

    double peak = 0.0;
    for (double v : signal) peak = std::max(peak, std::abs(v));
    const double gain = peak > 0.99 * kFullScale ? 0.99 * kFullScale / peak : 1.0;

    out.wave.id = id;
    out.wave.samples.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        out.wave.samples[k] = static_cast<std::int16_t>(std::lround(signal[k] * gain));
    }
    out.alignment.validate();
    return out;
}

Manifest build_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "wav", ec);
    if (ec) throw IoError("cannot create " + (out_dir / "wav").string() + ": " + ec.message());

    Manifest m;
    m.base_dir = out_dir;
    std::uint64_t index = 0;
    const std::pair<Split, int> plan[] = {
        {Split::train, spec.train_count}, {Split::dev, spec.dev_count}, {Split::test, spec.test_count}};
    for (auto [split, count] : plan) {
        for (int i = 0; i < count; ++i, ++index) {
            char name[32];
            std::snprintf(name, sizeof name, "%s-%04d", to_string(split).c_str(), i);
            auto utt = synth_utterance(spec, derive_seed(spec.seed, index), name);
            ManifestEntry e;
            e.wav = "wav/" + std::string(name) + ".wav";
            e.id = name;
            e.split = split;
            for (const auto& s : utt.alignment.segments) e.segments.emplace_back(s.start, s.end);
            write_wav(m.resolve(e), utt.wave);
            m.entries.push_back(std::move(e));
        }
    }
    write_manifest(out_dir / "manifest.jsonl", m);
    return m;
}

}  // namespace kwspot
