#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "kwspot/error.hpp"
#include "kwspot/features.hpp"
#include "kwspot/wave.hpp"
#include "support.hpp"

using namespace kwspot;
using kwspot::testing::TempDir;

namespace {

WaveForm tone(double hz, double amplitude, std::size_t n) {
    WaveForm w;
    w.id = "tone";
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        w.samples[i] = static_cast<std::int16_t>(
            std::lround(amplitude * std::sin(2.0 * std::numbers::pi * hz * i / kSampleRate)));
    }
    return w;
}

void write_raw_wav(const std::filesystem::path& path, std::uint16_t format, std::uint16_t channels,
                   std::uint32_t rate, std::uint16_t bits, std::uint32_t data_bytes) {
    std::ofstream out(path, std::ios::binary);
    auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto u16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
    out.write("RIFF", 4);
    u32(36 + data_bytes);
    out.write("WAVEfmt ", 8);
    u32(16);
    u16(format);
    u16(channels);
    u32(rate);
    u32(rate * channels * bits / 8);
    u16(static_cast<std::uint16_t>(channels * bits / 8));
    u16(bits);
    out.write("data", 4);
    u32(data_bytes);
    std::string zeros(data_bytes, '\0');
    out.write(zeros.data(), data_bytes);
}

}  // namespace

TEST_CASE("frame counts") {
    CHECK(num_frames(16000) == 98);
    CHECK(num_frames(400) == 1);
    CHECK(num_frames(559) == 1);
    CHECK(num_frames(399) == 0);
    CHECK(num_frames(0) == 0);
}

TEST_CASE("frame count matches a direct loop for every length up to 4000") {
    for (std::size_t n = 0; n <= 4000; ++n) {
        Eigen::Index count = 0;
        for (std::size_t start = 0; start + kFrameLength <= n; start += kFrameShift) ++count;
        REQUIRE(num_frames(n) == count);
    }
}

TEST_CASE("short utterances are rejected") {
    WaveForm w;
    w.samples.assign(399, 0);
    CHECK_THROWS_AS(compute_lfbe(w), ValidationError);
}

TEST_CASE("silence maps to the energy floor") {
    WaveForm w;
    w.samples.assign(16000, 0);
    const auto f = compute_lfbe(w);
    REQUIRE(f.frames.rows() == 98);
    REQUIRE(f.frames.cols() == kNumMelBins);
    const double floor = std::log(kEnergyFloor);
    for (Eigen::Index t = 0; t < f.frames.rows(); ++t)
        for (Eigen::Index j = 0; j < f.frames.cols(); ++j) REQUIRE(f.frames(t, j) == floor);
}

TEST_CASE("1 kHz tone peaks in the filter centered nearest 1 kHz") {
    // Centers from the mel design: 22 edges uniform in mel over [60, 7800] Hz.
    const double lo = 1127.0 * std::log(1.0 + 60.0 / 700.0);
    const double hi = 1127.0 * std::log(1.0 + 7800.0 / 700.0);
    const auto centers = mel_center_frequencies();
    int nearest = -1;
    double best = 1e300;
    for (int j = 0; j < kNumMelBins; ++j) {
        const double mel = lo + (hi - lo) * (j + 1) / (kNumMelBins + 1);
        const double hz = 700.0 * (std::exp(mel / 1127.0) - 1.0);
        CHECK(centers[j] == doctest::Approx(hz).epsilon(1e-12));
        if (std::abs(hz - 1000.0) < best) {
            best = std::abs(hz - 1000.0);
            nearest = j;
        }
    }

    const auto f = compute_lfbe(tone(1000.0, 32767.0, 16000));
    for (Eigen::Index t = 0; t < f.frames.rows(); ++t) {
        Eigen::Index arg = 0;
        f.frames.row(t).maxCoeff(&arg);
        REQUIRE(arg == nearest);
    }
}

TEST_CASE("doubling the amplitude adds log 4") {
    const auto quiet = tone(1000.0, 8000.0, 8000);
    auto loud = quiet;
    for (auto& v : loud.samples) v = static_cast<std::int16_t>(2 * v);
    const auto a = compute_lfbe(quiet);
    const auto b = compute_lfbe(loud);
    const double floor = std::log(kEnergyFloor);
    int checked = 0;
    for (Eigen::Index t = 0; t < a.frames.rows(); ++t) {
        for (Eigen::Index j = 0; j < a.frames.cols(); ++j) {
            if (a.frames(t, j) < floor + 5.0) continue;
            REQUIRE(b.frames(t, j) - a.frames(t, j) == doctest::Approx(std::log(4.0)).epsilon(1e-9));
            ++checked;
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("mel filterbank shape") {
    const auto& fb = mel_filterbank();
    REQUIRE(fb.rows() == kNumMelBins);
    REQUIRE(fb.cols() == kFftSize / 2 + 1);
    CHECK(fb.minCoeff() >= 0.0);
    CHECK(fb.maxCoeff() <= 1.0);
    for (int j = 0; j < kNumMelBins; ++j) CHECK(fb.row(j).sum() > 0.0);
    // Adjacent triangles overlap so that no bin between the outer edges gets more than 1.
    for (Eigen::Index k = 0; k < fb.cols(); ++k) CHECK(fb.col(k).sum() <= 1.0 + 1e-12);
    const double bin_hz = static_cast<double>(kSampleRate) / kFftSize;
    CHECK(fb.col(static_cast<Eigen::Index>(std::floor(kMelLowHz / bin_hz))).sum() == 0.0);
    CHECK(fb.col(kFftSize / 2).sum() == 0.0);
    CHECK(hz_to_mel(mel_to_hz(1234.5)) == doctest::Approx(1234.5).epsilon(1e-12));
}

TEST_CASE("per-frame extractor equals the utterance path") {
    const auto wave = tone(700.0, 12000.0, 4000);
    const auto f = compute_lfbe(wave);
    const RowMatrix frames = frame_signal(wave);
    LfbeExtractor ex;
    Eigen::RowVectorXd row(kNumMelBins);
    for (Eigen::Index t = 0; t < frames.rows(); ++t) {
        ex.compute(frames.row(t).data(), row);
        REQUIRE(row == f.frames.row(t));
    }
}

TEST_CASE("stack_context") {
    std::mt19937_64 rng(3);
    const RowMatrix frames = kwspot::testing::random_matrix(13, kNumMelBins, rng);

    SUBCASE("identity without context") { CHECK(stack_context(frames, 0, 0).vectors == frames); }

    SUBCASE("single frame is replicated") {
        const RowMatrix one = frames.topRows(1);
        const auto s = stack_context(one, 10, 10);
        REQUIRE(s.vectors.rows() == 1);
        REQUIRE(s.vectors.cols() == 21 * kNumMelBins);
        for (int k = 0; k < 21; ++k) CHECK(s.vectors.block(0, k * kNumMelBins, 1, kNumMelBins) == one);
    }

    SUBCASE("baseline input width") { CHECK(stack_context(frames, 20, 10).vectors.cols() == 620); }

    SUBCASE("matches brute force") {
        for (auto [l, r] : {std::pair{0, 3}, std::pair{4, 0}, std::pair{2, 5}, std::pair{20, 10}}) {
            const auto s = stack_context(frames, l, r);
            for (Eigen::Index t = 0; t < frames.rows(); ++t) {
                int col = 0;
                for (Eigen::Index u = t - l; u <= t + r; ++u) {
                    const Eigen::Index src = u < 0 ? 0 : (u >= frames.rows() ? frames.rows() - 1 : u);
                    for (int j = 0; j < kNumMelBins; ++j) REQUIRE(s.vectors(t, col++) == frames(src, j));
                }
            }
        }
    }

    SUBCASE("negative context is rejected") { CHECK_THROWS_AS(stack_context(frames, -1, 0), ConfigError); }
}

TEST_CASE("feature normalization") {
    std::mt19937_64 rng(5);
    FeatureSequence a, b;
    a.frames = kwspot::testing::random_matrix(40, kNumMelBins, rng, -3.0, 7.0);
    b.frames = kwspot::testing::random_matrix(25, kNumMelBins, rng, -3.0, 7.0);
    const auto norm = compute_feature_norm({a, b});
    RowMatrix all(65, kNumMelBins);
    all << a.frames, b.frames;
    const RowMatrix z = norm.apply(all);
    for (int j = 0; j < kNumMelBins; ++j) {
        CHECK(z.col(j).mean() == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
        const double var = (z.col(j).array() - z.col(j).mean()).square().mean();
        CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
    }
    Eigen::RowVectorXd row = all.row(7);
    norm.apply_row(row);
    CHECK(row == z.row(7));
}

TEST_CASE("feature cache round trip") {
    TempDir dir("features");
    FeatureSequence f = compute_lfbe(tone(440.0, 9000.0, 3200));
    write_feature_cache(dir / "x.kwsf", f);
    const auto g = read_feature_cache(dir / "x.kwsf");
    REQUIRE(g.frames.rows() == f.frames.rows());
    CHECK(g.frames == f.frames.cast<float>().cast<double>());

    std::ofstream(dir / "bad.kwsf", std::ios::binary) << "NOPE";
    CHECK_THROWS_AS(read_feature_cache(dir / "bad.kwsf"), FormatError);
}

TEST_CASE("wav round trip and format checks") {
    TempDir dir("wave");
    auto w = tone(300.0, 20000.0, 1234);
    write_wav(dir / "a.wav", w);
    const auto r = read_wav(dir / "a.wav");
    CHECK(r.samples == w.samples);
    CHECK(r.sample_rate == kSampleRate);
    CHECK(r.id == "a");
    CHECK(wav_sample_count(dir / "a.wav") == 1234);

    write_raw_wav(dir / "stereo.wav", 1, 2, 16000, 16, 400);
    write_raw_wav(dir / "8k.wav", 1, 1, 8000, 16, 400);
    write_raw_wav(dir / "8bit.wav", 1, 1, 16000, 8, 400);
    write_raw_wav(dir / "float.wav", 3, 1, 16000, 32, 400);
    for (const char* name : {"stereo.wav", "8k.wav", "8bit.wav", "float.wav"}) {
        CAPTURE(name);
        CHECK_THROWS_AS(read_wav(dir / name), FormatError);
    }
    std::ofstream(dir / "junk.wav", std::ios::binary) << "not a wav file at all";
    CHECK_THROWS_AS(read_wav(dir / "junk.wav"), FormatError);
    CHECK_THROWS_AS(read_wav(dir / "missing.wav"), IoError);
}
