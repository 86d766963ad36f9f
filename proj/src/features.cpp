#include "kwspot/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

#include "binary_io.hpp"
#include "kwspot/error.hpp"

namespace kwspot {

Eigen::Index num_frames(std::size_t num_samples) {
    if (num_samples < static_cast<std::size_t>(kFrameLength)) return 0;
    return static_cast<Eigen::Index>((num_samples - kFrameLength) / kFrameShift + 1);
}

RowMatrix frame_signal(const WaveForm& wave) {
    if (wave.sample_rate != kSampleRate) {
        throw ConfigError("expected 16000 Hz audio, got " + std::to_string(wave.sample_rate));
    }
    const Eigen::Index T = num_frames(wave.samples.size());
    if (T == 0) {
        throw ValidationError("utterance shorter than one frame: " + wave.id + " has " +
                              std::to_string(wave.samples.size()) + " samples");
    }
    RowMatrix frames(T, kFrameLength);
    for (Eigen::Index t = 0; t < T; ++t) {
        const auto* s = wave.samples.data() + t * kFrameShift;
        for (int n = 0; n < kFrameLength; ++n) frames(t, n) = s[n] / 32768.0;
    }
    return frames;
}

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

namespace {

std::array<double, kNumMelBins + 2> mel_edges() {
    std::array<double, kNumMelBins + 2> edges{};
    const double lo = hz_to_mel(kMelLowHz);
    const double hi = hz_to_mel(kMelHighHz);
    for (int j = 0; j < kNumMelBins + 2; ++j) edges[j] = lo + (hi - lo) * j / (kNumMelBins + 1);
    return edges;
}

Eigen::MatrixXd build_filterbank() {
    constexpr int bins = kFftSize / 2 + 1;
    const auto edges = mel_edges();
    Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(kNumMelBins, bins);
    for (int k = 0; k < bins; ++k) {
        const double mel = hz_to_mel(static_cast<double>(k) * kSampleRate / kFftSize);
        for (int j = 0; j < kNumMelBins; ++j) {
            const double left = edges[j], center = edges[j + 1], right = edges[j + 2];
            if (mel > left && mel < center) {
                fb(j, k) = (mel - left) / (center - left);
            } else if (mel >= center && mel < right) {
                fb(j, k) = (right - mel) / (right - center);
            }
        }
    }
    return fb;
}

const Eigen::VectorXd& hamming() {
    static const Eigen::VectorXd w = [] {
        Eigen::VectorXd v(kFrameLength);
        for (int n = 0; n < kFrameLength; ++n) {
            v[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (kFrameLength - 1));
        }
        return v;
    }();
    return w;
}

}  // namespace

const Eigen::MatrixXd& mel_filterbank() {
    static const Eigen::MatrixXd fb = build_filterbank();
    return fb;
}

std::array<double, kNumMelBins> mel_center_frequencies() {
    const auto edges = mel_edges();
    std::array<double, kNumMelBins> centers{};
    for (int j = 0; j < kNumMelBins; ++j) centers[j] = mel_to_hz(edges[j + 1]);
    return centers;
}

LfbeExtractor::LfbeExtractor() : buffer_(kFftSize, 0.0), power_(kFftSize / 2 + 1) {
    fft_.SetFlag(Eigen::FFT<double>::HalfSpectrum);
}

void LfbeExtractor::compute(const double* frame, Eigen::Ref<Eigen::RowVectorXd> out) {
    const auto& window = hamming();
    for (int n = 0; n < kFrameLength; ++n) buffer_[n] = frame[n] * window[n];
    std::fill(buffer_.begin() + kFrameLength, buffer_.end(), 0.0);
    fft_.fwd(spectrum_, buffer_);
    for (int k = 0; k <= kFftSize / 2; ++k) power_[k] = std::norm(spectrum_[k]);
    const Eigen::VectorXd energies = mel_filterbank() * power_;
    for (int j = 0; j < kNumMelBins; ++j) out[j] = std::log(std::max(energies[j], kEnergyFloor));
}

FeatureSequence compute_lfbe(const WaveForm& wave) {
    const RowMatrix frames = frame_signal(wave);
    LfbeExtractor extractor;
    FeatureSequence out;
    out.utterance_id = wave.id;
    out.frames.resize(frames.rows(), kNumMelBins);
    for (Eigen::Index t = 0; t < frames.rows(); ++t) {
        extractor.compute(frames.row(t).data(), out.frames.row(t));
    }
    return out;
}

StackedSequence stack_context(const RowMatrix& frames, int left, int right) {
    if (left < 0 || right < 0) throw ConfigError("context sizes must be non-negative");
    if (frames.rows() == 0) throw ValidationError("stack_context: empty feature sequence");
    const Eigen::Index T = frames.rows();
    const Eigen::Index dim = frames.cols();
    const int width = left + right + 1;
    StackedSequence out;
    out.left = left;
    out.right = right;
    out.vectors.resize(T, dim * width);
    for (Eigen::Index t = 0; t < T; ++t) {
        for (int k = 0; k < width; ++k) {
            const Eigen::Index src = std::clamp<Eigen::Index>(t - left + k, 0, T - 1);
            out.vectors.block(t, k * dim, 1, dim) = frames.row(src);
        }
    }
    return out;
}

StackedSequence stack_context(const FeatureSequence& feat, int left, int right) {
    return stack_context(feat.frames, left, right);
}

RowMatrix FeatureNorm::apply(const RowMatrix& frames) const {
    if (empty()) return frames;
    RowMatrix out = frames;
    for (Eigen::Index t = 0; t < out.rows(); ++t) apply_row(out.row(t));
    return out;
}

void FeatureNorm::apply_row(Eigen::Ref<Eigen::RowVectorXd> row) const {
    if (empty()) return;
    if (row.size() != mean.size()) throw ConfigError("feature norm dimension mismatch");
    row = (row - mean.transpose()).cwiseQuotient(stddev.transpose());
}

FeatureNorm compute_feature_norm(const std::vector<FeatureSequence>& data) {
    FeatureNorm norm;
    norm.mean = Eigen::VectorXd::Zero(kNumMelBins);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(kNumMelBins);
    double n = 0;
    for (const auto& f : data) {
        norm.mean += f.frames.colwise().sum().transpose();
        sq += f.frames.array().square().matrix().colwise().sum().transpose();
        n += static_cast<double>(f.frames.rows());
    }
    if (n == 0) throw ValidationError("compute_feature_norm: no frames");
    norm.mean /= n;
    const Eigen::VectorXd var = (sq / n - norm.mean.cwiseAbs2()).cwiseMax(0.0);
    norm.stddev = var.cwiseSqrt().cwiseMax(1e-3);
    return norm;
}

void write_feature_cache(const std::filesystem::path& path, const FeatureSequence& feat) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write feature cache " + path.string());
    out.write("KWSF", 4);
    io::put<std::uint32_t>(out, 1);
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(feat.frames.rows()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(feat.frames.cols()));
    for (Eigen::Index t = 0; t < feat.frames.rows(); ++t)
        for (Eigen::Index j = 0; j < feat.frames.cols(); ++j) io::put_f32(out, feat.frames(t, j));
    if (!out) throw IoError("write failed: " + path.string());
}

FeatureSequence read_feature_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open feature cache " + path.string());
    const std::string what = "feature cache " + path.string();
    io::expect_magic(in, "KWSF", what);
    if (auto v = io::get<std::uint32_t>(in, what); v != 1) {
        throw FormatError(what + ": unsupported version " + std::to_string(v));
    }
    const auto T = io::get<std::uint32_t>(in, what);
    const auto dim = io::get<std::uint32_t>(in, what);
    FeatureSequence feat;
    feat.utterance_id = path.stem().string();
    feat.frames.resize(T, dim);
    for (std::uint32_t t = 0; t < T; ++t)
        for (std::uint32_t j = 0; j < dim; ++j) feat.frames(t, j) = io::get<float>(in, what);
    return feat;
}

}  // namespace kwspot
