#pragma once

#include <array>
#include <complex>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <unsupported/Eigen/FFT>

#include "kwspot/wave.hpp"

namespace kwspot {

inline constexpr int kFrameLength = 400;  // 25 ms at 16 kHz
inline constexpr int kFrameShift = 160;   // 10 ms
inline constexpr int kFftSize = 512;
inline constexpr int kNumMelBins = 20;
inline constexpr double kMelLowHz = 60.0;
inline constexpr double kMelHighHz = 7800.0;
inline constexpr double kEnergyFloor = 1e-10;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FeatureSequence {
    RowMatrix frames;  // T x 20 log mel energies
    std::string utterance_id;
    int frame_shift_ms = 10;
    int frame_len_ms = 25;

    Eigen::Index num_frames() const { return frames.rows(); }
};

struct StackedSequence {
    RowMatrix vectors;  // T x 20*(left+right+1)
    int left = 0;
    int right = 0;
};

/// Number of full 400-sample frames with a 160-sample hop; 0 when shorter than one frame.
Eigen::Index num_frames(std::size_t num_samples);

/// Splits the waveform into overlapping frames, one per row, scaled to [-1, 1).
/// Throws ValidationError("utterance shorter than one frame") below 400 samples.
RowMatrix frame_signal(const WaveForm& wave);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters over the 257 non-negative FFT bins, 20 x 257.
/// Triangles are linear in mel and span kMelLowHz..kMelHighHz.
const Eigen::MatrixXd& mel_filterbank();

/// Center frequency in Hz of each mel filter.
std::array<double, kNumMelBins> mel_center_frequencies();

/// Hamming window -> 512-point power spectrum -> mel filters -> ln(max(e, floor)).
FeatureSequence compute_lfbe(const WaveForm& wave);

/// Single-frame LFBE with reusable FFT buffers; compute_lfbe runs it over every frame.
class LfbeExtractor {
public:
    LfbeExtractor();
    /// `frame` points at kFrameLength samples scaled to [-1, 1).
    void compute(const double* frame, Eigen::Ref<Eigen::RowVectorXd> out);

private:
    Eigen::FFT<double> fft_;
    std::vector<double> buffer_;
    std::vector<std::complex<double>> spectrum_;
    Eigen::VectorXd power_;
};

/// Row t is frames t-left .. t+right concatenated, indices clamped to [0, T).
StackedSequence stack_context(const FeatureSequence& feat, int left, int right);
StackedSequence stack_context(const RowMatrix& frames, int left, int right);

/// Per-dimension standardization applied to LFBE frames before context stacking.
struct FeatureNorm {
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;

    bool empty() const { return mean.size() == 0; }
    RowMatrix apply(const RowMatrix& frames) const;
    void apply_row(Eigen::Ref<Eigen::RowVectorXd> row) const;
};

FeatureNorm compute_feature_norm(const std::vector<FeatureSequence>& data);

// Feature cache: "KWSF", u32 version, u32 T, u32 dim, then T*dim row-major f32, all little-endian.
void write_feature_cache(const std::filesystem::path& path, const FeatureSequence& feat);
FeatureSequence read_feature_cache(const std::filesystem::path& path);

}  // namespace kwspot
