#pragma once

#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "kwspot/checkpoint.hpp"
#include "kwspot/model.hpp"

namespace kwspot {

struct DetectorConfig {
    int n_ctx = 30;
    int n_lck = 40;
    double threshold = 0.5;

    void validate() const;
};

using SpikeList = std::vector<int>;

/// Trailing mean over the last n_ctx values (fewer at the start of the stream).
class SmoothingWindow {
public:
    explicit SmoothingWindow(int n_ctx);
    double push(double value);

private:
    int n_ctx_;
    std::deque<double> window_;
};

/// Threshold crossing with lockout: after a spike at t, frames t+1 .. t+n_lck cannot fire.
class FiringGate {
public:
    FiringGate(double threshold, int n_lck) : threshold_(threshold), n_lck_(n_lck) {}
    bool push(int frame, double smoothed);

private:
    double threshold_;
    std::int64_t n_lck_;
    std::int64_t last_spike_ = std::numeric_limits<std::int64_t>::min() / 2;
};

Eigen::VectorXd smooth(const Eigen::VectorXd& keyword_posteriors, int n_ctx);
Eigen::VectorXd smooth(const PosteriorTrace& trace, int n_ctx);

SpikeList fire(const Eigen::VectorXd& smoothed, const DetectorConfig& config);

struct Spike {
    int frame = 0;
    double smoothed_posterior = 0.0;
};

/// Batch reference: forward the whole utterance, then smooth and fire.
std::vector<Spike> batch_detect(const KwsModel& model, const RowMatrix& lfbe,
                                const DetectorConfig& config);

/// Incremental detector over LFBE frames or raw audio. A frame is scored once its
/// right-context lookahead has arrived; `finish()` scores the tail with edge replication.
class StreamingDetector {
public:
    StreamingDetector(const KwsModel& model, const DetectorConfig& config);

    /// Returns the spikes that became decidable with this frame.
    std::vector<Spike> push_frame(const Eigen::Ref<const Eigen::RowVectorXd>& lfbe_frame);
    /// Raw 16 kHz audio in chunks of any size; each complete 25 ms frame is pushed as it forms.
    std::vector<Spike> push_samples(std::span<const std::int16_t> samples);
    /// Scores the remaining frames; samples of an incomplete trailing frame are dropped.
    std::vector<Spike> finish();

    int frames_received() const { return received_; }

private:
    std::optional<Spike> score_next(int last_available);

    const KwsModel& model_;
    DetectorConfig config_;
    SmoothingWindow smoother_;
    FiringGate gate_;
    std::optional<LstmState<double>> lstm_state_;
    LfbeExtractor extractor_;
    std::vector<double> pending_;  // audio not yet consumed by a full frame, scaled to [-1, 1)
    std::deque<Eigen::RowVectorXd> frames_;  // normalized frames from index base_ onward
    int base_ = 0;
    int received_ = 0;
    int next_ = 0;  // next frame to score
    bool finished_ = false;
};

/// Feeds `lfbe` frame by frame through a StreamingDetector.
std::vector<Spike> stream_detect(const KwsModel& model, const RowMatrix& lfbe,
                                 const DetectorConfig& config);
/// Feeds the waveform in chunks of `chunk_samples` through a StreamingDetector.
std::vector<Spike> stream_detect(const KwsModel& model, const WaveForm& wave,
                                 const DetectorConfig& config, std::size_t chunk_samples = 160);

SpikeList spike_frames(const std::vector<Spike>& spikes);

}  // namespace kwspot
