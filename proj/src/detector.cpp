#include "kwspot/detector.hpp"

#include <algorithm>

#include "kwspot/error.hpp"

namespace kwspot {

void DetectorConfig::validate() const {
    if (n_ctx < 1) throw ConfigError("n_ctx must be >= 1");
    if (n_lck < 0) throw ConfigError("n_lck must be >= 0");
}

SmoothingWindow::SmoothingWindow(int n_ctx) : n_ctx_(n_ctx) {
    if (n_ctx < 1) throw ConfigError("n_ctx must be >= 1");
}

double SmoothingWindow::push(double value) {
    window_.push_back(value);
    if (static_cast<int>(window_.size()) > n_ctx_) window_.pop_front();
    double sum = 0.0;
    for (double v : window_) sum += v;
    return sum / static_cast<double>(window_.size());
}

bool FiringGate::push(int frame, double smoothed) {
    if (smoothed >= threshold_ && frame > last_spike_ + n_lck_) {
        last_spike_ = frame;
        return true;
    }
    return false;
}

Eigen::VectorXd smooth(const Eigen::VectorXd& keyword_posteriors, int n_ctx) {
    SmoothingWindow window(n_ctx);
    Eigen::VectorXd out(keyword_posteriors.size());
    for (Eigen::Index t = 0; t < keyword_posteriors.size(); ++t) out[t] = window.push(keyword_posteriors[t]);
    return out;
}

Eigen::VectorXd smooth(const PosteriorTrace& trace, int n_ctx) {
    if (trace.length() == 0) throw ValidationError("smooth: empty posterior trace");
    return smooth(Eigen::VectorXd(trace.keyword()), n_ctx);
}

SpikeList fire(const Eigen::VectorXd& smoothed, const DetectorConfig& config) {
    config.validate();
    FiringGate gate(config.threshold, config.n_lck);
    SpikeList spikes;
    for (Eigen::Index t = 0; t < smoothed.size(); ++t) {
        if (gate.push(static_cast<int>(t), smoothed[t])) spikes.push_back(static_cast<int>(t));
    }
    return spikes;
}

std::vector<Spike> batch_detect(const KwsModel& model, const RowMatrix& lfbe,
                                const DetectorConfig& config) {
    const auto trace = model.posteriors(lfbe);
    const auto s = smooth(trace, config.n_ctx);
    std::vector<Spike> out;
    for (int t : fire(s, config)) out.push_back({t, s[t]});
    return out;
}

StreamingDetector::StreamingDetector(const KwsModel& model, const DetectorConfig& config)
    : model_(model), config_(config), smoother_(config.n_ctx), gate_(config.threshold, config.n_lck) {
    config.validate();
    if (model.kind() != ModelKind::lstm) {
        throw ConfigError("streaming detection requires an LSTM model");
    }
    lstm_state_ = LstmState<double>::zero(model.lstm().dims);
}

std::vector<Spike> StreamingDetector::push_frame(const Eigen::Ref<const Eigen::RowVectorXd>& lfbe_frame) {
    if (finished_) throw Error("push_frame after finish");
    if (lfbe_frame.size() != kNumMelBins) throw ConfigError("stream frame must have 20 values");
    Eigen::RowVectorXd frame = lfbe_frame;
    model_.norm.apply_row(frame);
    frames_.push_back(std::move(frame));
    ++received_;

    std::vector<Spike> out;
    while (next_ + model_.right_context <= received_ - 1) {
        if (auto spike = score_next(received_ - 1)) out.push_back(*spike);
    }
    return out;
}

std::vector<Spike> StreamingDetector::push_samples(std::span<const std::int16_t> samples) {
    if (finished_) throw Error("push_samples after finish");
    for (const auto v : samples) pending_.push_back(v / 32768.0);
    std::vector<Spike> out;
    std::size_t offset = 0;
    Eigen::RowVectorXd frame(kNumMelBins);
    while (pending_.size() - offset >= static_cast<std::size_t>(kFrameLength)) {
        extractor_.compute(pending_.data() + offset, frame);
        for (const auto& s : push_frame(frame)) out.push_back(s);
        offset += kFrameShift;
    }
    pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(offset));
    return out;
}

std::vector<Spike> StreamingDetector::finish() {
    std::vector<Spike> out;
    if (finished_) return out;
    finished_ = true;
    pending_.clear();
    while (next_ < received_) {
        if (auto spike = score_next(received_ - 1)) out.push_back(*spike);
    }
    return out;
}

std::optional<Spike> StreamingDetector::score_next(int last_available) {
    const int t = next_++;
    const int left = model_.left_context;
    const int width = left + model_.right_context + 1;
    Eigen::RowVectorXd x(kNumMelBins * width);
    for (int k = 0; k < width; ++k) {
        const int src = std::clamp(t - left + k, 0, last_available);
        x.segment(k * kNumMelBins, kNumMelBins) = frames_[static_cast<std::size_t>(src - base_)];
    }
    // Frames before next_ - left are never referenced again.
    while (base_ < next_ - left && frames_.size() > 1) {
        frames_.pop_front();
        ++base_;
    }
    const auto step = lstm_step(model_.lstm(), *lstm_state_, x);
    const double s = smoother_.push(step.y[kKeywordClass]);
    if (gate_.push(t, s)) return Spike{t, s};
    return std::nullopt;
}

std::vector<Spike> stream_detect(const KwsModel& model, const RowMatrix& lfbe,
                                 const DetectorConfig& config) {
    StreamingDetector detector(model, config);
    std::vector<Spike> out;
    for (Eigen::Index t = 0; t < lfbe.rows(); ++t) {
        for (const auto& s : detector.push_frame(lfbe.row(t))) out.push_back(s);
    }
    for (const auto& s : detector.finish()) out.push_back(s);
    return out;
}

std::vector<Spike> stream_detect(const KwsModel& model, const WaveForm& wave,
                                 const DetectorConfig& config, std::size_t chunk_samples) {
    if (chunk_samples == 0) throw ConfigError("chunk_samples must be positive");
    StreamingDetector detector(model, config);
    std::vector<Spike> out;
    const std::span<const std::int16_t> all(wave.samples);
    for (std::size_t pos = 0; pos < all.size(); pos += chunk_samples) {
        const auto n = std::min(chunk_samples, all.size() - pos);
        for (const auto& s : detector.push_samples(all.subspan(pos, n))) out.push_back(s);
    }
    for (const auto& s : detector.finish()) out.push_back(s);
    return out;
}

SpikeList spike_frames(const std::vector<Spike>& spikes) {
    SpikeList out;
    out.reserve(spikes.size());
    for (const auto& s : spikes) out.push_back(s.frame);
    return out;
}

}  // namespace kwspot
