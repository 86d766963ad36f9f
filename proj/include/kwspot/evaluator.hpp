#pragma once

#include <map>
#include <string>
#include <vector>

#include "kwspot/detector.hpp"
#include "kwspot/loss.hpp"

namespace kwspot {

struct EvalConfig {
    int n_lat = 20;
    double miss_rate_cap = 0.2;
    int threshold_grid = 1001;

    void validate() const;
};

struct SpikeCounts {
    int true_accepts = 0;
    int false_accepts = 0;
    int misses = 0;
};

/// Each segment window is [start, end + n_lat]. Segments are visited in order and claim the
/// first unclaimed spike inside their window; all remaining spikes are false accepts.
SpikeCounts classify_spikes(const SpikeList& spikes, const Alignment& align, int n_lat);

struct DetPoint {
    double threshold = 0.0;
    double miss_rate = 0.0;
    double fa_rate = 0.0;

    bool operator==(const DetPoint&) const = default;
};

struct DetCurve {
    std::vector<DetPoint> points;
    double auc_capped = 0.0;
    bool auc_empty = false;
    int num_utterances = 0;
    int num_keyword_segments = 0;
};

/// `grid` uniform thresholds over [0, 1] followed by one never-fire sentinel above 1.
std::vector<double> threshold_grid(int grid);
inline constexpr double kNeverFireThreshold = 2.0;

struct EvalUtterance {
    PosteriorTrace trace;
    Alignment alignment;
};

DetCurve det_sweep(const std::vector<EvalUtterance>& test_set, const DetectorConfig& detector,
                   const EvalConfig& eval);

/// Miss rate and FA rate at a single threshold.
DetPoint evaluate_threshold(const std::vector<EvalUtterance>& test_set, DetectorConfig detector,
                            const EvalConfig& eval, double threshold);

struct AucResult {
    double value = 0.0;
    // No point had miss_rate <= cap; value is the cap.
    bool empty = false;
};

/// Normalized area under min(miss, cap) over fa in [0, max retained fa], using the
/// per-fa lower envelope of the points with miss <= cap.
AucResult auc(const std::vector<DetPoint>& points, double miss_rate_cap);

/// 100 * (model - baseline) / baseline. Throws ConfigError when baseline is not positive.
double relative_auc_change(double baseline_auc, double model_auc);

}  // namespace kwspot
