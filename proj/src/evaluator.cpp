#include "kwspot/evaluator.hpp"

#include <algorithm>
#include <map>

#include "kwspot/error.hpp"

namespace kwspot {

void EvalConfig::validate() const {
    if (n_lat < 0) throw ConfigError("n_lat must be >= 0");
    if (!(miss_rate_cap > 0.0 && miss_rate_cap <= 1.0)) throw ConfigError("miss_rate_cap must be in (0, 1]");
    if (threshold_grid < 2) throw ConfigError("threshold_grid must be >= 2");
}

SpikeCounts classify_spikes(const SpikeList& spikes, const Alignment& align, int n_lat) {
    if (!std::is_sorted(spikes.begin(), spikes.end())) throw ValidationError("classify_spikes: spikes not sorted");
    const auto& segs = align.segments;
    std::vector<bool> detected(segs.size(), false);
    SpikeCounts counts;
    std::size_t first_open = 0;  // windows ending before the current spike are skipped
    for (int spike : spikes) {
        while (first_open < segs.size() && segs[first_open].end + n_lat < spike) ++first_open;
        bool accepted = false;
        for (std::size_t p = first_open; p < segs.size() && segs[p].start <= spike; ++p) {
            if (!detected[p] && spike <= segs[p].end + n_lat) {
                detected[p] = true;
                accepted = true;
                break;
            }
        }
        if (accepted) {
            ++counts.true_accepts;
        } else {
            ++counts.false_accepts;
        }
    }
    counts.misses = static_cast<int>(std::count(detected.begin(), detected.end(), false));
    return counts;
}

std::vector<double> threshold_grid(int grid) {
    if (grid < 2) throw ConfigError("threshold grid needs at least 2 points");
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(grid) + 1);
    for (int i = 0; i < grid; ++i) out.push_back(static_cast<double>(i) / (grid - 1));
    out.push_back(kNeverFireThreshold);
    return out;
}

namespace {

struct Prepared {
    Eigen::VectorXd smoothed;
    const Alignment* alignment;
};

std::vector<Prepared> prepare(const std::vector<EvalUtterance>& set, const DetectorConfig& detector) {
    if (set.empty()) throw ValidationError("evaluation set is empty");
    std::vector<Prepared> out;
    out.reserve(set.size());
    for (const auto& u : set) {
        if (u.trace.length() != u.alignment.total_frames) {
            throw ValidationError(u.alignment.utterance_id + ": trace length does not match alignment");
        }
        out.push_back({smooth(u.trace, detector.n_ctx), &u.alignment});
    }
    return out;
}

DetPoint point_at(const std::vector<Prepared>& set, DetectorConfig detector, int n_lat, double threshold) {
    detector.threshold = threshold;
    long misses = 0, false_accepts = 0, segments = 0;
    for (const auto& u : set) {
        const auto counts = classify_spikes(fire(u.smoothed, detector), *u.alignment, n_lat);
        misses += counts.misses;
        false_accepts += counts.false_accepts;
        segments += static_cast<long>(u.alignment->segments.size());
    }
    DetPoint p;
    p.threshold = threshold;
    p.miss_rate = segments > 0 ? static_cast<double>(misses) / static_cast<double>(segments) : 0.0;
    p.fa_rate = static_cast<double>(false_accepts) / static_cast<double>(set.size());
    return p;
}

}  // namespace

DetCurve det_sweep(const std::vector<EvalUtterance>& test_set, const DetectorConfig& detector,
                   const EvalConfig& eval) {
    eval.validate();
    detector.validate();
    const auto prepared = prepare(test_set, detector);
    DetCurve curve;
    curve.num_utterances = static_cast<int>(test_set.size());
    for (const auto& u : test_set) curve.num_keyword_segments += static_cast<int>(u.alignment.segments.size());
    for (double thr : threshold_grid(eval.threshold_grid)) {
        curve.points.push_back(point_at(prepared, detector, eval.n_lat, thr));
    }
    const auto a = auc(curve.points, eval.miss_rate_cap);
    curve.auc_capped = a.value;
    curve.auc_empty = a.empty;
    return curve;
}

DetPoint evaluate_threshold(const std::vector<EvalUtterance>& test_set, DetectorConfig detector,
                            const EvalConfig& eval, double threshold) {
    return point_at(prepare(test_set, detector), detector, eval.n_lat, threshold);
}

AucResult auc(const std::vector<DetPoint>& points, double miss_rate_cap) {
    if (points.empty()) throw ValidationError("auc: empty curve");
    // Lower envelope: smallest miss rate at each distinct fa rate.
    std::map<double, double> envelope;
    for (const auto& p : points) {
        if (p.miss_rate > miss_rate_cap) continue;
        auto [it, inserted] = envelope.emplace(p.fa_rate, p.miss_rate);
        if (!inserted) it->second = std::min(it->second, p.miss_rate);
    }
    if (envelope.empty()) return {miss_rate_cap, true};

    const double fa_max = envelope.rbegin()->first;
    if (fa_max <= 0.0) return {envelope.begin()->second, false};

    // Below the smallest retained fa rate the curve sits above the cap; count it at the cap.
    double area = miss_rate_cap * envelope.begin()->first;
    auto prev = envelope.begin();
    for (auto it = std::next(prev); it != envelope.end(); prev = it, ++it) {
        area += 0.5 * (prev->second + it->second) * (it->first - prev->first);
    }
    return {area / fa_max, false};
}

double relative_auc_change(double baseline_auc, double model_auc) {
    if (!(baseline_auc > 0.0)) throw ConfigError("relative AUC change needs a positive baseline AUC");
    return 100.0 * (model_auc - baseline_auc) / baseline_auc;
}

}  // namespace kwspot
