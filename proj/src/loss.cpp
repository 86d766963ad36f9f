#include "kwspot/loss.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "kwspot/error.hpp"

namespace kwspot {

void Alignment::validate() const {
    if (total_frames < 0) throw ValidationError(utterance_id + ": negative frame count");
    int prev_end = -1;
    for (const auto& s : segments) {
        if (s.end < s.start) {
            throw ValidationError(utterance_id + ": segment end " + std::to_string(s.end) +
                                  " before start " + std::to_string(s.start));
        }
        if (s.start < 0 || s.end >= total_frames) {
            throw ValidationError(utterance_id + ": segment [" + std::to_string(s.start) + ", " +
                                  std::to_string(s.end) + "] outside [0, " +
                                  std::to_string(total_frames) + ")");
        }
        if (s.start <= prev_end) {
            throw ValidationError(utterance_id + ": segments overlap or are unsorted");
        }
        if (s.keyword_class <= kBackgroundClass) {
            throw ValidationError(utterance_id + ": keyword class must be positive");
        }
        prev_end = s.end;
    }
}

LossKind parse_loss_kind(const std::string& s) {
    if (s == "xent") return LossKind::xent;
    if (s == "maxpool") return LossKind::maxpool;
    throw ConfigError("unknown loss kind '" + s + "' (expected xent or maxpool)");
}

std::string to_string(LossKind k) { return k == LossKind::xent ? "xent" : "maxpool"; }

std::vector<int> frame_targets(const Alignment& align) {
    std::vector<int> labels(static_cast<std::size_t>(align.total_frames), kBackgroundClass);
    for (const auto& s : align.segments) {
        for (int t = s.start; t <= s.end; ++t) labels[static_cast<std::size_t>(t)] = s.keyword_class;
    }
    return labels;
}

double xent_frame(const Eigen::Ref<const Eigen::RowVectorXd>& y, int k, int* clamped) {
    if (k < 0 || k >= y.size()) throw ConfigError("xent_frame: target class out of range");
    double p = y[k];
    if (p < kPosteriorClamp) {
        p = kPosteriorClamp;
        if (clamped) ++*clamped;
    }
    return -std::log(p);
}

namespace {

void check_lengths(const PosteriorTrace& trace, const Alignment& align) {
    if (trace.length() != align.total_frames) {
        throw ValidationError("loss: trace has " + std::to_string(trace.length()) +
                              " frames but alignment has " + std::to_string(align.total_frames));
    }
}

// Adds the cross-entropy term of frame t and its logit gradient y - onehot(k).
void add_frame(const PosteriorTrace& trace, Eigen::Index t, int k, LossResult& r) {
    r.value += xent_frame(trace.rows.row(t), k, &r.clamped);
    r.grad_logits.row(t) = trace.rows.row(t);
    r.grad_logits(t, k) -= 1.0;
    ++r.contributing_frames;
}

}  // namespace

LossResult xent_sequence(const PosteriorTrace& trace, const Alignment& align) {
    check_lengths(trace, align);
    const auto labels = frame_targets(align);
    LossResult r;
    r.grad_logits = Mat<double>::Zero(trace.length(), trace.rows.cols());
    for (Eigen::Index t = 0; t < trace.length(); ++t) {
        add_frame(trace, t, labels[static_cast<std::size_t>(t)], r);
    }
    return r;
}

LossResult maxpool_loss(const PosteriorTrace& trace, const Alignment& align) {
    check_lengths(trace, align);
    const auto labels = frame_targets(align);
    LossResult r;
    r.grad_logits = Mat<double>::Zero(trace.length(), trace.rows.cols());
    // Per frame: -1 drops it, otherwise the class it is scored against.
    std::vector<int> scored(labels.size(), -1);
    for (std::size_t t = 0; t < labels.size(); ++t) {
        if (labels[t] == kBackgroundClass) scored[t] = kBackgroundClass;
    }
    for (const auto& s : align.segments) {
        int best = s.start;
        for (int t = s.start + 1; t <= s.end; ++t) {
            if (trace.rows(t, s.keyword_class) > trace.rows(best, s.keyword_class)) best = t;
        }
        r.selected_frames.push_back(best);
        scored[static_cast<std::size_t>(best)] = s.keyword_class;
    }
    // Time order, as in xent_sequence.
    for (Eigen::Index t = 0; t < trace.length(); ++t) {
        const int k = scored[static_cast<std::size_t>(t)];
        if (k >= 0) add_frame(trace, t, k, r);
    }
    return r;
}

LossResult compute_loss(LossKind kind, const PosteriorTrace& trace, const Alignment& align) {
    return kind == LossKind::xent ? xent_sequence(trace, align) : maxpool_loss(trace, align);
}

nlohmann::json to_json(const LossResult& r) {
    return {{"value", r.value}, {"frames", r.contributing_frames}, {"selected", r.selected_frames},
            {"clamped", r.clamped}};
}

}  // namespace kwspot
