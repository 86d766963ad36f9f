#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "kwspot/model.hpp"

namespace kwspot {

inline constexpr double kPosteriorClamp = 1e-12;

struct Segment {
    int start = 0;  // inclusive
    int end = 0;    // inclusive
    int keyword_class = kKeywordClass;

    bool operator==(const Segment&) const = default;
};

struct Alignment {
    std::string utterance_id;
    std::vector<Segment> segments;
    int total_frames = 0;

    /// Throws ValidationError unless segments are sorted, non-overlapping and inside [0, T).
    void validate() const;
    bool operator==(const Alignment&) const = default;
};

enum class LossKind { xent, maxpool };

LossKind parse_loss_kind(const std::string& s);
std::string to_string(LossKind k);

struct LossResult {
    double value = 0.0;
    // Number of frames whose terms enter the loss; the divisor for averaging.
    int contributing_frames = 0;
    // Chosen frame per segment (max-pooling only).
    std::vector<int> selected_frames;
    // d(value)/d(logits), T x n_o. Rows of discarded keyword frames are zero.
    Mat<double> grad_logits;
    // Number of posteriors that hit kPosteriorClamp.
    int clamped = 0;
};

/// Per-frame class labels: 1 on segment frames, 0 elsewhere.
std::vector<int> frame_targets(const Alignment& align);

/// -ln y[k], with y[k] clamped at kPosteriorClamp. `clamped` is incremented on a clamp.
double xent_frame(const Eigen::Ref<const Eigen::RowVectorXd>& y, int k, int* clamped = nullptr);

LossResult xent_sequence(const PosteriorTrace& trace, const Alignment& align);

/// Background frames keep their cross-entropy term; each keyword segment contributes only
/// the frame with the largest keyword posterior (earliest on ties).
LossResult maxpool_loss(const PosteriorTrace& trace, const Alignment& align);

LossResult compute_loss(LossKind kind, const PosteriorTrace& trace, const Alignment& align);

/// Diagnostics line for training logs: {"value", "frames", "selected"}.
nlohmann::json to_json(const LossResult& r);

}  // namespace kwspot
