#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "kwspot/features.hpp"
#include "kwspot/loss.hpp"
#include "kwspot/model.hpp"

namespace kwspot {

inline constexpr double kInitWeightRange = 0.2;
inline constexpr double kInitBias = 0.1;

/// Weights ~ U[-0.2, 0.2], biases = 0.1; bit-identical for a given seed.
template <typename Params>
void init_params(Params& params, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(-kInitWeightRange, kInitWeightRange);
    params.for_each_tensor([&](const char*, auto& t, bool is_bias) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.cols(); ++c) {
                t(r, c) = is_bias ? S(kInitBias) : S(uniform(rng));
            }
        }
    });
}

template <typename Scalar>
LstmParams<Scalar> init_lstm(const LstmDims& dims, std::uint64_t seed) {
    LstmParams<Scalar> p(dims);
    init_params(p, seed);
    return p;
}

template <typename Scalar>
DnnParams<Scalar> init_dnn(const std::vector<int>& sizes, std::uint64_t seed) {
    DnnParams<Scalar> p(sizes);
    init_params(p, seed);
    return p;
}

template <typename Params>
struct GradientResult {
    LossResult loss;
    Params grad;
};

namespace detail {

template <typename Params>
void check_finite(const Params& grad, const char* what) {
    grad.for_each_tensor([&](const char* name, const auto& t, bool) {
        if (!t.allFinite()) {
            throw Error(std::string(what) + ": non-finite gradient in " + name);
        }
    });
}

}  // namespace detail

/// Backpropagation through time over the full sequence, given the cached forward pass.
/// `grad_logits` (T x n_o) is d(loss)/d(pre-softmax output) for every frame.
/// A positive `cell_clip` clamps the cell-state gradient elementwise at every step.
template <typename Scalar>
LstmParams<Scalar> lstm_backward(const LstmParams<Scalar>& p, const RowMatrix& X,
                                 const LstmForward<Scalar>& fwd, const Mat<double>& grad_logits,
                                 double cell_clip = 0.0) {
    const auto& d = p.dims;
    const Eigen::Index T = X.rows();
    LstmParams<Scalar> g(d);

    // Gate pre-activation gradients for every step, T x n_c each.
    Mat<Scalar> da_i(T, d.n_c), da_f(T, d.n_c), da_g(T, d.n_c), da_o(T, d.n_c);
    Mat<Scalar> dz = grad_logits.template cast<Scalar>();

    Vec<Scalar> dr_next = Vec<Scalar>::Zero(d.n_r);
    Vec<Scalar> dc_next = Vec<Scalar>::Zero(d.n_c);
    const Vec<Scalar> zero_c = Vec<Scalar>::Zero(d.n_c);
    const Vec<Scalar> zero_r = Vec<Scalar>::Zero(d.n_r);

    for (Eigen::Index t = T - 1; t >= 0; --t) {
        const auto& k = fwd.steps[static_cast<std::size_t>(t)];
        const Vec<Scalar>& c_prev = t > 0 ? fwd.steps[static_cast<std::size_t>(t - 1)].c : zero_c;
        const Vec<Scalar>& r_prev = t > 0 ? fwd.steps[static_cast<std::size_t>(t - 1)].r : zero_r;

        const Vec<Scalar> dz_t = dz.row(t).transpose();
        g.W_yr.noalias() += dz_t * k.r.transpose();
        g.b_y += dz_t;

        const Vec<Scalar> dr = p.W_yr.transpose() * dz_t + dr_next;
        g.W_rm.noalias() += dr * k.m.transpose();
        const Vec<Scalar> dm = p.W_rm.transpose() * dr;

        const Vec<Scalar> a_o = (dm.cwiseProduct(k.h).array() * k.o.array() * (Scalar(1) - k.o.array())).matrix();
        Vec<Scalar> dc = dc_next + (dm.array() * k.o.array() * (Scalar(1) - k.h.array().square())).matrix() +
                         a_o.cwiseProduct(p.w_oc);
        if (cell_clip > 0.0) dc = dc.cwiseMax(Scalar(-cell_clip)).cwiseMin(Scalar(cell_clip));
        g.w_oc += a_o.cwiseProduct(k.c);

        const Vec<Scalar> a_i = (dc.array() * k.g.array() * k.i.array() * (Scalar(1) - k.i.array())).matrix();
        const Vec<Scalar> a_g = (dc.array() * k.i.array() * (Scalar(1) - k.g.array().square())).matrix();
        const Vec<Scalar> a_f = (dc.array() * c_prev.array() * k.f.array() * (Scalar(1) - k.f.array())).matrix();

        g.w_ic += a_i.cwiseProduct(c_prev);
        g.w_fc += a_f.cwiseProduct(c_prev);

        dc_next = dc.cwiseProduct(k.f) + a_i.cwiseProduct(p.w_ic) + a_f.cwiseProduct(p.w_fc);
        dr_next.noalias() = p.W_ir.transpose() * a_i;
        dr_next.noalias() += p.W_fr.transpose() * a_f;
        dr_next.noalias() += p.W_cr.transpose() * a_g;
        dr_next.noalias() += p.W_or.transpose() * a_o;

        if (t > 0) {
            g.W_ir.noalias() += a_i * r_prev.transpose();
            g.W_fr.noalias() += a_f * r_prev.transpose();
            g.W_cr.noalias() += a_g * r_prev.transpose();
            g.W_or.noalias() += a_o * r_prev.transpose();
        }
        da_i.row(t) = a_i.transpose();
        da_f.row(t) = a_f.transpose();
        da_g.row(t) = a_g.transpose();
        da_o.row(t) = a_o.transpose();
    }

    const Mat<Scalar> Xs = X.template cast<Scalar>();
    g.W_ix.noalias() = da_i.transpose() * Xs;
    g.W_fx.noalias() = da_f.transpose() * Xs;
    g.W_cx.noalias() = da_g.transpose() * Xs;
    g.W_ox.noalias() = da_o.transpose() * Xs;
    g.b_i = da_i.colwise().sum().transpose();
    g.b_f = da_f.colwise().sum().transpose();
    g.b_c = da_g.colwise().sum().transpose();
    g.b_o = da_o.colwise().sum().transpose();
    return g;
}

/// Loss and exact gradient of every LSTM tensor for one utterance.
template <typename Scalar>
GradientResult<LstmParams<Scalar>> bptt(const LstmParams<Scalar>& p, const RowMatrix& X,
                                        const Alignment& align, LossKind kind,
                                        double cell_clip = 0.0) {
    auto fwd = lstm_forward(p, X);
    GradientResult<LstmParams<Scalar>> out;
    out.loss = compute_loss(kind, fwd.trace, align);
    out.grad = lstm_backward(p, X, fwd, out.loss.grad_logits, cell_clip);
    detail::check_finite(out.grad, "bptt");
    return out;
}

/// Plain backpropagation through the feed-forward network.
template <typename Scalar>
DnnParams<Scalar> dnn_backward(const DnnParams<Scalar>& p, const DnnForward<Scalar>& fwd,
                               const Mat<double>& grad_logits) {
    DnnParams<Scalar> g(p.layer_sizes);
    Mat<Scalar> delta = grad_logits.template cast<Scalar>();
    for (std::size_t l = p.layers.size(); l-- > 0;) {
        const Mat<Scalar>& input = fwd.acts[l];
        g.layers[l].W.noalias() = delta.transpose() * input;
        g.layers[l].b = delta.colwise().sum().transpose();
        if (l > 0) {
            Mat<Scalar> back = delta * p.layers[l].W;
            delta = (back.array() * input.array() * (Scalar(1) - input.array())).matrix();
        }
    }
    return g;
}

/// Utterance-level loss and gradient for the DNN (frames scored independently).
template <typename Scalar>
GradientResult<DnnParams<Scalar>> dnn_gradient(const DnnParams<Scalar>& p, const RowMatrix& X,
                                               const Alignment& align, LossKind kind) {
    auto fwd = dnn_forward_cached(p, X);
    PosteriorTrace trace;
    trace.rows = fwd.acts.back().template cast<double>();
    GradientResult<DnnParams<Scalar>> out;
    out.loss = compute_loss(kind, trace, align);
    out.grad = dnn_backward(p, fwd, out.loss.grad_logits);
    detail::check_finite(out.grad, "dnn backprop");
    return out;
}

/// Sums gradient tensors into `acc` (same shapes).
template <typename Params>
void accumulate(Params& acc, const Params& g) {
    auto flat = g.flatten();
    Eigen::Index pos = 0;
    acc.for_each_tensor([&](const char*, auto& t, bool) {
        for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) += flat[pos++];
    });
}

/// p <- p - lr * grad_sum / contributing_frames.
template <typename Params>
void sgd_step(Params& params, const Params& grad_sum, double lr, int contributing_frames) {
    if (contributing_frames <= 0) return;
    const double scale = lr / contributing_frames;
    auto flat = grad_sum.flatten();
    Eigen::Index pos = 0;
    params.for_each_tensor([&](const char*, auto& t, bool) {
        using S = typename std::decay_t<decltype(t)>::Scalar;
        for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) -= S(scale) * flat[pos++];
    });
}

// ---------------------------------------------------------------------------
// Learning-rate schedule

struct ScheduleConfig {
    double initial_lr = 1e-5;
    int max_epochs = 20;
    double min_lr_factor = 1.0 / 256.0;  // 0.5^8
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;          // learning rate in effect after this epoch's dev check
    double trained_lr = 0.0;  // learning rate the epoch was trained with
    double train_loss = 0.0;
    double dev_loss = 0.0;
    bool repeated = false;    // dev loss degraded; epoch rolled back and rerun at lr/2
};

struct TrainLog {
    double initial_dev_loss = 0.0;
    std::vector<EpochRecord> records;
    int accepted_epochs = 0;
    std::string stop_reason;
};

nlohmann::json to_json(const EpochRecord& r);

/// What the schedule drives. `snapshot` and `restore` save and reinstate parameters.
class ScheduleTarget {
public:
    virtual ~ScheduleTarget() = default;
    /// Trains one pass over the training data; returns its average loss.
    virtual double train_epoch(int epoch, double lr) = 0;
    virtual double dev_loss() = 0;
    virtual void snapshot() = 0;
    virtual void restore() = 0;
};

/// Halve-and-repeat on dev degradation; stops after `max_epochs` accepted epochs or once
/// the learning rate falls below initial_lr * min_lr_factor.
TrainLog run_schedule(const ScheduleConfig& config, ScheduleTarget& target,
                      const std::function<void(const EpochRecord&)>& on_epoch = {});

// ---------------------------------------------------------------------------
// Training data and loops

struct TrainUtterance {
    std::string id;
    RowMatrix frames;  // normalized LFBE, T x 20
    Alignment alignment;
};

struct TrainConfig {
    double initial_lr = 1e-5;
    int batch_size = 16;  // utterances (LSTM) or frames (DNN)
    int max_epochs = 20;
    double min_lr_factor = 1.0 / 256.0;
    LossKind loss = LossKind::xent;
    std::uint64_t seed = 1;
    int threads = 1;
    double cell_clip = 0.0;

    void validate() const;
    ScheduleConfig schedule() const { return {initial_lr, max_epochs, min_lr_factor}; }
};

/// Utterance visiting order for an epoch; depends only on (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

struct LstmTrainResult {
    LstmParams<double> params;
    TrainLog log;
};

struct DnnTrainResult {
    DnnParams<double> params;
    TrainLog log;
};

/// Average loss per contributing frame over a data set.
double average_loss(const LstmParams<double>& p, const std::vector<TrainUtterance>& data,
                    int left, int right, LossKind kind);
double average_loss(const DnnParams<double>& p, const std::vector<TrainUtterance>& data, int left,
                    int right, LossKind kind);

LstmTrainResult train_lstm(const TrainConfig& config, LstmParams<double> init,
                           const std::vector<TrainUtterance>& train,
                           const std::vector<TrainUtterance>& dev, int left, int right,
                           const std::function<void(const EpochRecord&)>& on_epoch = {});

DnnTrainResult train_dnn(const TrainConfig& config, DnnParams<double> init,
                         const std::vector<TrainUtterance>& train,
                         const std::vector<TrainUtterance>& dev, int left, int right,
                         const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace kwspot
