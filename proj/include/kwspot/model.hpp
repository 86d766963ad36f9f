#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "kwspot/error.hpp"

namespace kwspot {

inline constexpr int kBackgroundClass = 0;
inline constexpr int kKeywordClass = 1;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct LstmDims {
    int n_i = 0;  // input
    int n_c = 0;  // memory cells
    int n_r = 0;  // projection
    int n_o = 2;  // output classes

    bool operator==(const LstmDims&) const = default;
};

/// Closed-form model size: 4*n_c*n_r + 4*n_i*n_c + n_r*n_o + n_c*n_r + 3*n_c.
/// Biases are not part of this count.
constexpr std::int64_t count_params(std::int64_t n_c, std::int64_t n_r, std::int64_t n_i,
                                    std::int64_t n_o) {
    return n_c * n_r * 4 + n_i * n_c * 4 + n_r * n_o + n_c * n_r + n_c * 3;
}

/// Scalars actually stored by LstmParams: count_params plus the five bias vectors.
constexpr std::int64_t count_stored_params(const LstmDims& d) {
    return count_params(d.n_c, d.n_r, d.n_i, d.n_o) + 4 * std::int64_t{d.n_c} + d.n_o;
}

/// Projected LSTM with diagonal peepholes and a softmax output layer.
template <typename Scalar>
struct LstmParams {
    LstmDims dims;
    // Input weights, n_c x n_i.
    Mat<Scalar> W_ix, W_fx, W_cx, W_ox;
    // Recurrent weights from the projection, n_c x n_r.
    Mat<Scalar> W_ir, W_fr, W_cr, W_or;
    // Diagonal peepholes.
    Vec<Scalar> w_ic, w_fc, w_oc;
    Vec<Scalar> b_i, b_f, b_c, b_o;
    Mat<Scalar> W_rm;  // n_r x n_c
    Mat<Scalar> W_yr;  // n_o x n_r
    Vec<Scalar> b_y;

    LstmParams() = default;
    explicit LstmParams(const LstmDims& d) : dims(d) {
        if (d.n_i <= 0 || d.n_c <= 0 || d.n_r <= 0 || d.n_o <= 0) {
            throw ConfigError("LSTM dimensions must be positive");
        }
        for (auto* m : {&W_ix, &W_fx, &W_cx, &W_ox}) m->setZero(d.n_c, d.n_i);
        for (auto* m : {&W_ir, &W_fr, &W_cr, &W_or}) m->setZero(d.n_c, d.n_r);
        for (auto* v : {&w_ic, &w_fc, &w_oc, &b_i, &b_f, &b_c, &b_o}) v->setZero(d.n_c);
        W_rm.setZero(d.n_r, d.n_c);
        W_yr.setZero(d.n_o, d.n_r);
        b_y.setZero(d.n_o);
    }

    /// Visits every tensor in checkpoint order. `f(name, tensor, is_bias)`.
    template <typename F>
    void for_each_tensor(F&& f) {
        f("W_ix", W_ix, false); f("W_fx", W_fx, false); f("W_cx", W_cx, false); f("W_ox", W_ox, false);
        f("W_ir", W_ir, false); f("W_fr", W_fr, false); f("W_cr", W_cr, false); f("W_or", W_or, false);
        f("w_ic", w_ic, false); f("w_fc", w_fc, false); f("w_oc", w_oc, false);
        f("b_i", b_i, true); f("b_f", b_f, true); f("b_c", b_c, true); f("b_o", b_o, true);
        f("W_rm", W_rm, false); f("W_yr", W_yr, false); f("b_y", b_y, true);
    }
    template <typename F>
    void for_each_tensor(F&& f) const {
        const_cast<LstmParams*>(this)->for_each_tensor(
            [&](const char* name, const auto& t, bool bias) { f(name, t, bias); });
    }

    std::int64_t size() const {
        std::int64_t n = 0;
        for_each_tensor([&](const char*, const auto& t, bool) { n += t.size(); });
        return n;
    }

    template <typename Other>
    LstmParams<Other> cast() const {
        LstmParams<Other> out(dims);
        out.unflatten(flatten().template cast<Other>());
        return out;
    }

    bool operator==(const LstmParams& o) const {
        return dims == o.dims && flatten() == o.flatten();
    }

    /// All tensors concatenated in checkpoint order.
    Vec<Scalar> flatten() const {
        Vec<Scalar> out(size());
        Eigen::Index pos = 0;
        for_each_tensor([&](const char*, const auto& t, bool) {
            for (Eigen::Index r = 0; r < t.rows(); ++r)
                for (Eigen::Index c = 0; c < t.cols(); ++c) out[pos++] = t(r, c);
        });
        return out;
    }

    void unflatten(const Vec<Scalar>& flat) {
        if (flat.size() != size()) throw ConfigError("flat parameter vector has wrong size");
        Eigen::Index pos = 0;
        for_each_tensor([&](const char*, auto& t, bool) {
            for (Eigen::Index r = 0; r < t.rows(); ++r)
                for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = flat[pos++];
        });
    }
};

template <typename Scalar>
struct LstmState {
    Vec<Scalar> c;
    Vec<Scalar> r;

    static LstmState zero(const LstmDims& d) {
        return {Vec<Scalar>::Zero(d.n_c), Vec<Scalar>::Zero(d.n_r)};
    }
};

/// Per-step activations kept for backpropagation through time.
template <typename Scalar>
struct LstmStepCache {
    Vec<Scalar> i, f, g, o, c, h, m, r, y;
};

template <typename Scalar>
inline Vec<Scalar> sigmoid(const Vec<Scalar>& a) {
    return (Scalar(1) + (-a.array()).exp()).inverse().matrix();
}

template <typename Scalar, typename Derived>
inline Vec<Scalar> softmax(const Eigen::MatrixBase<Derived>& z) {
    Vec<Scalar> e = (z.array() - z.maxCoeff()).exp().matrix();
    return e / e.sum();
}

/// One time step. Updates `state` in place and returns the cached activations;
/// `cache.y` is the softmax posterior.
template <typename Scalar, typename Derived>
LstmStepCache<Scalar> lstm_step(const LstmParams<Scalar>& p, LstmState<Scalar>& state,
                                const Eigen::MatrixBase<Derived>& x) {
    const auto& d = p.dims;
    if (x.size() != d.n_i) {
        throw ConfigError("lstm_step: input has dim " + std::to_string(x.size()) + ", expected " +
                          std::to_string(d.n_i));
    }
    if (state.c.size() != d.n_c || state.r.size() != d.n_r) {
        throw ConfigError("lstm_step: state dimensions do not match parameters");
    }
    const Vec<Scalar> xv = x.derived().reshaped().template cast<Scalar>();

    LstmStepCache<Scalar> k;
    k.i = sigmoid<Scalar>(p.W_ix * xv + p.W_ir * state.r + p.w_ic.cwiseProduct(state.c) + p.b_i);
    k.f = sigmoid<Scalar>(p.W_fx * xv + p.W_fr * state.r + p.w_fc.cwiseProduct(state.c) + p.b_f);
    k.g = (p.W_cx * xv + p.W_cr * state.r + p.b_c).array().tanh().matrix();
    k.c = k.f.cwiseProduct(state.c) + k.i.cwiseProduct(k.g);
    k.o = sigmoid<Scalar>(p.W_ox * xv + p.W_or * state.r + p.w_oc.cwiseProduct(k.c) + p.b_o);
    k.h = k.c.array().tanh().matrix();
    k.m = k.o.cwiseProduct(k.h);
    k.r = p.W_rm * k.m;
    k.y = softmax<Scalar>(p.W_yr * k.r + p.b_y);

    state.c = k.c;
    state.r = k.r;
    return k;
}

/// Per-frame class posteriors of one utterance.
struct PosteriorTrace {
    Mat<double> rows;  // T x n_o
    int keyword_index = kKeywordClass;
    std::string utterance_id;

    Eigen::Index length() const { return rows.rows(); }
    Eigen::VectorXd keyword() const { return rows.col(keyword_index); }
};

template <typename Scalar>
struct LstmForward {
    PosteriorTrace trace;
    std::vector<LstmStepCache<Scalar>> steps;
};

/// Runs the LSTM from a zero state over every row of `X`.
template <typename Scalar, typename Derived>
LstmForward<Scalar> lstm_forward(const LstmParams<Scalar>& p, const Eigen::MatrixBase<Derived>& X,
                                 bool keep_cache = true) {
    if (X.cols() != p.dims.n_i) {
        throw ConfigError("lstm_forward: input width " + std::to_string(X.cols()) + " != n_i " +
                          std::to_string(p.dims.n_i));
    }
    LstmForward<Scalar> out;
    out.trace.rows.resize(X.rows(), p.dims.n_o);
    if (keep_cache) out.steps.reserve(static_cast<std::size_t>(X.rows()));
    auto state = LstmState<Scalar>::zero(p.dims);
    for (Eigen::Index t = 0; t < X.rows(); ++t) {
        auto k = lstm_step(p, state, X.row(t));
        out.trace.rows.row(t) = k.y.transpose().template cast<double>();
        if (keep_cache) out.steps.push_back(std::move(k));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feed-forward baseline

template <typename Scalar>
struct DenseLayer {
    Mat<Scalar> W;  // out x in
    Vec<Scalar> b;
};

/// Sigmoid hidden layers and a softmax output.
template <typename Scalar>
struct DnnParams {
    std::vector<int> layer_sizes;  // input, hidden..., output
    std::vector<DenseLayer<Scalar>> layers;

    DnnParams() = default;
    explicit DnnParams(std::vector<int> sizes) : layer_sizes(std::move(sizes)) {
        if (layer_sizes.size() < 2) throw ConfigError("DNN needs at least input and output sizes");
        for (int s : layer_sizes) {
            if (s <= 0) throw ConfigError("DNN layer sizes must be positive");
        }
        for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
            layers.push_back({Mat<Scalar>::Zero(layer_sizes[l + 1], layer_sizes[l]),
                              Vec<Scalar>::Zero(layer_sizes[l + 1])});
        }
    }

    /// 620 -> 4 x 128 -> 2.
    static DnnParams baseline() { return DnnParams({620, 128, 128, 128, 128, 2}); }

    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }

    template <typename F>
    void for_each_tensor(F&& f) {
        for (auto& l : layers) {
            f("W", l.W, false);
            f("b", l.b, true);
        }
    }
    template <typename F>
    void for_each_tensor(F&& f) const {
        for (const auto& l : layers) {
            f("W", l.W, false);
            f("b", l.b, true);
        }
    }

    std::int64_t size() const {
        std::int64_t n = 0;
        for (const auto& l : layers) n += l.W.size() + l.b.size();
        return n;
    }

    Vec<Scalar> flatten() const {
        Vec<Scalar> out(size());
        Eigen::Index pos = 0;
        for_each_tensor([&](const char*, const auto& t, bool) {
            for (Eigen::Index r = 0; r < t.rows(); ++r)
                for (Eigen::Index c = 0; c < t.cols(); ++c) out[pos++] = t(r, c);
        });
        return out;
    }

    void unflatten(const Vec<Scalar>& flat) {
        if (flat.size() != size()) throw ConfigError("flat parameter vector has wrong size");
        Eigen::Index pos = 0;
        for_each_tensor([&](const char*, auto& t, bool) {
            for (Eigen::Index r = 0; r < t.rows(); ++r)
                for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = flat[pos++];
        });
    }

    bool operator==(const DnnParams& o) const {
        return layer_sizes == o.layer_sizes && flatten() == o.flatten();
    }
};

inline std::int64_t count_dnn_params(const std::vector<int>& sizes) {
    std::int64_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        n += std::int64_t{sizes[l]} * sizes[l + 1] + sizes[l + 1];
    }
    return n;
}

/// Activations of every layer for a batch of rows; acts[0] is the input,
/// acts.back() the softmax output.
template <typename Scalar>
struct DnnForward {
    std::vector<Mat<Scalar>> acts;
};

template <typename Scalar, typename Derived>
DnnForward<Scalar> dnn_forward_cached(const DnnParams<Scalar>& p,
                                      const Eigen::MatrixBase<Derived>& X) {
    if (X.cols() != p.input_dim()) {
        throw ConfigError("dnn_forward: input width " + std::to_string(X.cols()) + " != " +
                          std::to_string(p.input_dim()));
    }
    DnnForward<Scalar> out;
    out.acts.reserve(p.layers.size() + 1);
    out.acts.push_back(X.template cast<Scalar>());
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto& layer = p.layers[l];
        Mat<Scalar> z = out.acts.back() * layer.W.transpose();
        z.rowwise() += layer.b.transpose();
        if (l + 1 < p.layers.size()) {
            z = (Scalar(1) + (-z.array()).exp()).inverse().matrix();
        } else {
            for (Eigen::Index t = 0; t < z.rows(); ++t) {
                z.row(t) = softmax<Scalar>(z.row(t).transpose()).transpose();
            }
        }
        out.acts.push_back(std::move(z));
    }
    return out;
}

/// Frames are scored independently.
template <typename Scalar, typename Derived>
PosteriorTrace dnn_forward(const DnnParams<Scalar>& p, const Eigen::MatrixBase<Derived>& X) {
    PosteriorTrace trace;
    trace.rows = dnn_forward_cached(p, X).acts.back().template cast<double>();
    return trace;
}

}  // namespace kwspot
