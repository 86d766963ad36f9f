#pragma once

// Reference implementations used as test oracles. They are written with plain loops
// over std::vector so they share no code paths with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "kwspot/features.hpp"
#include "kwspot/loss.hpp"
#include "kwspot/model.hpp"

namespace kwspot::testing {

using Row = std::vector<double>;
using Table = std::vector<Row>;

inline double sig(double a) { return 1.0 / (1.0 + std::exp(-a)); }

inline Row matvec(const Mat<double>& W, const Row& x) {
    Row y(static_cast<std::size_t>(W.rows()), 0.0);
    for (Eigen::Index i = 0; i < W.rows(); ++i)
        for (Eigen::Index j = 0; j < W.cols(); ++j) y[i] += W(i, j) * x[j];
    return y;
}

inline Row softmax_loop(const Row& z) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    Row e(z.size());
    double s = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) s += e[k] = std::exp(z[k] - m);
    for (double& v : e) v /= s;
    return e;
}

/// Scalar-loop projected peephole LSTM from a zero state.
inline Table lstm_oracle(const LstmParams<double>& p, const RowMatrix& X) {
    const auto nc = static_cast<std::size_t>(p.dims.n_c);
    Row c(nc, 0.0), r(static_cast<std::size_t>(p.dims.n_r), 0.0);
    Table out;
    for (Eigen::Index t = 0; t < X.rows(); ++t) {
        Row x(X.row(t).data(), X.row(t).data() + X.cols());
        const Row ix = matvec(p.W_ix, x), fx = matvec(p.W_fx, x), cx = matvec(p.W_cx, x),
                  ox = matvec(p.W_ox, x);
        const Row ir = matvec(p.W_ir, r), fr = matvec(p.W_fr, r), cr = matvec(p.W_cr, r),
                  orr = matvec(p.W_or, r);
        Row cn(nc), m(nc);
        for (std::size_t j = 0; j < nc; ++j) {
            const double i = sig(ix[j] + ir[j] + p.w_ic[j] * c[j] + p.b_i[j]);
            const double f = sig(fx[j] + fr[j] + p.w_fc[j] * c[j] + p.b_f[j]);
            const double g = std::tanh(cx[j] + cr[j] + p.b_c[j]);
            cn[j] = f * c[j] + i * g;
            const double o = sig(ox[j] + orr[j] + p.w_oc[j] * cn[j] + p.b_o[j]);
            m[j] = o * std::tanh(cn[j]);
        }
        c = cn;
        r = matvec(p.W_rm, m);
        Row z = matvec(p.W_yr, r);
        for (std::size_t k = 0; k < z.size(); ++k) z[k] += p.b_y[k];
        out.push_back(softmax_loop(z));
    }
    return out;
}

inline Table dnn_oracle(const DnnParams<double>& p, const RowMatrix& X) {
    Table out;
    for (Eigen::Index t = 0; t < X.rows(); ++t) {
        Row a(X.row(t).data(), X.row(t).data() + X.cols());
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            Row z = matvec(p.layers[l].W, a);
            for (std::size_t k = 0; k < z.size(); ++k) z[k] += p.layers[l].b[k];
            if (l + 1 < p.layers.size()) {
                for (double& v : z) v = sig(v);
                a = z;
            } else {
                a = softmax_loop(z);
            }
        }
        out.push_back(a);
    }
    return out;
}

/// Mean of x[max(0, t-n+1) .. t], summed from scratch for every t.
inline Row smooth_oracle(const Row& x, int n_ctx) {
    Row s(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) {
        const std::size_t lo = t + 1 >= static_cast<std::size_t>(n_ctx) ? t + 1 - n_ctx : 0;
        double sum = 0.0;
        for (std::size_t k = lo; k <= t; ++k) sum += x[k];
        s[t] = sum / static_cast<double>(t - lo + 1);
    }
    return s;
}

inline std::vector<int> fire_oracle(const Row& s, double threshold, int n_lck) {
    std::vector<int> spikes;
    int blocked_until = -1;  // last frame covered by the current lockout
    for (int t = 0; t < static_cast<int>(s.size()); ++t) {
        if (t <= blocked_until) continue;
        if (s[t] >= threshold) {
            spikes.push_back(t);
            blocked_until = t + n_lck;
        }
    }
    return spikes;
}

struct Counts {
    int ta = 0, fa = 0, miss = 0;
};

/// Spike-major matching: each spike goes to the first undetected segment whose window
/// [start, end + n_lat] holds it. Agrees with segment-major matching whenever the
/// windows of different segments do not overlap.
inline Counts classify_oracle(const std::vector<int>& spikes, const Alignment& a, int n_lat) {
    std::vector<bool> detected(a.segments.size(), false);
    Counts c;
    for (int s : spikes) {
        bool used = false;
        for (std::size_t k = 0; k < a.segments.size() && !used; ++k) {
            if (!detected[k] && s >= a.segments[k].start && s <= a.segments[k].end + n_lat) {
                detected[k] = true;
                used = true;
            }
        }
        if (used) ++c.ta; else ++c.fa;
    }
    for (bool d : detected) c.miss += d ? 0 : 1;
    return c;
}

/// Central difference of `loss` w.r.t. every entry of the flattened parameters.
template <typename Params, typename LossFn>
Vec<double> numeric_gradient(const Params& p, LossFn&& loss, double eps) {
    const Vec<double> base = p.flatten();
    Vec<double> g(base.size());
    Params q = p;
    for (Eigen::Index k = 0; k < base.size(); ++k) {
        Vec<double> v = base;
        v[k] = base[k] + eps;
        q.unflatten(v);
        const double up = loss(q);
        v[k] = base[k] - eps;
        q.unflatten(v);
        const double down = loss(q);
        g[k] = (up - down) / (2.0 * eps);
    }
    return g;
}

/// |a - b| / max(|a|, |b|), with the denominator floored at `floor`.
inline double relative_error(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline RowMatrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                               double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    RowMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = u(rng);
    return m;
}

/// Every parameter U[-range, range], biases included.
template <typename Params>
void randomize(Params& p, std::mt19937_64& rng, double range) {
    std::uniform_real_distribution<double> u(-range, range);
    p.for_each_tensor([&](const char*, auto& t, bool) {
        for (Eigen::Index i = 0; i < t.rows(); ++i)
            for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = u(rng);
    });
}

/// T x 2 posterior rows with keyword posterior `kw[t]`.
inline PosteriorTrace trace_from_keyword(const Row& kw) {
    PosteriorTrace tr;
    tr.rows.resize(static_cast<Eigen::Index>(kw.size()), 2);
    for (std::size_t t = 0; t < kw.size(); ++t) {
        tr.rows(static_cast<Eigen::Index>(t), 0) = 1.0 - kw[t];
        tr.rows(static_cast<Eigen::Index>(t), 1) = kw[t];
    }
    return tr;
}

inline Alignment make_alignment(int T, std::vector<std::pair<int, int>> segs,
                                std::string id = "u") {
    Alignment a;
    a.utterance_id = std::move(id);
    a.total_frames = T;
    for (auto [s, e] : segs) a.segments.push_back({s, e, kKeywordClass});
    return a;
}

/// Fresh, empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("kwspot-" + tag + "-" + std::to_string(rd()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

struct MicroUtterance {
    Row keyword;  // per-frame keyword posterior
    Alignment alignment;
};

/// Two hand-built utterances whose segment-plus-latency windows (n_lat <= 20) never overlap.
inline std::vector<MicroUtterance> micro_set() {
    MicroUtterance a;
    a.keyword.assign(120, 0.05);
    const double rise[] = {0.31, 0.62, 0.81, 0.93, 0.97, 0.88, 0.74, 0.52, 0.33, 0.21};
    for (int k = 0; k < 10; ++k) a.keyword[22 + k] = rise[k];
    const double bump[] = {0.44, 0.58, 0.71, 0.69, 0.57};
    for (int k = 0; k < 5; ++k) a.keyword[74 + k] = bump[k];
    for (int t = 96; t < 106; ++t) a.keyword[t] = 0.77;  // late burst inside the second window
    a.keyword[3] = 0.95;                                   // isolated early blip
    a.alignment = make_alignment(120, {{20, 34}, {70, 84}}, "micro-a");

    MicroUtterance b;
    b.keyword.assign(90, 0.02);
    for (int t = 5; t < 9; ++t) b.keyword[t] = 0.46;
    const double peak[] = {0.18, 0.37, 0.55, 0.61, 0.49, 0.28};
    for (int k = 0; k < 6; ++k) b.keyword[45 + k] = peak[k];
    b.alignment = make_alignment(90, {{40, 59}}, "micro-b");
    return {a, b};
}

struct OraclePoint {
    double threshold;
    double miss_rate;
    double fa_rate;
};

/// Enumerates the threshold grid (plus the never-fire sentinel 2.0) with the loop oracles.
inline std::vector<OraclePoint> brute_force_sweep(const std::vector<MicroUtterance>& set,
                                                  int grid, int n_ctx, int n_lck, int n_lat) {
    std::vector<double> thresholds;
    for (int i = 0; i < grid; ++i) thresholds.push_back(static_cast<double>(i) / (grid - 1));
    thresholds.push_back(2.0);
    int segments = 0;
    for (const auto& u : set) segments += static_cast<int>(u.alignment.segments.size());
    std::vector<OraclePoint> out;
    for (double thr : thresholds) {
        int miss = 0, fa = 0;
        for (const auto& u : set) {
            const auto c = classify_oracle(fire_oracle(smooth_oracle(u.keyword, n_ctx), thr, n_lck),
                                           u.alignment, n_lat);
            miss += c.miss;
            fa += c.fa;
        }
        out.push_back({thr, static_cast<double>(miss) / segments,
                       static_cast<double>(fa) / static_cast<double>(set.size())});
    }
    return out;
}

}  // namespace kwspot::testing
