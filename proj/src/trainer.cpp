#include "kwspot/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "kwspot/corpus.hpp"
#include "kwspot/error.hpp"

namespace kwspot {

nlohmann::json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},           {"lr", r.lr},
            {"trained_lr", r.trained_lr}, {"train_loss", r.train_loss},
            {"dev_loss", r.dev_loss},     {"repeated", r.repeated}};
}

TrainLog run_schedule(const ScheduleConfig& config, ScheduleTarget& target,
                      const std::function<void(const EpochRecord&)>& on_epoch) {
    if (!(config.initial_lr > 0.0)) throw ConfigError("initial_lr must be positive");
    if (config.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    const double min_lr = config.initial_lr * config.min_lr_factor;

    TrainLog log;
    double lr = config.initial_lr;
    double prev_dev = target.dev_loss();
    log.initial_dev_loss = prev_dev;
    target.snapshot();

    while (log.accepted_epochs < config.max_epochs) {
        EpochRecord rec;
        rec.epoch = log.accepted_epochs + 1;
        rec.trained_lr = lr;
        rec.train_loss = target.train_epoch(rec.epoch, lr);
        rec.dev_loss = target.dev_loss();
        if (rec.dev_loss > prev_dev) {
            target.restore();
            lr *= 0.5;
            rec.repeated = true;
        } else {
            ++log.accepted_epochs;
            prev_dev = rec.dev_loss;
            target.snapshot();
        }
        rec.lr = lr;
        log.records.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (lr < min_lr) {
            log.stop_reason = "min_lr";
            return log;
        }
    }
    log.stop_reason = "max_epochs";
    return log;
}

void TrainConfig::validate() const {
    if (!(initial_lr > 0.0)) throw ConfigError("initial_lr must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (!(min_lr_factor > 0.0 && min_lr_factor <= 1.0)) throw ConfigError("min_lr_factor must be in (0, 1]");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (cell_clip < 0.0) throw ConfigError("cell_clip must be >= 0");
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers; results are indexed, so the
// caller's reduction order does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < n; i += workers) fn(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

template <typename Params>
class ParamsTarget : public ScheduleTarget {
public:
    ParamsTarget(Params& params, const TrainConfig& config, const std::vector<TrainUtterance>& dev,
                 int left, int right)
        : params_(params), config_(config), dev_(dev), left_(left), right_(right) {}

    double dev_loss() override { return average_loss(params_, dev_, left_, right_, config_.loss); }
    void snapshot() override { saved_ = params_; }
    void restore() override { params_ = saved_; }

protected:
    Params& params_;
    Params saved_;
    const TrainConfig& config_;
    const std::vector<TrainUtterance>& dev_;
    int left_;
    int right_;
};

class LstmTarget final : public ParamsTarget<LstmParams<double>> {
public:
    LstmTarget(LstmParams<double>& params, const TrainConfig& config,
               const std::vector<TrainUtterance>& train, const std::vector<TrainUtterance>& dev,
               int left, int right)
        : ParamsTarget(params, config, dev, left, right), train_(train) {}

    double train_epoch(int epoch, double lr) override {
        const auto order = epoch_order(train_.size(), config_.seed, epoch);
        double loss_sum = 0.0;
        long frames = 0;
        const auto batch = static_cast<std::size_t>(config_.batch_size);
        for (std::size_t b = 0; b < order.size(); b += batch) {
            const std::size_t count = std::min(batch, order.size() - b);
            std::vector<GradientResult<LstmParams<double>>> results(count);
            parallel_for(count, config_.threads, [&](std::size_t i) {
                const auto& u = train_[order[b + i]];
                const auto X = stack_context(u.frames, left_, right_);
                results[i] = bptt(params_, X.vectors, u.alignment, config_.loss, config_.cell_clip);
                results[i].loss.grad_logits.resize(0, 0);
            });
            LstmParams<double> sum(params_.dims);
            int batch_frames = 0;
            for (const auto& r : results) {
                accumulate(sum, r.grad);
                batch_frames += r.loss.contributing_frames;
                loss_sum += r.loss.value;
            }
            frames += batch_frames;
            sgd_step(params_, sum, lr, batch_frames);
        }
        return frames > 0 ? loss_sum / static_cast<double>(frames) : 0.0;
    }

private:
    const std::vector<TrainUtterance>& train_;
};

// Fills `row` with frame t of `frames` stacked with clamped context.
void stack_row(const RowMatrix& frames, Eigen::Index t, int left, int right,
               Eigen::Ref<Eigen::RowVectorXd> row) {
    const Eigen::Index T = frames.rows();
    const Eigen::Index dim = frames.cols();
    for (int k = 0; k < left + right + 1; ++k) {
        const Eigen::Index src = std::clamp<Eigen::Index>(t - left + k, 0, T - 1);
        row.segment(k * dim, dim) = frames.row(src);
    }
}

class DnnTarget final : public ParamsTarget<DnnParams<double>> {
public:
    DnnTarget(DnnParams<double>& params, const TrainConfig& config,
              const std::vector<TrainUtterance>& train, const std::vector<TrainUtterance>& dev,
              int left, int right)
        : ParamsTarget(params, config, dev, left, right), train_(train) {
        for (std::size_t u = 0; u < train.size(); ++u) {
            const auto labels = frame_targets(train[u].alignment);
            for (std::size_t t = 0; t < labels.size(); ++t) frames_.push_back({u, t, labels[t]});
        }
    }

    double train_epoch(int epoch, double lr) override {
        const auto order = epoch_order(frames_.size(), config_.seed, epoch);
        const auto batch = static_cast<std::size_t>(config_.batch_size);
        const int width = params_.input_dim();
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < order.size(); b += batch) {
            const std::size_t count = std::min(batch, order.size() - b);
            RowMatrix X(static_cast<Eigen::Index>(count), width);
            for (std::size_t i = 0; i < count; ++i) {
                const auto& f = frames_[order[b + i]];
                stack_row(train_[f.utt].frames, static_cast<Eigen::Index>(f.t), left_, right_,
                          X.row(static_cast<Eigen::Index>(i)));
            }
            auto fwd = dnn_forward_cached(params_, X);
            Mat<double> grad = fwd.acts.back();
            for (std::size_t i = 0; i < count; ++i) {
                const auto r = static_cast<Eigen::Index>(i);
                const int k = frames_[order[b + i]].label;
                loss_sum += xent_frame(grad.row(r), k);
                grad(r, k) -= 1.0;
            }
            const auto g = dnn_backward(params_, fwd, grad);
            detail::check_finite(g, "dnn backprop");
            sgd_step(params_, g, lr, static_cast<int>(count));
        }
        return frames_.empty() ? 0.0 : loss_sum / static_cast<double>(frames_.size());
    }

private:
    struct FrameRef {
        std::size_t utt;
        std::size_t t;
        int label;
    };
    const std::vector<TrainUtterance>& train_;
    std::vector<FrameRef> frames_;
};

void check_sets(const std::vector<TrainUtterance>& train, const std::vector<TrainUtterance>& dev) {
    if (train.empty()) throw ValidationError("training set is empty");
    if (dev.empty()) throw ValidationError("dev set is empty");
}

}  // namespace

double average_loss(const LstmParams<double>& p, const std::vector<TrainUtterance>& data, int left,
                    int right, LossKind kind) {
    double sum = 0.0;
    long frames = 0;
    for (const auto& u : data) {
        const auto X = stack_context(u.frames, left, right);
        const auto r = compute_loss(kind, lstm_forward(p, X.vectors, false).trace, u.alignment);
        sum += r.value;
        frames += r.contributing_frames;
    }
    return frames > 0 ? sum / static_cast<double>(frames) : 0.0;
}

double average_loss(const DnnParams<double>& p, const std::vector<TrainUtterance>& data, int left,
                    int right, LossKind kind) {
    double sum = 0.0;
    long frames = 0;
    for (const auto& u : data) {
        const auto X = stack_context(u.frames, left, right);
        const auto r = compute_loss(kind, dnn_forward(p, X.vectors), u.alignment);
        sum += r.value;
        frames += r.contributing_frames;
    }
    return frames > 0 ? sum / static_cast<double>(frames) : 0.0;
}

LstmTrainResult train_lstm(const TrainConfig& config, LstmParams<double> init,
                           const std::vector<TrainUtterance>& train,
                           const std::vector<TrainUtterance>& dev, int left, int right,
                           const std::function<void(const EpochRecord&)>& on_epoch) {
    config.validate();
    check_sets(train, dev);
    LstmTrainResult out{std::move(init), {}};
    LstmTarget target(out.params, config, train, dev, left, right);
    out.log = run_schedule(config.schedule(), target, on_epoch);
    target.restore();
    return out;
}

DnnTrainResult train_dnn(const TrainConfig& config, DnnParams<double> init,
                         const std::vector<TrainUtterance>& train,
                         const std::vector<TrainUtterance>& dev, int left, int right,
                         const std::function<void(const EpochRecord&)>& on_epoch) {
    config.validate();
    check_sets(train, dev);
    if (config.loss != LossKind::xent) throw ConfigError("the DNN baseline trains with xent only");
    DnnTrainResult out{std::move(init), {}};
    DnnTarget target(out.params, config, train, dev, left, right);
    out.log = run_schedule(config.schedule(), target, on_epoch);
    target.restore();
    return out;
}

}  // namespace kwspot
