#include "kwspot/experiment.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "kwspot/error.hpp"

namespace kwspot {

Recipe parse_recipe(const std::string& s) {
    if (s == "dnn-xent") return Recipe::dnn_xent;
    if (s == "lstm-xent") return Recipe::lstm_xent;
    if (s == "lstm-maxpool") return Recipe::lstm_maxpool;
    throw ConfigError("unknown recipe '" + s + "' (expected dnn-xent, lstm-xent or lstm-maxpool)");
}

std::string to_string(Recipe r) {
    switch (r) {
        case Recipe::dnn_xent: return "dnn-xent";
        case Recipe::lstm_xent: return "lstm-xent";
        case Recipe::lstm_maxpool: return "lstm-maxpool";
    }
    return "?";
}

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& section) {
    if (!j.is_object()) throw ConfigError("config: " + section + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw ConfigError("config: unknown field '" + section + key + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const json::exception& ex) {
        throw ConfigError("config: field '" + section + key + "': " + ex.what());
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

json recipe_json(const RecipeSettings& r) { return {{"initial_lr", r.initial_lr}, {"batch_size", r.batch_size}}; }

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j, const std::filesystem::path& base) {
    ExperimentConfig c;
    reject_unknown(j, {"manifest", "feature_cache", "checkpoint_dir", "report_dir", "detector", "eval", "model", "train"}, "");
    std::string manifest, cache, ckpt = c.checkpoint_dir.string(), report = c.report_dir.string();
    read(j, "manifest", manifest, "");
    read(j, "feature_cache", cache, "");
    read(j, "checkpoint_dir", ckpt, "");
    read(j, "report_dir", report, "");
    c.manifest = resolve(base, manifest);
    c.feature_cache = resolve(base, cache);
    c.checkpoint_dir = resolve(base, ckpt);
    c.report_dir = resolve(base, report);

    if (j.contains("detector")) {
        const auto& d = j.at("detector");
        reject_unknown(d, {"n_ctx", "n_lck", "threshold"}, "detector.");
        read(d, "n_ctx", c.detector.n_ctx, "detector.");
        read(d, "n_lck", c.detector.n_lck, "detector.");
        read(d, "threshold", c.detector.threshold, "detector.");
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown(e, {"n_lat", "miss_rate_cap", "threshold_grid"}, "eval.");
        read(e, "n_lat", c.eval.n_lat, "eval.");
        read(e, "miss_rate_cap", c.eval.miss_rate_cap, "eval.");
        read(e, "threshold_grid", c.eval.threshold_grid, "eval.");
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        reject_unknown(m, {"lstm", "dnn", "input_norm"}, "model.");
        read(m, "input_norm", c.input_norm, "model.");
        if (m.contains("lstm")) {
            const auto& l = m.at("lstm");
            reject_unknown(l, {"cells", "projection", "left", "right"}, "model.lstm.");
            read(l, "cells", c.lstm_cells, "model.lstm.");
            read(l, "projection", c.lstm_projection, "model.lstm.");
            read(l, "left", c.lstm_left, "model.lstm.");
            read(l, "right", c.lstm_right, "model.lstm.");
        }
        if (m.contains("dnn")) {
            const auto& d = m.at("dnn");
            reject_unknown(d, {"hidden", "left", "right"}, "model.dnn.");
            read(d, "hidden", c.dnn_hidden, "model.dnn.");
            read(d, "left", c.dnn_left, "model.dnn.");
            read(d, "right", c.dnn_right, "model.dnn.");
        }
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown(t, {"max_epochs", "min_lr_factor", "seed", "threads", "cell_clip", "recipes"}, "train.");
        read(t, "max_epochs", c.max_epochs, "train.");
        read(t, "min_lr_factor", c.min_lr_factor, "train.");
        read(t, "seed", c.seed, "train.");
        read(t, "threads", c.threads, "train.");
        read(t, "cell_clip", c.cell_clip, "train.");
        if (t.contains("recipes")) {
            const auto& r = t.at("recipes");
            const std::pair<const char*, RecipeSettings*> slots[] = {
                {"dnn-xent", &c.dnn_xent},
                {"lstm-xent", &c.lstm_xent},
                {"lstm-maxpool", &c.lstm_maxpool},
                {"lstm-maxpool-pretrained", &c.lstm_maxpool_pretrained}};
            reject_unknown(r, {"dnn-xent", "lstm-xent", "lstm-maxpool", "lstm-maxpool-pretrained"}, "train.recipes.");
            for (auto [key, slot] : slots) {
                if (!r.contains(key)) continue;
                const std::string section = std::string("train.recipes.") + key + ".";
                reject_unknown(r.at(key), {"initial_lr", "batch_size"}, section);
                read(r.at(key), "initial_lr", slot->initial_lr, section);
                read(r.at(key), "batch_size", slot->batch_size, section);
            }
        }
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& ex) {
        throw ConfigError("config " + path.string() + ": " + ex.what());
    }
    return from_json(j, path.parent_path());
}

json ExperimentConfig::to_json() const {
    return {{"manifest", manifest.string()},
            {"feature_cache", feature_cache.string()},
            {"checkpoint_dir", checkpoint_dir.string()},
            {"report_dir", report_dir.string()},
            {"detector", {{"n_ctx", detector.n_ctx}, {"n_lck", detector.n_lck}, {"threshold", detector.threshold}}},
            {"eval", {{"n_lat", eval.n_lat}, {"miss_rate_cap", eval.miss_rate_cap}, {"threshold_grid", eval.threshold_grid}}},
            {"model",
             {{"input_norm", input_norm},
              {"lstm", {{"cells", lstm_cells}, {"projection", lstm_projection}, {"left", lstm_left}, {"right", lstm_right}}},
              {"dnn", {{"hidden", dnn_hidden}, {"left", dnn_left}, {"right", dnn_right}}}}},
            {"train",
             {{"max_epochs", max_epochs},
              {"min_lr_factor", min_lr_factor},
              {"seed", seed},
              {"threads", threads},
              {"cell_clip", cell_clip},
              {"recipes",
               {{"dnn-xent", recipe_json(dnn_xent)},
                {"lstm-xent", recipe_json(lstm_xent)},
                {"lstm-maxpool", recipe_json(lstm_maxpool)},
                {"lstm-maxpool-pretrained", recipe_json(lstm_maxpool_pretrained)}}}}}};
}

void ExperimentConfig::validate() const {
    detector.validate();
    eval.validate();
    auto positive = [](int v, const char* field) {
        if (v <= 0) throw ConfigError(std::string("config: field '") + field + "' must be positive");
    };
    positive(lstm_cells, "model.lstm.cells");
    positive(lstm_projection, "model.lstm.projection");
    if (lstm_left < 0 || lstm_right < 0) throw ConfigError("config: field 'model.lstm.left/right' must be >= 0");
    if (dnn_left < 0 || dnn_right < 0) throw ConfigError("config: field 'model.dnn.left/right' must be >= 0");
    for (int h : dnn_hidden) positive(h, "model.dnn.hidden");
    for (const auto* r : {&dnn_xent, &lstm_xent, &lstm_maxpool, &lstm_maxpool_pretrained}) {
        if (!(r->initial_lr > 0.0)) throw ConfigError("config: field 'train.recipes.*.initial_lr' must be > 0");
        positive(r->batch_size, "train.recipes.*.batch_size");
    }
    positive(max_epochs, "train.max_epochs");
    positive(threads, "train.threads");
    if (!(min_lr_factor > 0.0 && min_lr_factor <= 1.0)) {
        throw ConfigError("config: field 'train.min_lr_factor' must be in (0, 1]");
    }
}

TrainConfig ExperimentConfig::train_config(Recipe recipe, bool from_checkpoint) const {
    const RecipeSettings& r = recipe == Recipe::dnn_xent    ? dnn_xent
                              : recipe == Recipe::lstm_xent ? lstm_xent
                              : from_checkpoint             ? lstm_maxpool_pretrained
                                                            : lstm_maxpool;
    TrainConfig t;
    t.initial_lr = r.initial_lr;
    t.batch_size = r.batch_size;
    t.max_epochs = max_epochs;
    t.min_lr_factor = min_lr_factor;
    t.loss = recipe == Recipe::lstm_maxpool ? LossKind::maxpool : LossKind::xent;
    t.seed = seed;
    t.threads = threads;
    t.cell_clip = cell_clip;
    return t;
}

namespace {

FeatureSequence features_for(const Manifest& manifest, const ManifestEntry& e,
                             const std::filesystem::path& cache_dir) {
    const auto wav_path = manifest.resolve(e);
    std::filesystem::path cache_file;
    if (!cache_dir.empty()) {
        cache_file = cache_dir / (e.id + "-" + file_sha256(wav_path).substr(0, 16) + ".kwsf");
        if (std::filesystem::exists(cache_file)) {
            auto feat = read_feature_cache(cache_file);
            feat.utterance_id = e.id;
            return feat;
        }
    }
    auto wave = read_wav(wav_path);
    wave.id = e.id;
    auto feat = compute_lfbe(wave);
    // Round through f32 so cached and freshly computed features are identical.
    feat.frames = feat.frames.cast<float>().cast<double>();
    if (!cache_file.empty()) {
        std::filesystem::create_directories(cache_dir);
        write_feature_cache(cache_file, feat);
    }
    return feat;
}

}  // namespace

std::vector<TrainUtterance> load_split(const Manifest& manifest, Split split,
                                       const std::filesystem::path& cache_dir) {
    std::vector<TrainUtterance> out;
    for (const auto* e : manifest.split(split)) {
        auto feat = features_for(manifest, *e, cache_dir);
        TrainUtterance u;
        u.id = e->id;
        u.alignment = to_alignment(*e, static_cast<int>(feat.frames.rows()));
        u.frames = std::move(feat.frames);
        out.push_back(std::move(u));
    }
    return out;
}

namespace {

FeatureNorm norm_from(const std::vector<TrainUtterance>& train) {
    std::vector<FeatureSequence> feats;
    feats.reserve(train.size());
    for (const auto& u : train) feats.push_back({u.frames, u.id});
    return compute_feature_norm(feats);
}

void normalize(std::vector<TrainUtterance>& data, const FeatureNorm& norm) {
    for (auto& u : data) u.frames = norm.apply(u.frames);
}

class JsonLines {
public:
    explicit JsonLines(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
        if (!out_) throw IoError("cannot write " + path.string());
    }
    void write(const json& j) {
        out_ << j.dump() << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

std::string format_lr(double lr) {
    std::ostringstream os;
    os << std::setprecision(4) << lr;
    return os.str();
}

}  // namespace

std::string default_run_name(Recipe recipe, bool from_checkpoint) {
    if (recipe == Recipe::lstm_maxpool) {
        return from_checkpoint ? "lstm-maxpool-pretrain" : "lstm-maxpool-random";
    }
    return to_string(recipe) + (from_checkpoint ? "-init" : "");
}

RecipeOutcome run_recipe(const ExperimentConfig& config, Recipe recipe,
                         const std::optional<std::filesystem::path>& init, const std::string& name) {
    config.validate();
    if (init && recipe == Recipe::dnn_xent) throw ConfigError("--init applies to LSTM recipes only");
    const std::string run_name = !name.empty() ? name : default_run_name(recipe, init.has_value());

    const auto manifest = load_manifest(config.manifest);
    auto train = load_split(manifest, Split::train, config.feature_cache);
    auto dev = load_split(manifest, Split::dev, config.feature_cache);
    if (train.empty()) throw ValidationError("manifest has no train utterances");
    if (dev.empty()) throw ValidationError("manifest has no dev utterances");

    KwsModel model;
    json lineage = nullptr;
    if (init) {
        model = load_checkpoint(*init);
        if (model.kind() != ModelKind::lstm) throw ConfigError("--init checkpoint must be an LSTM");
        lineage = {{"init_checkpoint", init->string()}, {"init_sha256", file_sha256(*init)}};
    } else if (recipe == Recipe::dnn_xent) {
        model.left_context = config.dnn_left;
        model.right_context = config.dnn_right;
        std::vector<int> sizes{kNumMelBins * (config.dnn_left + config.dnn_right + 1)};
        sizes.insert(sizes.end(), config.dnn_hidden.begin(), config.dnn_hidden.end());
        sizes.push_back(2);
        model.params = init_dnn<double>(sizes, config.seed);
        if (config.input_norm) model.norm = norm_from(train);
    } else {
        model.left_context = config.lstm_left;
        model.right_context = config.lstm_right;
        const LstmDims dims{kNumMelBins * (config.lstm_left + config.lstm_right + 1), config.lstm_cells,
                            config.lstm_projection, 2};
        model.params = init_lstm<double>(dims, config.seed);
        if (config.input_norm) model.norm = norm_from(train);
    }
    normalize(train, model.norm);
    normalize(dev, model.norm);

    const TrainConfig tc = config.train_config(recipe, init.has_value());
    std::filesystem::create_directories(config.checkpoint_dir);
    RecipeOutcome out;
    out.checkpoint = config.checkpoint_dir / (run_name + ".kwsm");
    out.log = config.checkpoint_dir / (run_name + ".log.jsonl");
    JsonLines log(out.log);
    const json train_json = {{"initial_lr", tc.initial_lr}, {"batch_size", tc.batch_size},
                             {"max_epochs", tc.max_epochs}, {"min_lr_factor", tc.min_lr_factor},
                             {"loss_kind", to_string(tc.loss)}, {"init_kind", init ? "from_checkpoint" : "random"},
                             {"seed", tc.seed}};
    log.write({{"event", "start"}, {"recipe", run_name}, {"train_config", train_json}, {"lineage", lineage},
               {"train_utterances", train.size()}, {"dev_utterances", dev.size()},
               {"param_count_formula", model.formula_param_count()},
               {"param_count_stored", model.stored_param_count()}});

    spdlog::info("{}: training {} on {} utterances (lr {}, batch {})", run_name,
                 model.kind() == ModelKind::lstm ? "LSTM" : "DNN", train.size(), format_lr(tc.initial_lr),
                 tc.batch_size);
    auto on_epoch = [&](const EpochRecord& r) {
        json line = to_json(r);
        line["event"] = "epoch";
        log.write(line);
        spdlog::info("{}: epoch {} train {:.5f} dev {:.5f}{} lr {}", run_name, r.epoch, r.train_loss, r.dev_loss,
                     r.repeated ? " (degraded, repeat)" : "", format_lr(r.lr));
    };
    if (model.kind() == ModelKind::lstm) {
        auto result = train_lstm(tc, model.lstm(), train, dev, model.left_context, model.right_context, on_epoch);
        model.params = std::move(result.params);
        out.train_log = std::move(result.log);
    } else {
        auto result = train_dnn(tc, model.dnn(), train, dev, model.left_context, model.right_context, on_epoch);
        model.params = std::move(result.params);
        out.train_log = std::move(result.log);
    }
    out.initial_dev_loss = out.train_log.initial_dev_loss;

    save_checkpoint(out.checkpoint, model);
    out.checkpoint_sha256 = file_sha256(out.checkpoint);
    const json meta = {{"recipe", run_name}, {"train_config", train_json}, {"lineage", lineage},
                       {"accepted_epochs", out.train_log.accepted_epochs},
                       {"stop_reason", out.train_log.stop_reason},
                       {"initial_dev_loss", out.train_log.initial_dev_loss}};
    write_checkpoint_sidecar(out.checkpoint, model, meta);
    log.write({{"event", "end"}, {"stop_reason", out.train_log.stop_reason},
               {"accepted_epochs", out.train_log.accepted_epochs},
               {"initial_dev_loss", out.train_log.initial_dev_loss},
               {"checkpoint", out.checkpoint.string()}, {"checkpoint_sha256", out.checkpoint_sha256}});
    spdlog::info("{}: done ({}, {} accepted epochs) -> {}", run_name, out.train_log.stop_reason,
                 out.train_log.accepted_epochs, out.checkpoint.string());
    return out;
}

PretrainOutcome pretrain_then_maxpool(const ExperimentConfig& config) {
    PretrainOutcome out;
    out.xent = run_recipe(config, Recipe::lstm_xent);
    if (!std::filesystem::exists(out.xent.checkpoint)) {
        throw IoError("missing xent checkpoint " + out.xent.checkpoint.string());
    }

    // Starting points for the max-pooling run, measured on the same normalized dev data.
    const auto base = load_checkpoint(out.xent.checkpoint);
    const auto manifest = load_manifest(config.manifest);
    auto dev = load_split(manifest, Split::dev, config.feature_cache);
    normalize(dev, base.norm);
    const auto random = init_lstm<double>(base.lstm().dims, config.seed);
    out.maxpool_dev_loss_from_xent =
        average_loss(base.lstm(), dev, base.left_context, base.right_context, LossKind::maxpool);
    out.maxpool_dev_loss_from_random =
        average_loss(random, dev, base.left_context, base.right_context, LossKind::maxpool);
    spdlog::info("maxpool dev loss at start: {:.5f} from xent, {:.5f} from random init",
                 out.maxpool_dev_loss_from_xent, out.maxpool_dev_loss_from_random);

    out.maxpool = run_recipe(config, Recipe::lstm_maxpool, out.xent.checkpoint);
    return out;
}

std::vector<EvalUtterance> score_split(const KwsModel& model, const Manifest& manifest, Split split,
                                       const std::filesystem::path& cache_dir) {
    std::vector<EvalUtterance> out;
    for (auto& u : load_split(manifest, split, cache_dir)) {
        EvalUtterance e;
        e.trace = model.posteriors(u.frames);
        e.trace.utterance_id = u.id;
        e.alignment = std::move(u.alignment);
        out.push_back(std::move(e));
    }
    return out;
}

EvaluationReport evaluate_models(const Manifest& manifest, Split split,
                                 const std::vector<std::filesystem::path>& checkpoints,
                                 const DetectorConfig& detector, const EvalConfig& eval,
                                 const std::filesystem::path& cache_dir) {
    if (checkpoints.empty()) throw ConfigError("evaluate: no models given");
    if (manifest.split(split).empty()) {
        throw ValidationError("evaluate: split '" + to_string(split) + "' is empty");
    }
    EvaluationReport report;
    json models = json::array();
    for (const auto& path : checkpoints) {
        const auto model = load_checkpoint(path);
        ModelReport r;
        r.name = path.stem().string();
        r.checkpoint = path;
        r.curve = det_sweep(score_split(model, manifest, split, cache_dir), detector, eval);
        spdlog::info("{}: AUC {:.6f} over {} utterances", r.name, r.curve.auc_capped, r.curve.num_utterances);
        json m = {{"name", r.name},
                  {"checkpoint", path.string()},
                  {"kind", model.kind() == ModelKind::lstm ? "lstm" : "dnn"},
                  {"auc_capped", r.curve.auc_capped},
                  {"auc_empty", r.curve.auc_empty}};
        models.push_back(m);
        report.models.push_back(std::move(r));
    }

    const auto& first = report.models.front().curve;
    report.summary = {{"split", to_string(split)},
                      {"num_utterances", first.num_utterances},
                      {"num_keyword_segments", first.num_keyword_segments},
                      {"miss_rate_cap", eval.miss_rate_cap},
                      {"detector", {{"n_ctx", detector.n_ctx}, {"n_lck", detector.n_lck}}},
                      {"n_lat", eval.n_lat},
                      {"models", models}};
    if (report.models.size() >= 2) {
        const double base = first.auc_capped;
        report.summary["baseline"] = report.models.front().name;
        json changes = json::object();
        json table = json::array();
        table.push_back({{"model", report.models.front().name}, {"auc_change_percent", 0.0}});
        for (std::size_t i = 1; i < report.models.size(); ++i) {
            const auto& m = report.models[i];
            json value = nullptr;
            if (base > 0.0) value = relative_auc_change(base, m.curve.auc_capped);
            changes[m.name] = value;
            report.summary["models"][i]["relative_auc_change_percent"] = value;
            table.push_back({{"model", m.name}, {"auc_change_percent", value}});
        }
        report.summary["relative_auc_change_percent"] = changes;
        report.summary["table"] = table;
    }
    return report;
}

void write_evaluation(const EvaluationReport& report, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    std::ofstream csv(out_dir / "det_curve.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write " + (out_dir / "det_curve.csv").string());
    csv << "model,threshold,miss_rate,fa_rate\n";
    csv << std::setprecision(10);
    for (const auto& m : report.models) {
        for (const auto& p : m.curve.points) {
            csv << m.name << ',' << p.threshold << ',' << p.miss_rate << ',' << p.fa_rate << '\n';
        }
    }
    std::ofstream summary(out_dir / "summary.json", std::ios::trunc);
    if (!summary) throw IoError("cannot write " + (out_dir / "summary.json").string());
    summary << report.summary.dump(2) << '\n';
}

}  // namespace kwspot
