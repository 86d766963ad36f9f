#include "kwspot/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "kwspot/error.hpp"
#include "kwspot/experiment.hpp"

namespace kwspot {

namespace {

void setup_logging() {
    static const bool once = [] {
        auto logger = spdlog::stderr_color_mt("kwspot");
        spdlog::set_default_logger(logger);
        spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
        spdlog::set_level(spdlog::level::info);
        if (const char* env = std::getenv("KWSPOT_LOG")) {
            spdlog::set_level(spdlog::level::from_str(env));
        }
        return true;
    }();
    (void)once;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(path.string() + ": " + ex.what());
    }
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
              std::ostream& out) {
    auto spec = synth_spec_from_json(read_json_file(spec_path));
    if (seed) spec.seed = *seed;
    const auto manifest = build_dataset(spec, out_dir);
    const auto path = std::filesystem::path(out_dir) / "manifest.jsonl";
    spdlog::info("wrote {} utterances to {}", manifest.entries.size(), out_dir);
    out << nlohmann::json{{"manifest", path.string()},
                          {"utterances", manifest.entries.size()},
                          {"manifest_sha256", file_sha256(path)}}
               .dump()
        << '\n';
    return 0;
}

struct TrainFlags {
    std::string config;
    std::string recipe;
    std::string init;
    std::string name;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<int> max_epochs;
};

int cmd_train(const TrainFlags& f, std::ostream& out) {
    auto config = ExperimentConfig::load(f.config);
    if (f.seed) config.seed = *f.seed;
    if (f.threads) config.threads = *f.threads;
    if (f.max_epochs) config.max_epochs = *f.max_epochs;
    config.validate();
    if (!std::filesystem::exists(config.manifest)) {
        throw IoError("manifest not found: " + config.manifest.string());
    }
    const auto recipe = parse_recipe(f.recipe);
    std::optional<std::filesystem::path> init;
    if (!f.init.empty()) {
        if (!std::filesystem::exists(f.init)) throw IoError("missing checkpoint: " + f.init);
        init = f.init;
    }
    const auto outcome = run_recipe(config, recipe, init, f.name);
    out << nlohmann::json{{"checkpoint", outcome.checkpoint.string()},
                          {"log", outcome.log.string()},
                          {"checkpoint_sha256", outcome.checkpoint_sha256},
                          {"accepted_epochs", outcome.train_log.accepted_epochs},
                          {"stop_reason", outcome.train_log.stop_reason}}
               .dump()
        << '\n';
    return 0;
}

struct EvalFlags {
    std::string manifest;
    std::string split = "test";
    std::vector<std::string> models;
    std::string out;
    std::string config;
    std::string cache;
    std::optional<int> n_ctx, n_lck, n_lat, grid;
    std::optional<double> cap;
};

int cmd_evaluate(const EvalFlags& f, std::ostream& out) {
    DetectorConfig detector;
    EvalConfig eval;
    std::filesystem::path cache = f.cache;
    if (!f.config.empty()) {
        const auto config = ExperimentConfig::load(f.config);
        detector = config.detector;
        eval = config.eval;
        if (cache.empty()) cache = config.feature_cache;
    }
    if (f.n_ctx) detector.n_ctx = *f.n_ctx;
    if (f.n_lck) detector.n_lck = *f.n_lck;
    if (f.n_lat) eval.n_lat = *f.n_lat;
    if (f.grid) eval.threshold_grid = *f.grid;
    if (f.cap) eval.miss_rate_cap = *f.cap;
    detector.validate();
    eval.validate();
    std::vector<std::filesystem::path> models(f.models.begin(), f.models.end());
    for (const auto& m : models) {
        if (!std::filesystem::exists(m)) throw IoError("missing checkpoint: " + m.string());
    }
    const auto manifest = load_manifest(f.manifest);
    const auto report = evaluate_models(manifest, parse_split(f.split), models, detector, eval, cache);
    write_evaluation(report, f.out);
    out << report.summary.dump() << '\n';
    return 0;
}

struct DetectFlags {
    std::string model;
    std::string wav;
    double threshold = 0.5;
    int n_ctx = 30;
    int n_lck = 40;
};

int cmd_detect(const DetectFlags& f, std::ostream& out) {
    DetectorConfig config{f.n_ctx, f.n_lck, f.threshold};
    config.validate();
    const auto model = load_checkpoint(f.model);
    const auto wave = read_wav(f.wav);
    auto emit = [&](const Spike& s) {
        out << nlohmann::json{{"utterance_id", wave.id},
                              {"frame", s.frame},
                              {"time_ms", s.frame * 10},
                              {"smoothed_posterior", s.smoothed_posterior}}
                   .dump()
            << '\n';
    };
    if (model.kind() == ModelKind::lstm) {
        StreamingDetector detector(model, config);
        const std::span<const std::int16_t> audio(wave.samples);
        for (std::size_t pos = 0; pos < audio.size(); pos += kFrameShift) {
            const auto n = std::min<std::size_t>(kFrameShift, audio.size() - pos);
            for (const auto& s : detector.push_samples(audio.subspan(pos, n))) emit(s);
        }
        for (const auto& s : detector.finish()) emit(s);
    } else {
        for (const auto& s : batch_detect(model, compute_lfbe(wave).frames, config)) emit(s);
    }
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    setup_logging();
    CLI::App app{"Keyword spotting toolkit: synthetic data, LSTM/DNN training, detection and DET evaluation",
                 "kwspot"};
    app.require_subcommand(1);

    std::string spec_path, synth_out;
    std::optional<std::uint64_t> synth_seed;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic keyword corpus");
    synth->add_option("--spec", spec_path, "Synthesis spec (JSON)")->required();
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--seed", synth_seed, "Override the spec seed");

    TrainFlags tf;
    auto* train = app.add_subcommand("train", "Train one recipe");
    train->add_option("--config", tf.config, "Experiment config (JSON)")->required();
    train->add_option("--recipe", tf.recipe, "dnn-xent | lstm-xent | lstm-maxpool")->required();
    train->add_option("--init", tf.init, "Start from this LSTM checkpoint");
    train->add_option("--name", tf.name, "Output name (default: recipe name; lstm-maxpool-random or lstm-maxpool-pretrain for max-pooling)");
    train->add_option("--seed", tf.seed, "Override train.seed");
    train->add_option("--threads", tf.threads, "Worker threads (1 is bit-reproducible)");
    train->add_option("--max-epochs", tf.max_epochs, "Override train.max_epochs");

    EvalFlags ef;
    auto* evaluate = app.add_subcommand("evaluate", "DET sweep and AUC for one or more checkpoints");
    evaluate->add_option("--manifest", ef.manifest, "Dataset manifest")->required();
    evaluate->add_option("--split", ef.split, "Split to evaluate")->capture_default_str();
    evaluate->add_option("--models", ef.models, "Checkpoints; the first is the baseline")->required();
    evaluate->add_option("--out", ef.out, "Report directory")->required();
    evaluate->add_option("--config", ef.config, "Experiment config for detector/eval settings");
    evaluate->add_option("--feature-cache", ef.cache, "Feature cache directory");
    evaluate->add_option("--n-ctx", ef.n_ctx, "Smoothing window (frames)");
    evaluate->add_option("--n-lck", ef.n_lck, "Lockout (frames)");
    evaluate->add_option("--n-lat", ef.n_lat, "Latency window (frames)");
    evaluate->add_option("--grid", ef.grid, "Threshold grid size");
    evaluate->add_option("--miss-cap", ef.cap, "Miss-rate cap for AUC");

    DetectFlags df;
    auto* detect = app.add_subcommand("detect", "Stream a WAV file through a model and print spikes");
    detect->add_option("--model", df.model, "Checkpoint")->required();
    detect->add_option("--wav", df.wav, "16 kHz mono 16-bit WAV")->required();
    detect->add_option("--threshold", df.threshold, "Firing threshold")->required();
    detect->add_option("--n-ctx", df.n_ctx, "Smoothing window (frames)")->capture_default_str();
    detect->add_option("--n-lck", df.n_lck, "Lockout (frames)")->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*synth) return cmd_synth(spec_path, synth_out, synth_seed, out);
        if (*train) return cmd_train(tf, out);
        if (*evaluate) return cmd_evaluate(ef, out);
        if (*detect) return cmd_detect(df, out);
    } catch (const std::exception& e) {
        err << "kwspot: error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace kwspot
