#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kwspot/checkpoint.hpp"
#include "kwspot/corpus.hpp"
#include "kwspot/detector.hpp"
#include "kwspot/evaluator.hpp"
#include "kwspot/trainer.hpp"

namespace kwspot {

enum class Recipe { dnn_xent, lstm_xent, lstm_maxpool };

Recipe parse_recipe(const std::string& s);
std::string to_string(Recipe r);

struct RecipeSettings {
    double initial_lr = 1e-5;
    int batch_size = 16;
};

struct ExperimentConfig {
    std::filesystem::path manifest;
    std::filesystem::path feature_cache;  // empty: no cache
    std::filesystem::path checkpoint_dir = "checkpoints";
    std::filesystem::path report_dir = "reports";

    DetectorConfig detector;
    EvalConfig eval;

    int lstm_cells = 64;
    int lstm_projection = 32;
    int lstm_left = 10;
    int lstm_right = 10;
    std::vector<int> dnn_hidden = {128, 128, 128, 128};
    int dnn_left = 20;
    int dnn_right = 10;
    bool input_norm = true;

    int max_epochs = 20;
    double min_lr_factor = 1.0 / 256.0;
    std::uint64_t seed = 1;
    int threads = 1;
    double cell_clip = 0.0;

    // Per-recipe defaults: 5e-4/256 frames (DNN), 1e-5 (LSTM xent), 5e-5 (LSTM maxpool).
    RecipeSettings dnn_xent{5e-4, 256};
    RecipeSettings lstm_xent{1e-5, 16};
    RecipeSettings lstm_maxpool{5e-5, 16};
    RecipeSettings lstm_maxpool_pretrained{5e-5, 16};

    /// Relative paths in the file are resolved against the file's directory.
    static ExperimentConfig load(const std::filesystem::path& path);
    static ExperimentConfig from_json(const nlohmann::json& j,
                                      const std::filesystem::path& base = {});
    nlohmann::json to_json() const;
    void validate() const;

    TrainConfig train_config(Recipe recipe, bool from_checkpoint) const;
};

/// Normalized-on-demand LFBE features of one split, optionally backed by the feature cache.
std::vector<TrainUtterance> load_split(const Manifest& manifest, Split split,
                                       const std::filesystem::path& cache_dir);

struct RecipeOutcome {
    std::filesystem::path checkpoint;
    std::filesystem::path log;
    TrainLog train_log;
    std::string checkpoint_sha256;
    double initial_dev_loss = 0.0;
};

/// lstm-maxpool-random / lstm-maxpool-pretrain for max-pooling, otherwise the recipe name
/// (suffixed "-init" when started from a checkpoint).
std::string default_run_name(Recipe recipe, bool from_checkpoint);

/// Trains one recipe and writes `<name>.kwsm`, its JSON sidecar and `<name>.log.jsonl`
/// to the checkpoint directory. `init` starts from an existing LSTM checkpoint.
RecipeOutcome run_recipe(const ExperimentConfig& config, Recipe recipe,
                         const std::optional<std::filesystem::path>& init = std::nullopt,
                         const std::string& name = {});

struct PretrainOutcome {
    RecipeOutcome xent;
    RecipeOutcome maxpool;
    // Dev max-pooling loss before the first update, from the xent checkpoint and from a
    // random initialization with the same seed.
    double maxpool_dev_loss_from_xent = 0.0;
    double maxpool_dev_loss_from_random = 0.0;
};

/// lstm-xent, then lstm-maxpool initialized from the xent checkpoint.
PretrainOutcome pretrain_then_maxpool(const ExperimentConfig& config);

struct ModelReport {
    std::string name;
    std::filesystem::path checkpoint;
    DetCurve curve;
};

struct EvaluationReport {
    std::vector<ModelReport> models;
    nlohmann::json summary;
};

/// DET sweep of every model on one split. With two or more models the first is the
/// baseline and the summary carries relative AUC changes.
EvaluationReport evaluate_models(const Manifest& manifest, Split split,
                                 const std::vector<std::filesystem::path>& checkpoints,
                                 const DetectorConfig& detector, const EvalConfig& eval,
                                 const std::filesystem::path& cache_dir = {});

/// det_curve.csv (model, threshold, miss_rate, fa_rate) and summary.json.
void write_evaluation(const EvaluationReport& report, const std::filesystem::path& out_dir);

std::vector<EvalUtterance> score_split(const KwsModel& model, const Manifest& manifest,
                                       Split split, const std::filesystem::path& cache_dir = {});

}  // namespace kwspot
