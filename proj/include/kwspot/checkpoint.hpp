#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "kwspot/features.hpp"
#include "kwspot/model.hpp"

namespace kwspot {

enum class ModelKind : std::uint32_t { lstm = 0, dnn = 1 };

/// A trained network plus everything needed to turn LFBE frames into its input.
struct KwsModel {
    std::variant<LstmParams<double>, DnnParams<double>> params;
    int left_context = 0;
    int right_context = 0;
    FeatureNorm norm;

    ModelKind kind() const { return params.index() == 0 ? ModelKind::lstm : ModelKind::dnn; }
    const LstmParams<double>& lstm() const { return std::get<LstmParams<double>>(params); }
    const DnnParams<double>& dnn() const { return std::get<DnnParams<double>>(params); }
    LstmParams<double>& lstm() { return std::get<LstmParams<double>>(params); }
    DnnParams<double>& dnn() { return std::get<DnnParams<double>>(params); }

    int input_dim() const;
    /// Closed-form count (LSTM) or full count (DNN), and the stored scalar count.
    std::int64_t formula_param_count() const;
    std::int64_t stored_param_count() const;

    /// Normalize, stack context, and run the network over a whole utterance.
    PosteriorTrace posteriors(const RowMatrix& lfbe) const;
};

// Binary layout, little-endian throughout:
//   char[4] "KWSM", u32 version (1), u32 kind (0 LSTM, 1 DNN), u32 left, u32 right
//   LSTM: u32 n_i, n_c, n_r, n_o      DNN: u32 L, then L+1 u32 layer sizes
//   u64 formula_count, u64 stored_count
//   u32 norm_dim (0 = no normalization), then norm_dim f32 means, norm_dim f32 stddevs
//   tensors as row-major f32, LSTM order:
//     W_ix W_fx W_cx W_ox W_ir W_fr W_cr W_or w_ic w_fc w_oc b_i b_f b_c b_o W_rm W_yr b_y
//   DNN order: W_1 b_1 ... W_L b_L (W_l is out x in)
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const KwsModel& model);
KwsModel load_checkpoint(const std::filesystem::path& path);

/// Writes `<path>.json` with dims, both parameter counts and `metadata`.
void write_checkpoint_sidecar(const std::filesystem::path& path, const KwsModel& model,
                              const nlohmann::json& metadata);

/// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);
std::string sha256_hex(std::string_view bytes);

}  // namespace kwspot
