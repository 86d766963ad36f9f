#include "kwspot/checkpoint.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "binary_io.hpp"
#include "kwspot/error.hpp"

namespace kwspot {

int KwsModel::input_dim() const {
    return kind() == ModelKind::lstm ? lstm().dims.n_i : dnn().input_dim();
}

std::int64_t KwsModel::formula_param_count() const {
    if (kind() == ModelKind::lstm) {
        const auto& d = lstm().dims;
        return count_params(d.n_c, d.n_r, d.n_i, d.n_o);
    }
    return count_dnn_params(dnn().layer_sizes);
}

std::int64_t KwsModel::stored_param_count() const {
    return kind() == ModelKind::lstm ? lstm().size() : dnn().size();
}

PosteriorTrace KwsModel::posteriors(const RowMatrix& lfbe) const {
    const auto stacked = stack_context(norm.apply(lfbe), left_context, right_context);
    if (kind() == ModelKind::lstm) return lstm_forward(lstm(), stacked.vectors, false).trace;
    return dnn_forward(dnn(), stacked.vectors);
}

namespace {

template <typename Tensor>
void write_tensor(std::ostream& out, const Tensor& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) io::put_f32(out, t(r, c));
}

template <typename Tensor>
void read_tensor(std::istream& in, Tensor& t, const std::string& what) {
    for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = io::get<float>(in, what);
}

std::uint32_t read_dim(std::istream& in, const std::string& what) {
    auto v = io::get<std::uint32_t>(in, what);
    if (v == 0 || v > (1u << 20)) throw FormatError(what + ": implausible dimension " + std::to_string(v));
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const KwsModel& model) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write("KWSM", 4);
    io::put<std::uint32_t>(out, kCheckpointVersion);
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.kind()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.left_context));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.right_context));
    if (model.kind() == ModelKind::lstm) {
        const auto& d = model.lstm().dims;
        for (int v : {d.n_i, d.n_c, d.n_r, d.n_o}) io::put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    } else {
        const auto& sizes = model.dnn().layer_sizes;
        io::put<std::uint32_t>(out, static_cast<std::uint32_t>(sizes.size() - 1));
        for (int v : sizes) io::put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    }
    io::put<std::uint64_t>(out, static_cast<std::uint64_t>(model.formula_param_count()));
    io::put<std::uint64_t>(out, static_cast<std::uint64_t>(model.stored_param_count()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.norm.mean.size()));
    write_tensor(out, model.norm.mean);
    write_tensor(out, model.norm.stddev);
    std::visit([&](const auto& p) { p.for_each_tensor([&](const char*, const auto& t, bool) { write_tensor(out, t); }); },
               model.params);
    if (!out) throw IoError("write failed: " + path.string());
}

KwsModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    const std::string what = "checkpoint " + path.string();
    io::expect_magic(in, "KWSM", what);
    if (auto v = io::get<std::uint32_t>(in, what); v != kCheckpointVersion) {
        throw FormatError(what + ": unsupported version " + std::to_string(v));
    }
    const auto kind = io::get<std::uint32_t>(in, what);
    KwsModel model;
    model.left_context = static_cast<int>(io::get<std::uint32_t>(in, what));
    model.right_context = static_cast<int>(io::get<std::uint32_t>(in, what));
    if (kind == static_cast<std::uint32_t>(ModelKind::lstm)) {
        LstmDims d;
        d.n_i = static_cast<int>(read_dim(in, what));
        d.n_c = static_cast<int>(read_dim(in, what));
        d.n_r = static_cast<int>(read_dim(in, what));
        d.n_o = static_cast<int>(read_dim(in, what));
        model.params = LstmParams<double>(d);
    } else if (kind == static_cast<std::uint32_t>(ModelKind::dnn)) {
        const auto layers = read_dim(in, what);
        if (layers > 64) throw FormatError(what + ": too many layers");
        std::vector<int> sizes;
        for (std::uint32_t l = 0; l <= layers; ++l) sizes.push_back(static_cast<int>(read_dim(in, what)));
        model.params = DnnParams<double>(sizes);
    } else {
        throw FormatError(what + ": unknown model kind " + std::to_string(kind));
    }
    const auto formula = io::get<std::uint64_t>(in, what);
    const auto stored = io::get<std::uint64_t>(in, what);
    if (formula != static_cast<std::uint64_t>(model.formula_param_count()) ||
        stored != static_cast<std::uint64_t>(model.stored_param_count())) {
        throw FormatError(what + ": parameter counts do not match dimensions");
    }
    const auto norm_dim = io::get<std::uint32_t>(in, what);
    if (norm_dim > 0) {
        if (norm_dim != kNumMelBins) throw FormatError(what + ": bad normalization dimension");
        model.norm.mean.resize(norm_dim);
        model.norm.stddev.resize(norm_dim);
        read_tensor(in, model.norm.mean, what);
        read_tensor(in, model.norm.stddev, what);
    }
    std::visit([&](auto& p) { p.for_each_tensor([&](const char*, auto& t, bool) { read_tensor(in, t, what); }); },
               model.params);
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError(what + ": trailing bytes");
    if (model.input_dim() != kNumMelBins * (model.left_context + model.right_context + 1)) {
        throw FormatError(what + ": input dimension does not match context window");
    }
    return model;
}

void write_checkpoint_sidecar(const std::filesystem::path& path, const KwsModel& model,
                              const nlohmann::json& metadata) {
    nlohmann::json j;
    j["kind"] = model.kind() == ModelKind::lstm ? "lstm" : "dnn";
    j["left_context"] = model.left_context;
    j["right_context"] = model.right_context;
    if (model.kind() == ModelKind::lstm) {
        const auto& d = model.lstm().dims;
        j["dims"] = {{"n_i", d.n_i}, {"n_c", d.n_c}, {"n_r", d.n_r}, {"n_o", d.n_o}};
    } else {
        j["dims"] = {{"layers", model.dnn().layer_sizes}};
    }
    j["param_count_formula"] = model.formula_param_count();
    j["param_count_stored"] = model.stored_param_count();
    j["input_norm"] = !model.norm.empty();
    j["checkpoint_sha256"] = file_sha256(path);
    j["metadata"] = metadata;
    auto sidecar = path;
    sidecar += ".json";
    std::ofstream out(sidecar, std::ios::trunc);
    if (!out) throw IoError("cannot write " + sidecar.string());
    out << j.dump(2) << '\n';
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
    return os.str();
}

std::string file_sha256(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return sha256_hex(buf.str());
}

}  // namespace kwspot
