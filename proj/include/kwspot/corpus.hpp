#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kwspot/loss.hpp"
#include "kwspot/wave.hpp"

namespace kwspot {

enum class Split { train, dev, test };

Split parse_split(const std::string& s);
std::string to_string(Split s);

struct ManifestEntry {
    std::string wav;  // relative to the manifest's directory unless absolute
    std::string id;
    std::vector<std::pair<int, int>> segments;  // inclusive frame ranges
    Split split = Split::train;

    bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir;

    std::vector<const ManifestEntry*> split(Split s) const;
    std::filesystem::path resolve(const ManifestEntry& e) const;
    bool operator==(const Manifest& o) const { return entries == o.entries; }
};

/// Builds the alignment of an entry for an utterance of `total_frames` frames.
Alignment to_alignment(const ManifestEntry& e, int total_frames);

/// JSON lines, one {"wav","id","segments","split"} object per line.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
/// Empty lines are skipped. Segment ranges are checked against audio length when the WAV exists.
Manifest load_manifest(const std::filesystem::path& path);

struct Range {
    double min = 0.0;
    double max = 0.0;
};

struct SynthSpec {
    std::uint64_t seed = 1;
    double utterance_seconds = 3.0;
    int keywords_min = 0;
    int keywords_max = 2;
    double chirp_start_hz = 400.0;
    double chirp_end_hz = 2400.0;
    double chirp_ms = 300.0;
    // Reversed chirps with the same duration; never labeled.
    int distractors_min = 0;
    int distractors_max = 1;
    double noise_level_db = -40.0;  // background RMS relative to full scale
    Range snr_db{5.0, 15.0};
    // Minimum frame gap between events; the latency window plus the lockout by default.
    int min_gap_frames = 60;
    int train_count = 200;
    int dev_count = 50;
    int test_count = 200;

    void validate() const;
};

SynthSpec synth_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SynthSpec& s);

struct SynthUtterance {
    WaveForm wave;
    Alignment alignment;
};

/// Hop-interval frame mapping: frame k owns samples [160k, 160k+160). A keyword spanning
/// samples [begin, end) covers frames ceil(begin/160) .. floor(end/160)-1, clipped to the
/// utterance's frame count.
std::pair<int, int> covered_frames(std::size_t begin, std::size_t end, int total_frames);

/// Deterministic colored noise with keyword chirps (and unlabeled reversed chirps).
SynthUtterance synth_utterance(const SynthSpec& spec, std::uint64_t seed,
                               const std::string& id = "utt");

/// Seed for utterance `index` of a data set generated from `master`.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// Writes wav/<id>.wav for every utterance and manifest.jsonl under `out_dir`.
Manifest build_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace kwspot
