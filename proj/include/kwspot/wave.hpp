#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace kwspot {

inline constexpr int kSampleRate = 16000;

struct WaveForm {
    std::vector<std::int16_t> samples;
    int sample_rate = kSampleRate;
    std::string id;
};

// Mono 16-bit little-endian PCM at 16 kHz only; anything else throws FormatError.
WaveForm read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const WaveForm& wave);

// Reads only the header and returns the number of samples in the data chunk.
std::size_t wav_sample_count(const std::filesystem::path& path);

}  // namespace kwspot
