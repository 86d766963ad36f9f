#include "kwspot/wave.hpp"

#include <fstream>

#include "binary_io.hpp"
#include "kwspot/error.hpp"

namespace kwspot {

namespace {

struct WavLayout {
    std::uint32_t data_bytes = 0;
};

WavLayout read_header(std::istream& in, const std::string& name) {
    char riff[4];
    if (!in.read(riff, 4) || std::string(riff, 4) != "RIFF") {
        throw FormatError(name + ": not a RIFF file");
    }
    io::get<std::uint32_t>(in, name);
    char wave[4];
    if (!in.read(wave, 4) || std::string(wave, 4) != "WAVE") {
        throw FormatError(name + ": not a WAVE file");
    }
    bool have_fmt = false;
    while (true) {
        char tag[4];
        if (!in.read(tag, 4)) throw FormatError(name + ": no data chunk");
        auto size = io::get<std::uint32_t>(in, name);
        std::string id(tag, 4);
        if (id == "fmt ") {
            if (size < 16) throw FormatError(name + ": short fmt chunk");
            auto format = io::get<std::uint16_t>(in, name);
            auto channels = io::get<std::uint16_t>(in, name);
            auto rate = io::get<std::uint32_t>(in, name);
            io::get<std::uint32_t>(in, name);  // byte rate
            io::get<std::uint16_t>(in, name);  // block align
            auto bits = io::get<std::uint16_t>(in, name);
            if (format != 1) throw FormatError(name + ": only PCM WAV is supported");
            if (channels != 1) {
                throw FormatError(name + ": expected mono, got " + std::to_string(channels) + " channels");
            }
            if (rate != kSampleRate) {
                throw FormatError(name + ": expected 16000 Hz, got " + std::to_string(rate));
            }
            if (bits != 16) {
                throw FormatError(name + ": expected 16-bit samples, got " + std::to_string(bits));
            }
            in.seekg(size - 16 + (size & 1), std::ios::cur);
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) throw FormatError(name + ": data chunk before fmt chunk");
            return {size};
        } else {
            in.seekg(size + (size & 1), std::ios::cur);
        }
    }
}

}  // namespace

WaveForm read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    auto layout = read_header(in, path.string());
    WaveForm wave;
    wave.id = path.stem().string();
    wave.samples.resize(layout.data_bytes / 2);
    if (!in.read(reinterpret_cast<char*>(wave.samples.data()),
                 static_cast<std::streamsize>(wave.samples.size() * 2))) {
        throw FormatError(path.string() + ": truncated data chunk");
    }
    return wave;
}

std::size_t wav_sample_count(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_header(in, path.string()).data_bytes / 2;
}

void write_wav(const std::filesystem::path& path, const WaveForm& wave) {
    if (wave.sample_rate != kSampleRate) throw ConfigError("write_wav: sample rate must be 16000");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
    out.write("RIFF", 4);
    io::put<std::uint32_t>(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    io::put<std::uint32_t>(out, 16);
    io::put<std::uint16_t>(out, 1);
    io::put<std::uint16_t>(out, 1);
    io::put<std::uint32_t>(out, kSampleRate);
    io::put<std::uint32_t>(out, kSampleRate * 2);
    io::put<std::uint16_t>(out, 2);
    io::put<std::uint16_t>(out, 16);
    out.write("data", 4);
    io::put<std::uint32_t>(out, data_bytes);
    out.write(reinterpret_cast<const char*>(wave.samples.data()), data_bytes);
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace kwspot
