#include <algorithm>
#include <cmath>
#include <cstring>

#include "dsu/binio.hpp"
#include "dsu/corpusio.hpp"

namespace dsu {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::int16_t to_pcm16(float x) {
    const double clamped = std::clamp(static_cast<double>(x), -1.0, 1.0);
    const double scaled = std::nearbyint(clamped * 32768.0);
    return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

}  // namespace

Waveform parse_wav_bytes(std::span<const std::uint8_t> bytes) {
    binio::Reader r(bytes);
    if (r.get_bytes(4) != "RIFF") {
        throw Error(ErrorCode::UnsupportedEncoding, "missing RIFF header");
    }
    r.get<std::uint32_t>();  // riff size; unreliable in streamed files
    if (r.get_bytes(4) != "WAVE") {
        throw Error(ErrorCode::UnsupportedEncoding, "RIFF file is not WAVE");
    }

    bool have_fmt = false;
    std::uint32_t sample_rate = 0;
    while (true) {
        const std::string id = r.get_bytes(4);
        const auto size = r.get<std::uint32_t>();
        if (id == "fmt ") {
            if (size < 16) {
                throw Error(ErrorCode::UnsupportedEncoding, "fmt chunk too small");
            }
            const auto format = r.get<std::uint16_t>();
            const auto channels = r.get<std::uint16_t>();
            sample_rate = r.get<std::uint32_t>();
            r.get<std::uint32_t>();  // byte rate
            r.get<std::uint16_t>();  // block align
            const auto bits = r.get<std::uint16_t>();
            if (size > 16) {
                r.get_bytes(size - 16 + (size & 1));
            }
            if (format != kFormatPcm && format != kFormatExtensible) {
                throw Error(ErrorCode::UnsupportedEncoding,
                            "format tag " + std::to_string(format) + " is not PCM");
            }
            if (channels != 1) {
                throw Error(ErrorCode::UnsupportedEncoding,
                            std::to_string(channels) + " channels; only mono is supported");
            }
            if (bits != 16) {
                throw Error(ErrorCode::UnsupportedEncoding,
                            std::to_string(bits) + "-bit samples; only 16-bit is supported");
            }
            if (sample_rate == 0) {
                throw Error(ErrorCode::UnsupportedEncoding, "zero sample rate");
            }
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) {
                throw Error(ErrorCode::UnsupportedEncoding, "data chunk before fmt chunk");
            }
            if (size % 2 != 0) {
                throw Error(ErrorCode::TruncatedFile, "odd data chunk size for 16-bit audio");
            }
            Waveform w;
            w.sample_rate_hz = sample_rate;
            w.samples.resize(size / 2);
            for (auto& s : w.samples) {
                s = static_cast<float>(r.get<std::int16_t>() / 32768.0);
            }
            return w;
        } else {
            r.get_bytes(size + (size & 1));
        }
    }
}

std::vector<std::uint8_t> serialize_wav(const Waveform& w) {
    const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    binio::Writer out;
    out.put_bytes("RIFF");
    out.put(static_cast<std::uint32_t>(36 + data_bytes));
    out.put_bytes("WAVE");
    out.put_bytes("fmt ");
    out.put(std::uint32_t{16});
    out.put(kFormatPcm);
    out.put(std::uint16_t{1});
    out.put(w.sample_rate_hz);
    out.put(static_cast<std::uint32_t>(w.sample_rate_hz * 2));
    out.put(std::uint16_t{2});
    out.put(std::uint16_t{16});
    out.put_bytes("data");
    out.put(data_bytes);
    for (float s : w.samples) {
        out.put(to_pcm16(s));
    }
    return std::move(out.bytes());
}

Waveform read_wav(const fs::path& path) { return parse_wav_bytes(read_file_bytes(path)); }

void write_wav(const fs::path& path, const Waveform& w) { write_file_bytes(path, serialize_wav(w)); }

}  // namespace dsu
