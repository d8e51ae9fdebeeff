#include <cmath>
#include <fstream>
#include <iterator>

#include "dsu/binio.hpp"
#include "dsu/corpusio.hpp"
#include "dsu/error.hpp"

namespace dsu {

namespace {
constexpr char kFeatureMagic[4] = {'F', 'E', 'A', '1'};
constexpr std::uint32_t kFeatureVersion = 1;
}  // namespace

void validate(const FeatureMatrix& m) {
    if (m.dim == 0) {
        if (!m.frames.empty()) {
            throw Error(ErrorCode::DimMismatch, "dim is 0 but frames are present");
        }
    } else if (m.frames.size() % m.dim != 0) {
        throw Error(ErrorCode::DimMismatch, "frame buffer of " + std::to_string(m.frames.size()) +
                                                " values is not a multiple of dim " +
                                                std::to_string(m.dim));
    }
    if (!(m.frame_rate_hz > 0.0f) || !std::isfinite(m.frame_rate_hz)) {
        throw Error(ErrorCode::NonFiniteValue, "frame rate must be a positive finite value");
    }
    for (std::size_t i = 0; i < m.frames.size(); ++i) {
        if (!std::isfinite(m.frames[i])) {
            throw Error(ErrorCode::NonFiniteValue,
                        "frame " + std::to_string(i / m.dim) + " dim " +
                            std::to_string(i % m.dim) + " is not finite");
        }
    }
}

std::vector<std::uint8_t> serialize_feature(const FeatureMatrix& m) {
    validate(m);
    binio::Writer w;
    w.put_bytes({kFeatureMagic, 4});
    w.put(kFeatureVersion);
    w.put(m.dim);
    w.put(m.frame_rate_hz);
    w.put(static_cast<std::uint64_t>(m.n_frames()));
    w.put_floats(m.frames);
    return std::move(w.bytes());
}

FeatureMatrix parse_feature_bytes(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) {
        throw Error(ErrorCode::BadMagic, "feature file does not start with FEA1");
    }
    binio::Reader r(bytes.subspan(4));
    const auto version = r.get<std::uint32_t>();
    if (version != kFeatureVersion) {
        throw Error(ErrorCode::BadMagic, "unsupported feature file version " + std::to_string(version));
    }
    FeatureMatrix m;
    m.dim = r.get<std::uint32_t>();
    m.frame_rate_hz = r.get<float>();
    const auto n_frames = r.get<std::uint64_t>();
    if (m.dim == 0 && n_frames != 0) {
        throw Error(ErrorCode::DimMismatch, "dim 0 with nonzero frame count");
    }
    const std::uint64_t payload = n_frames * m.dim * sizeof(float);
    if (r.remaining() < payload) {
        throw Error(ErrorCode::TruncatedFile, "payload needs " + std::to_string(payload) +
                                                  " bytes, file has " +
                                                  std::to_string(r.remaining()));
    }
    if (r.remaining() > payload) {
        throw Error(ErrorCode::DimMismatch, std::to_string(r.remaining() - payload) +
                                                " trailing bytes after declared payload");
    }
    m.frames.resize(n_frames * m.dim);
    r.get_floats(m.frames);
    validate(m);
    return m;
}

FeatureMatrix read_feature_file(const fs::path& path) {
    auto m = parse_feature_bytes(read_file_bytes(path));
    m.utt_id = path.stem().string();
    return m;
}

void write_feature_file(const fs::path& path, const FeatureMatrix& m) {
    write_file_bytes(path, serialize_feature(m));
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    }
}

void write_text_file(const fs::path& path, std::string_view text) {
    write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace dsu
