#include <charconv>
#include <cstring>

#include "dsu/binio.hpp"
#include "dsu/error.hpp"
#include "dsu/quantizer.hpp"
#include "../text_util.hpp"

namespace dsu {

namespace {

constexpr char kCodebookMagic[4] = {'K', 'M', 'C', 'B'};
constexpr std::uint32_t kCodebookVersion = 1;

std::string shortest(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, res.ptr};
}

std::string format_meta(const CodebookMeta& m) {
    std::string s;
    s += "corpus_tag=" + m.source_tag + "\n";
    s += "seed=" + std::to_string(m.seed) + "\n";
    s += "n_training_frames=" + std::to_string(m.n_training_frames) + "\n";
    s += "inertia=" + shortest(m.inertia) + "\n";
    return s;
}

CodebookMeta parse_meta(std::string_view block) {
    CodebookMeta m;
    for (const auto line : text::split_lines(block)) {
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw Error(ErrorCode::MalformedRecord, "codebook metadata line without '='");
        }
        const auto key = line.substr(0, eq);
        const auto value = line.substr(eq + 1);
        if (key == "corpus_tag") {
            m.source_tag = std::string(value);
        } else if (key == "seed" || key == "n_training_frames") {
            const auto v = text::parse_u64(value);
            if (!v) {
                throw Error(ErrorCode::MalformedRecord, "bad integer in codebook metadata");
            }
            (key == "seed" ? m.seed : m.n_training_frames) = *v;
        } else if (key == "inertia") {
            const auto v = text::parse_double(value);
            if (!v) {
                throw Error(ErrorCode::MalformedRecord, "bad inertia in codebook metadata");
            }
            m.inertia = *v;
        }
        // Unknown keys are ignored so newer writers stay readable.
    }
    return m;
}

}  // namespace

std::vector<std::uint8_t> serialize_codebook(const Codebook& cb) {
    cb.validate();
    binio::Writer w;
    w.put_bytes({kCodebookMagic, 4});
    w.put(kCodebookVersion);
    w.put(cb.k);
    w.put(cb.dim);
    w.put_floats(cb.centroids);
    w.put_string(format_meta(cb.meta));
    return std::move(w.bytes());
}

Codebook parse_codebook_bytes(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCodebookMagic, 4) != 0) {
        throw Error(ErrorCode::BadMagic, "codebook file does not start with KMCB");
    }
    binio::Reader r(bytes.subspan(4));
    const auto version = r.get<std::uint32_t>();
    if (version != kCodebookVersion) {
        throw Error(ErrorCode::BadMagic, "unsupported codebook version " + std::to_string(version));
    }
    Codebook cb;
    cb.k = r.get<std::uint32_t>();
    cb.dim = r.get<std::uint32_t>();
    const std::uint64_t n = static_cast<std::uint64_t>(cb.k) * cb.dim;
    if (r.remaining() < n * sizeof(float)) {
        throw Error(ErrorCode::TruncatedFile, "codebook centroid payload is truncated");
    }
    cb.centroids.resize(n);
    r.get_floats(cb.centroids);
    cb.meta = parse_meta(r.get_string());
    if (r.remaining() != 0) {
        throw Error(ErrorCode::MalformedRecord, "trailing bytes after codebook metadata");
    }
    cb.validate();
    return cb;
}

void save_codebook(const std::filesystem::path& path, const Codebook& cb) {
    write_file_bytes(path, serialize_codebook(cb));
}

Codebook load_codebook(const std::filesystem::path& path) {
    return parse_codebook_bytes(read_file_bytes(path));
}

}  // namespace dsu
