#include <set>
#include <sstream>
#include <unordered_set>

#include "dsu/corpusio.hpp"
#include "dsu/error.hpp"
#include "text_util.hpp"

namespace dsu {

namespace {

std::string resolve(std::string_view p, const fs::path& base_dir) {
    fs::path path{std::string(p)};
    if (path.is_relative() && !base_dir.empty()) {
        path = base_dir / path;
    }
    return path.lexically_normal().string();
}

std::optional<std::string> optional_path(std::string_view p, const fs::path& base_dir) {
    if (p == "-") {
        return std::nullopt;
    }
    return resolve(p, base_dir);
}

}  // namespace

std::vector<ManifestEntry> Manifest::split(std::string_view tag) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
        if (e.split == tag) {
            out.push_back(e);
        }
    }
    return out;
}

Manifest parse_manifest(std::string_view text, const fs::path& base_dir) {
    Manifest m;
    std::unordered_set<std::string> seen;
    const auto lines = text::split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        if (text::trim(lines[n]).empty()) {
            continue;
        }
        const auto f = text::split(lines[n], '\t');
        if (f.size() != 5) {
            throw Error(ErrorCode::MalformedRecord, "manifest line " + std::to_string(n + 1) +
                                                        ": expected 5 tab-separated fields, got " +
                                                        std::to_string(f.size()));
        }
        for (const auto& field : f) {
            if (text::trim(field).empty()) {
                throw Error(ErrorCode::MalformedRecord,
                            "manifest line " + std::to_string(n + 1) + ": empty field");
            }
        }
        if (f[1] == "-") {
            throw Error(ErrorCode::MalformedRecord,
                        "manifest line " + std::to_string(n + 1) + ": feature path is required");
        }
        std::string id(f[0]);
        if (!seen.insert(id).second) {
            throw Error(ErrorCode::DuplicateUttId,
                        "manifest line " + std::to_string(n + 1) + ": duplicate utt_id '" + id + "'");
        }
        m.entries.push_back({std::move(id), resolve(f[1], base_dir), optional_path(f[2], base_dir),
                             optional_path(f[3], base_dir), std::string(f[4])});
    }
    return m;
}

Manifest load_manifest(const fs::path& path) {
    return parse_manifest(read_text_file(path), path.parent_path());
}

std::string format_manifest(const Manifest& m) {
    std::ostringstream out;
    for (const auto& e : m.entries) {
        out << e.utt_id << '\t' << e.feature_path << '\t' << e.wav_path.value_or("-") << '\t'
            << e.alignment_path.value_or("-") << '\t' << e.split << '\n';
    }
    return out.str();
}

void write_manifest(const fs::path& path, const Manifest& m) {
    write_text_file(path, format_manifest(m));
}

std::vector<UnitSequence> parse_units(std::string_view text, float frame_rate_hz) {
    std::vector<UnitSequence> out;
    std::set<std::string, std::less<>> seen;
    const auto lines = text::split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        if (text::trim(lines[n]).empty()) {
            continue;
        }
        const auto bar = lines[n].find('|');
        if (bar == std::string_view::npos || bar == 0) {
            throw Error(ErrorCode::MalformedRecord,
                        "units line " + std::to_string(n + 1) + ": expected 'utt_id|units'");
        }
        UnitSequence s;
        s.utt_id = std::string(lines[n].substr(0, bar));
        if (!seen.insert(s.utt_id).second) {
            throw Error(ErrorCode::DuplicateUttId, "units line " + std::to_string(n + 1) + ": '" + s.utt_id + "'");
        }
        s.frame_rate_hz = frame_rate_hz;
        const std::string_view rest = text::trim(lines[n].substr(bar + 1));
        if (!rest.empty()) {
            for (const auto tok : text::split(rest, ' ')) {
                if (tok.empty()) {
                    continue;
                }
                const auto v = text::parse_u64(tok);
                if (!v || *v > 0xFFFFFFFFull) {
                    throw Error(ErrorCode::MalformedRecord, "units line " + std::to_string(n + 1) +
                                                                ": bad unit '" + std::string(tok) + "'");
                }
                s.units.push_back(static_cast<Unit>(*v));
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::string format_units(std::span<const UnitSequence> seqs) {
    std::string out;
    for (const auto& s : seqs) {
        out += s.utt_id;
        out += '|';
        for (std::size_t i = 0; i < s.units.size(); ++i) {
            if (i) {
                out += ' ';
            }
            out += std::to_string(s.units[i]);
        }
        out += '\n';
    }
    return out;
}

std::vector<UnitSequence> read_units_file(const fs::path& path, float frame_rate_hz) {
    return parse_units(read_text_file(path), frame_rate_hz);
}

void write_units_file(const fs::path& path, std::span<const UnitSequence> seqs) {
    write_text_file(path, format_units(seqs));
}

}  // namespace dsu
