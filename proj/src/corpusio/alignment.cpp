#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "dsu/corpusio.hpp"
#include "dsu/error.hpp"
#include "text_util.hpp"

namespace dsu {

namespace {

constexpr double kBoundaryEps = 1e-9;

[[noreturn]] void malformed(std::size_t line, const std::string& what) {
    throw Error(ErrorCode::MalformedTextGrid, "line " + std::to_string(line) + ": " + what);
}

// Parses the right-hand side of `key = "quoted"`; Praat escapes quotes by doubling.
std::string unquote(std::string_view v, std::size_t line) {
    if (v.size() < 2 || v.front() != '"' || v.back() != '"') {
        malformed(line, "expected a quoted string, got '" + std::string(v) + "'");
    }
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        if (v[i] == '"') {
            if (i + 2 < v.size() && v[i + 1] == '"') {
                out.push_back('"');
                ++i;
                continue;
            }
            malformed(line, "unescaped quote inside string");
        }
        out.push_back(v[i]);
    }
    return out;
}

double number(std::string_view v, std::size_t line) {
    const auto parsed = text::parse_double(v);
    if (!parsed || !std::isfinite(*parsed)) {
        malformed(line, "non-numeric value '" + std::string(v) + "'");
    }
    return *parsed;
}

struct RawInterval {
    std::optional<double> xmin, xmax;
    std::optional<std::string> text;
    std::size_t line = 0;
};

struct RawTier {
    std::string cls;
    std::string name;
    std::optional<std::size_t> declared;
    std::vector<RawInterval> intervals;
    std::size_t line = 0;
};

void finish_interval(RawTier& tier) {
    if (tier.intervals.empty()) {
        return;
    }
    const auto& iv = tier.intervals.back();
    if (!iv.xmin || !iv.xmax || !iv.text) {
        malformed(iv.line, "interval is missing xmin, xmax or text");
    }
}

void finish_tier(std::vector<RawTier>& tiers) {
    if (tiers.empty()) {
        return;
    }
    auto& t = tiers.back();
    finish_interval(t);
    if (t.cls == "IntervalTier" && t.declared && *t.declared != t.intervals.size()) {
        malformed(t.line, "tier '" + t.name + "' declares " + std::to_string(*t.declared) +
                              " intervals but has " + std::to_string(t.intervals.size()));
    }
}

}  // namespace

void validate(const AlignmentTrack& a) {
    for (std::size_t i = 0; i < a.intervals.size(); ++i) {
        const auto& iv = a.intervals[i];
        if (!(iv.start_s < iv.end_s)) {
            throw Error(ErrorCode::NegativeInterval,
                        a.utt_id + ": interval " + std::to_string(i) + " has start >= end");
        }
        if (iv.label.empty()) {
            throw Error(ErrorCode::MalformedRecord, a.utt_id + ": empty label");
        }
        if (i > 0 && iv.start_s < a.intervals[i - 1].end_s - kBoundaryEps) {
            throw Error(ErrorCode::OverlappingIntervals,
                        a.utt_id + ": interval " + std::to_string(i) + " overlaps its predecessor");
        }
    }
}

AlignmentTrack parse_textgrid(std::string_view text, std::string_view tier_name) {
    const auto lines = text::split_lines(text);
    bool saw_type = false;
    bool saw_class = false;
    std::vector<RawTier> tiers;
    bool in_points = false;

    for (std::size_t n = 0; n < lines.size(); ++n) {
        const std::size_t line_no = n + 1;
        const std::string_view line = text::trim(lines[n]);
        if (line.empty()) {
            continue;
        }
        if (line.starts_with("item [") && line.ends_with(":")) {
            if (line == "item []:") {
                continue;
            }
            finish_tier(tiers);
            tiers.emplace_back();
            tiers.back().line = line_no;
            in_points = false;
            continue;
        }
        if (line.starts_with("intervals [") && line.ends_with(":")) {
            if (tiers.empty()) {
                malformed(line_no, "interval outside of any tier");
            }
            finish_interval(tiers.back());
            tiers.back().intervals.emplace_back();
            tiers.back().intervals.back().line = line_no;
            in_points = false;
            continue;
        }
        if (line.starts_with("points [") && line.ends_with(":")) {
            in_points = true;
            continue;
        }
        if (line == "tiers? <exists>") {
            continue;
        }

        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            malformed(line_no, "expected 'key = value'");
        }
        const std::string_view key = text::trim(line.substr(0, eq));
        const std::string_view value = text::trim(line.substr(eq + 1));

        if (tiers.empty()) {
            if (key == "File type") {
                if (unquote(value, line_no) != "ooTextFile") {
                    malformed(line_no, "not an ooTextFile");
                }
                saw_type = true;
            } else if (key == "Object class") {
                if (unquote(value, line_no) != "TextGrid") {
                    malformed(line_no, "object class is not TextGrid");
                }
                saw_class = true;
            } else if (key == "xmin" || key == "xmax") {
                number(value, line_no);
            } else if (key == "size") {
                number(value, line_no);
            } else {
                malformed(line_no, "unexpected key '" + std::string(key) + "' in header");
            }
            continue;
        }

        RawTier& tier = tiers.back();
        if (in_points) {
            continue;  // TextTier content is not used
        }
        if (!tier.intervals.empty()) {
            RawInterval& iv = tier.intervals.back();
            if (key == "xmin") {
                iv.xmin = number(value, line_no);
            } else if (key == "xmax") {
                iv.xmax = number(value, line_no);
            } else if (key == "text") {
                iv.text = unquote(value, line_no);
            } else {
                malformed(line_no, "unexpected key '" + std::string(key) + "' in interval");
            }
            continue;
        }
        if (key == "class") {
            tier.cls = unquote(value, line_no);
        } else if (key == "name") {
            tier.name = unquote(value, line_no);
        } else if (key == "xmin" || key == "xmax") {
            number(value, line_no);
        } else if (key == "intervals: size" || key == "points: size") {
            const double d = number(value, line_no);
            if (d < 0 || d != std::floor(d)) {
                malformed(line_no, "size must be a non-negative integer");
            }
            tier.declared = static_cast<std::size_t>(d);
        } else {
            malformed(line_no, "unexpected key '" + std::string(key) + "' in tier");
        }
    }
    finish_tier(tiers);

    if (!saw_type || !saw_class) {
        malformed(1, "missing ooTextFile / TextGrid header");
    }

    for (const auto& tier : tiers) {
        if (tier.cls != "IntervalTier" || tier.name != tier_name) {
            continue;
        }
        AlignmentTrack track;
        double prev_end = -std::numeric_limits<double>::infinity();
        for (const auto& raw : tier.intervals) {
            if (!(*raw.xmin < *raw.xmax)) {
                malformed(raw.line, "interval has xmin >= xmax");
            }
            if (*raw.xmin < prev_end - kBoundaryEps) {
                throw Error(ErrorCode::OverlappingIntervals,
                            "line " + std::to_string(raw.line) + ": interval overlaps its predecessor");
            }
            prev_end = *raw.xmax;
            if (raw.text->empty()) {
                continue;
            }
            track.intervals.push_back({*raw.xmin, *raw.xmax, *raw.text});
        }
        return track;
    }
    throw Error(ErrorCode::MissingTier, "no IntervalTier named '" + std::string(tier_name) + "'");
}

std::vector<AlignmentTrack> parse_alignment_csv(std::string_view text) {
    const auto lines = text::split_lines(text);
    std::size_t n = 0;
    while (n < lines.size() && text::trim(lines[n]).empty()) {
        ++n;
    }
    if (n == lines.size() || text::trim(lines[n]) != "utt_id,start_s,end_s,phoneme") {
        throw Error(ErrorCode::MalformedRecord, "alignment CSV must start with header "
                                                "'utt_id,start_s,end_s,phoneme'");
    }
    std::vector<AlignmentTrack> tracks;
    for (++n; n < lines.size(); ++n) {
        const std::string_view line = text::trim(lines[n]);
        if (line.empty()) {
            continue;
        }
        const auto fields = text::split(line, ',');
        const auto start = fields.size() == 4 ? text::parse_double(fields[1]) : std::nullopt;
        const auto end = fields.size() == 4 ? text::parse_double(fields[2]) : std::nullopt;
        if (!start || !end || fields[0].empty() || fields[3].empty()) {
            throw Error(ErrorCode::MalformedRecord,
                        "alignment CSV line " + std::to_string(n + 1) + " is malformed");
        }
        auto it = std::find_if(tracks.begin(), tracks.end(),
                               [&](const AlignmentTrack& t) { return t.utt_id == fields[0]; });
        if (it == tracks.end()) {
            tracks.push_back({std::string(fields[0]), {}});
            it = std::prev(tracks.end());
        }
        it->intervals.push_back({*start, *end, std::string(fields[3])});
    }
    for (auto& t : tracks) {
        std::stable_sort(t.intervals.begin(), t.intervals.end(),
                         [](const Interval& a, const Interval& b) { return a.start_s < b.start_s; });
        validate(t);
    }
    return tracks;
}

std::string format_alignment_csv(std::span<const AlignmentTrack> tracks) {
    std::ostringstream out;
    out.precision(17);
    out << "utt_id,start_s,end_s,phoneme\n";
    for (const auto& t : tracks) {
        for (const auto& iv : t.intervals) {
            out << t.utt_id << ',' << iv.start_s << ',' << iv.end_s << ',' << iv.label << '\n';
        }
    }
    return out.str();
}

AlignmentTrack load_alignment(const fs::path& path, std::string_view utt_id,
                              std::string_view tier_name) {
    const std::string content = read_text_file(path);
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".textgrid") {
        auto track = parse_textgrid(content, tier_name);
        track.utt_id = std::string(utt_id);
        return track;
    }
    auto tracks = parse_alignment_csv(content);
    for (auto& t : tracks) {
        if (t.utt_id == utt_id) {
            return t;
        }
    }
    if (tracks.size() == 1) {
        return tracks.front();
    }
    throw Error(ErrorCode::MissingAlignment,
                path.string() + " has no alignment for '" + std::string(utt_id) + "'");
}

}  // namespace dsu
