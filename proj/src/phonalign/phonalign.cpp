#include "dsu/phonalign.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "dsu/error.hpp"
#include "../text_util.hpp"

namespace dsu {

namespace {

// Leftover frame time below this is rounding noise, not an alignment gap.
constexpr double kGapEps = 1e-12;

std::string shortest(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, res.ptr};
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (const char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::size_t OverlapTable::column(std::string_view label) {
    for (std::size_t c = 0; c < labels.size(); ++c) {
        if (labels[c] == label) {
            return c;
        }
    }
    const std::size_t old_cols = labels.size();
    labels.emplace_back(label);
    std::vector<double> grown(static_cast<std::size_t>(k) * labels.size(), 0.0);
    for (std::size_t u = 0; u < k; ++u) {
        std::copy_n(mass.begin() + u * old_cols, old_cols, grown.begin() + u * labels.size());
    }
    mass = std::move(grown);
    return old_cols;
}

double OverlapTable::unit_mass(Unit u) const {
    const auto row = mass.begin() + static_cast<std::ptrdiff_t>(u * labels.size());
    return std::accumulate(row, row + static_cast<std::ptrdiff_t>(labels.size()), 0.0);
}

double OverlapTable::total() const { return std::accumulate(mass.begin(), mass.end(), 0.0); }

OverlapTable& OverlapTable::operator+=(const OverlapTable& other) {
    if (other.k != k) {
        throw Error(ErrorCode::ShapeMismatch, "cannot merge overlap tables with different k");
    }
    for (std::size_t oc = 0; oc < other.labels.size(); ++oc) {
        const std::size_t c = column(other.labels[oc]);
        for (std::size_t u = 0; u < k; ++u) {
            mass[u * labels.size() + c] += other.mass[u * other.labels.size() + oc];
        }
    }
    return *this;
}

void accumulate_overlap(OverlapTable& table, const UnitSequence& s, const AlignmentTrack& a) {
    for (std::size_t i = 0; i < a.intervals.size(); ++i) {
        const auto& iv = a.intervals[i];
        if (!(iv.start_s < iv.end_s)) {
            throw Error(ErrorCode::NegativeInterval, a.utt_id + ": interval " + std::to_string(i) +
                                                         " ends before it starts");
        }
    }
    // Resolve label columns up front so the frame loop does not reshape.
    std::vector<std::size_t> cols(a.intervals.size());
    for (std::size_t i = 0; i < a.intervals.size(); ++i) {
        cols[i] = table.column(a.intervals[i].label);
    }

    const double rate = s.frame_rate_hz;
    std::size_t first = 0;
    std::ptrdiff_t unaligned_col = -1;
    for (std::size_t f = 0; f < s.units.size(); ++f) {
        const Unit u = s.units[f];
        if (u >= table.k) {
            throw Error(ErrorCode::UnitOutOfRange, s.utt_id + ": unit " + std::to_string(u) +
                                                       " >= k=" + std::to_string(table.k));
        }
        const double f0 = f / rate;
        const double f1 = (f + 1) / rate;
        while (first < a.intervals.size() && a.intervals[first].end_s <= f0) {
            ++first;
        }
        double covered = 0.0;
        for (std::size_t j = first; j < a.intervals.size() && a.intervals[j].start_s < f1; ++j) {
            const double ov = std::min(f1, a.intervals[j].end_s) - std::max(f0, a.intervals[j].start_s);
            if (ov > 0.0) {
                table.mass[u * table.labels.size() + cols[j]] += ov;
                covered += ov;
            }
        }
        const double gap = (f1 - f0) - covered;
        if (gap > kGapEps) {
            if (unaligned_col < 0) {
                unaligned_col = static_cast<std::ptrdiff_t>(table.column(kUnalignedLabel));
            }
            table.mass[u * table.labels.size() + unaligned_col] += gap;
        }
    }
}

OverlapTable accumulate_overlap(const UnitSequence& s, const AlignmentTrack& a, std::uint32_t k) {
    OverlapTable t(k);
    t.mass.clear();
    accumulate_overlap(t, s, a);
    return t;
}

OverlapTable accumulate_corpus(std::span<const UnitSequence> seqs,
                               std::span<const AlignmentTrack> tracks, std::uint32_t k) {
    if (seqs.size() != tracks.size()) {
        throw Error(ErrorCode::LengthMismatch, "unit sequences and alignments differ in count");
    }
    std::vector<OverlapTable> parts(seqs.size(), OverlapTable(k));
    std::vector<std::exception_ptr> errors(seqs.size());
#pragma omp parallel for schedule(dynamic, 4)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(seqs.size()); ++i) {
        try {
            accumulate_overlap(parts[i], seqs[i], tracks[i]);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    OverlapTable total(k);
    for (const auto& p : parts) {
        total += p;
    }
    return total;
}

PhonemeUnitMatrix build_confusion(const OverlapTable& t) {
    PhonemeUnitMatrix m;
    m.k = t.k;
    m.labels = t.labels;
    const std::size_t p = t.labels.size();
    m.prob.assign(static_cast<std::size_t>(t.k) * p, 0.0);
    m.support.assign(t.k, 0.0);
    for (Unit u = 0; u < t.k; ++u) {
        const double row = t.unit_mass(u);
        m.support[u] = row;
        if (row <= 0.0) {
            continue;
        }
        for (std::size_t c = 0; c < p; ++c) {
            m.prob[u * p + c] = t.at(u, c) / row;
        }
    }
    return m;
}

double purity(const PhonemeUnitMatrix& m, const OverlapTable& t) {
    if (m.k != t.k || m.labels != t.labels) {
        throw Error(ErrorCode::ShapeMismatch, "confusion matrix and overlap table disagree in shape");
    }
    const std::size_t p = m.labels.size();
    double weighted = 0.0;
    double total = 0.0;
    for (Unit u = 0; u < m.k; ++u) {
        const double w = t.unit_mass(u);
        if (w <= 0.0) {
            continue;
        }
        double best = 0.0;
        for (std::size_t c = 0; c < p; ++c) {
            best = std::max(best, m.prob[u * p + c]);
        }
        weighted += w * best;
        total += w;
    }
    return total > 0.0 ? weighted / total : 0.0;
}

std::string confusion_csv(const PhonemeUnitMatrix& m) {
    std::string out = "unit_id,phoneme,probability,support_seconds\n";
    const std::size_t p = m.labels.size();
    for (Unit u = 0; u < m.k; ++u) {
        for (std::size_t c = 0; c < p; ++c) {
            out += std::to_string(u);
            out += ',';
            out += m.labels[c];
            out += ',';
            out += shortest(m.prob[u * p + c]);
            out += ',';
            out += shortest(m.support[u]);
            out += '\n';
        }
    }
    return out;
}

PhonemeUnitMatrix parse_confusion_csv(std::string_view text) {
    const auto lines = text::split_lines(text);
    if (lines.empty() || text::trim(lines[0]) != "unit_id,phoneme,probability,support_seconds") {
        throw Error(ErrorCode::MalformedRecord, "confusion CSV header missing");
    }
    struct Row {
        Unit u;
        std::string label;
        double prob;
        double support;
    };
    std::vector<Row> rows;
    std::vector<std::string> labels;
    Unit max_unit = 0;
    for (std::size_t n = 1; n < lines.size(); ++n) {
        if (text::trim(lines[n]).empty()) {
            continue;
        }
        const auto f = text::split(lines[n], ',');
        const auto u = f.size() == 4 ? text::parse_u64(f[0]) : std::nullopt;
        const auto pr = f.size() == 4 ? text::parse_double(f[2]) : std::nullopt;
        const auto su = f.size() == 4 ? text::parse_double(f[3]) : std::nullopt;
        if (!u || !pr || !su) {
            throw Error(ErrorCode::MalformedRecord, "confusion CSV line " + std::to_string(n + 1));
        }
        const std::string label(f[1]);
        if (std::find(labels.begin(), labels.end(), label) == labels.end()) {
            labels.push_back(label);
        }
        rows.push_back({static_cast<Unit>(*u), label, *pr, *su});
        max_unit = std::max(max_unit, static_cast<Unit>(*u));
    }
    PhonemeUnitMatrix m;
    m.k = rows.empty() ? 0 : max_unit + 1;
    m.labels = labels;
    m.prob.assign(static_cast<std::size_t>(m.k) * labels.size(), 0.0);
    m.support.assign(m.k, 0.0);
    for (const auto& r : rows) {
        const auto c = static_cast<std::size_t>(
            std::find(labels.begin(), labels.end(), r.label) - labels.begin());
        m.prob[r.u * labels.size() + c] = r.prob;
        m.support[r.u] = r.support;
    }
    return m;
}

Heatmap render_heatmap(const PhonemeUnitMatrix& m) {
    const std::size_t p = m.labels.size();
    struct Key {
        Unit unit;
        std::size_t argmax;
        double peak;
    };
    std::vector<Key> keys;
    for (Unit u = 0; u < m.k; ++u) {
        if (!m.present(u)) {
            continue;
        }
        std::size_t arg = 0;
        for (std::size_t c = 1; c < p; ++c) {
            if (m.at(u, c) > m.at(u, arg)) {
                arg = c;
            }
        }
        keys.push_back({u, arg, p ? m.at(u, arg) : 0.0});
    }
    std::stable_sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
        if (a.argmax != b.argmax) return a.argmax < b.argmax;
        if (a.peak != b.peak) return a.peak > b.peak;
        return a.unit < b.unit;
    });

    Heatmap h;
    for (const auto& key : keys) {
        h.unit_order.push_back(key.unit);
    }

    constexpr int kCellW = 8;
    constexpr int kCellH = 14;
    constexpr int kLeft = 90;
    constexpr int kTop = 20;
    const int width = kLeft + static_cast<int>(keys.size()) * kCellW + 10;
    const int height = kTop + static_cast<int>(p) * kCellH + 30;

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
        << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
        << "\" fill=\"#ffffff\"/>\n"
        << "<g font-family=\"monospace\" font-size=\"10\">\n";
    for (std::size_t c = 0; c < p; ++c) {
        svg << "<text x=\"" << kLeft - 4 << "\" y=\"" << kTop + static_cast<int>(c) * kCellH + 10
            << "\" text-anchor=\"end\">" << xml_escape(m.labels[c]) << "</text>\n";
    }
    svg << "<text x=\"" << kLeft << "\" y=\"" << height - 8 << "\">units (" << keys.size()
        << " present, grouped by dominant phoneme)</text>\n</g>\n<g>\n";
    for (std::size_t col = 0; col < keys.size(); ++col) {
        const Unit u = keys[col].unit;
        for (std::size_t c = 0; c < p; ++c) {
            const double prob = std::clamp(m.at(u, c), 0.0, 1.0);
            const int level = static_cast<int>(std::lround(255.0 * (1.0 - prob)));
            if (level == 255) {
                continue;  // white on white
            }
            char fill[8];
            std::snprintf(fill, sizeof(fill), "#%02x%02x%02x", level, level, level);
            svg << "<rect x=\"" << kLeft + static_cast<int>(col) * kCellW << "\" y=\""
                << kTop + static_cast<int>(c) * kCellH << "\" width=\"" << kCellW << "\" height=\""
                << kCellH << "\" fill=\"" << fill << "\"><title>unit " << u << " / "
                << xml_escape(m.labels[c]) << ": " << shortest(m.at(u, c)) << "</title></rect>\n";
        }
    }
    svg << "</g>\n</svg>\n";
    h.svg = svg.str();
    h.csv = confusion_csv(m);
    return h;
}

}  // namespace dsu
