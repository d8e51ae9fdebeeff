#include <charconv>
#include <cmath>
#include <cstdio>

#include "dsu/corpusio.hpp"
#include "dsu/error.hpp"
#include "dsu/experiment.hpp"
#include "text_util.hpp"

namespace dsu {

namespace {

[[noreturn]] void bad(std::size_t line, const std::string& msg) {
    throw Error(ErrorCode::InvalidConfig, "config line " + std::to_string(line) + ": " + msg);
}

// Strips a trailing comment that is not inside a string.
std::string_view strip_comment(std::string_view s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) {
            in_str = !in_str;
        } else if (s[i] == '#' && !in_str) {
            return s.substr(0, i);
        }
    }
    return s;
}

bool bare_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
}

Config::Scalar parse_scalar(std::string_view s, std::size_t line) {
    s = text::trim(s);
    if (s.empty()) {
        bad(line, "missing value");
    }
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"') {
            bad(line, "unterminated string");
        }
        std::string out;
        for (std::size_t i = 1; i + 1 < s.size(); ++i) {
            if (s[i] == '\\' && i + 2 < s.size()) {
                const char e = s[++i];
                switch (e) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    default: bad(line, std::string("unknown escape \\") + e);
                }
            } else {
                out += s[i];
            }
        }
        return out;
    }
    if (s == "true") {
        return true;
    }
    if (s == "false") {
        return false;
    }
    std::string digits;
    for (const char c : s) {
        if (c != '_') {
            digits += c;
        }
    }
    const bool looks_float = digits.find_first_of(".eE") != std::string::npos ||
                             digits == "inf" || digits == "+inf" || digits == "-inf";
    if (!looks_float) {
        std::int64_t v = 0;
        const char* b = digits.data() + (digits.front() == '+' ? 1 : 0);
        const auto [ptr, ec] = std::from_chars(b, digits.data() + digits.size(), v);
        if (ec == std::errc{} && ptr == digits.data() + digits.size()) {
            return v;
        }
        bad(line, "cannot parse value '" + std::string(s) + "'");
    }
    if (digits == "inf" || digits == "+inf") {
        return std::numeric_limits<double>::infinity();
    }
    if (digits == "-inf") {
        return -std::numeric_limits<double>::infinity();
    }
    const auto v = text::parse_double(digits.front() == '+' ? std::string_view(digits).substr(1)
                                                            : std::string_view(digits));
    if (!v) {
        bad(line, "cannot parse number '" + std::string(s) + "'");
    }
    return *v;
}

// Splits array items on commas outside strings.
std::vector<std::string_view> split_items(std::string_view s) {
    std::vector<std::string_view> out;
    bool in_str = false;
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) {
            in_str = !in_str;
        } else if (s[i] == ',' && !in_str) {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    out.push_back(s.substr(start));
    return out;
}

std::string render(const Config::Scalar& v) {
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, bool>) {
                return x ? "true" : "false";
            } else if constexpr (std::is_same_v<T, std::int64_t>) {
                return std::to_string(x);
            } else if constexpr (std::is_same_v<T, double>) {
                return format_double(x);
            } else {
                std::string out = "\"";
                for (const char c : x) {
                    if (c == '"' || c == '\\') {
                        out += '\\';
                    }
                    out += c;
                }
                return out + "\"";
            }
        },
        v);
}

std::optional<double> as_number(const Config::Scalar& s) {
    if (const auto* i = std::get_if<std::int64_t>(&s)) {
        return static_cast<double>(*i);
    }
    if (const auto* d = std::get_if<double>(&s)) {
        return *d;
    }
    return std::nullopt;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string format_double(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, ptr);
    // Keep floats recognisable as floats when re-read as config values.
    if (s.find_first_of(".eE") == std::string::npos) {
        s += ".0";
    }
    return s;
}

Config Config::parse(std::string_view text, fs::path base_dir) {
    Config c;
    c.base_dir_ = std::move(base_dir);
    std::string section;
    const auto lines = text::split_lines(text);
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const std::size_t line_no = ln + 1;
        const auto line = text::trim(strip_comment(lines[ln]));
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                bad(line_no, "malformed section header");
            }
            const auto name = text::trim(line.substr(1, line.size() - 2));
            if (name.empty() || !std::all_of(name.begin(), name.end(), bare_key_char)) {
                bad(line_no, "invalid section name");
            }
            section = std::string(name);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            bad(line_no, "expected key = value");
        }
        const auto key = text::trim(line.substr(0, eq));
        if (key.empty() || !std::all_of(key.begin(), key.end(), bare_key_char)) {
            bad(line_no, "invalid key");
        }
        const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
        if (c.values_.count(full)) {
            bad(line_no, "duplicate key '" + full + "'");
        }
        const auto rhs = text::trim(line.substr(eq + 1));
        if (!rhs.empty() && rhs.front() == '[') {
            if (rhs.back() != ']') {
                bad(line_no, "arrays must close on the same line");
            }
            std::vector<Scalar> items;
            const auto inner = text::trim(rhs.substr(1, rhs.size() - 2));
            if (!inner.empty()) {
                for (const auto item : split_items(inner)) {
                    if (text::trim(item).empty()) {
                        continue;  // trailing comma
                    }
                    items.push_back(parse_scalar(item, line_no));
                }
            }
            c.values_[full] = std::move(items);
        } else {
            c.values_[full] = parse_scalar(rhs, line_no);
        }
    }
    return c;
}

Config Config::load(const fs::path& path) {
    return parse(read_text_file(path), path.parent_path());
}

std::optional<std::string> Config::str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return std::nullopt;
    }
    const auto* s = std::get_if<Scalar>(&it->second);
    const auto* v = s ? std::get_if<std::string>(s) : nullptr;
    if (!v) {
        throw Error(ErrorCode::InvalidConfig, "'" + key + "' must be a string");
    }
    return *v;
}

std::optional<double> Config::num(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return std::nullopt;
    }
    const auto* s = std::get_if<Scalar>(&it->second);
    const auto v = s ? as_number(*s) : std::nullopt;
    if (!v) {
        throw Error(ErrorCode::InvalidConfig, "'" + key + "' must be a number");
    }
    return v;
}

std::optional<std::int64_t> Config::integer(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return std::nullopt;
    }
    const auto* s = std::get_if<Scalar>(&it->second);
    const auto* v = s ? std::get_if<std::int64_t>(s) : nullptr;
    if (!v) {
        throw Error(ErrorCode::InvalidConfig, "'" + key + "' must be an integer");
    }
    return *v;
}

std::optional<bool> Config::boolean(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return std::nullopt;
    }
    const auto* s = std::get_if<Scalar>(&it->second);
    const auto* v = s ? std::get_if<bool>(s) : nullptr;
    if (!v) {
        throw Error(ErrorCode::InvalidConfig, "'" + key + "' must be true or false");
    }
    return *v;
}

std::optional<std::vector<std::int64_t>> Config::int_list(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return std::nullopt;
    }
    std::vector<std::int64_t> out;
    if (const auto* arr = std::get_if<std::vector<Scalar>>(&it->second)) {
        for (const auto& s : *arr) {
            const auto* v = std::get_if<std::int64_t>(&s);
            if (!v) {
                throw Error(ErrorCode::InvalidConfig, "'" + key + "' must hold integers");
            }
            out.push_back(*v);
        }
        return out;
    }
    out.push_back(*integer(key));
    return out;
}

std::optional<std::vector<double>> Config::num_list(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return std::nullopt;
    }
    std::vector<double> out;
    if (const auto* arr = std::get_if<std::vector<Scalar>>(&it->second)) {
        for (const auto& s : *arr) {
            const auto v = as_number(s);
            if (!v) {
                throw Error(ErrorCode::InvalidConfig, "'" + key + "' must hold numbers");
            }
            out.push_back(*v);
        }
        return out;
    }
    out.push_back(*num(key));
    return out;
}

std::optional<std::vector<std::string>> Config::str_list(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        return std::nullopt;
    }
    std::vector<std::string> out;
    if (const auto* arr = std::get_if<std::vector<Scalar>>(&it->second)) {
        for (const auto& s : *arr) {
            const auto* v = std::get_if<std::string>(&s);
            if (!v) {
                throw Error(ErrorCode::InvalidConfig, "'" + key + "' must hold strings");
            }
            out.push_back(*v);
        }
        return out;
    }
    out.push_back(*str(key));
    return out;
}

std::optional<fs::path> Config::path(const std::string& key) const {
    const auto s = str(key);
    if (!s) {
        return std::nullopt;
    }
    fs::path p(*s);
    if (p.is_relative() && !base_dir_.empty()) {
        p = base_dir_ / p;
    }
    return p;
}

std::string Config::canonical() const {
    std::string out;
    for (const auto& [key, value] : values_) {
        out += key;
        out += " = ";
        if (const auto* s = std::get_if<Scalar>(&value)) {
            out += render(*s);
        } else {
            out += '[';
            const auto& arr = std::get<std::vector<Scalar>>(value);
            for (std::size_t i = 0; i < arr.size(); ++i) {
                out += (i ? ", " : "") + render(arr[i]);
            }
            out += ']';
        }
        out += '\n';
    }
    return out;
}

std::uint64_t Config::hash() const { return fnv1a64(canonical()); }

std::vector<std::string> Config::keys() const {
    std::vector<std::string> out;
    for (const auto& kv : values_) {
        out.push_back(kv.first);
    }
    return out;
}

}  // namespace dsu
