#pragma once

// Minimal CSV reading/writing for the stage artifacts. Fields are separated by
// commas; surrounding whitespace and double quotes are stripped. No embedded
// commas inside quoted fields.

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "leadkin/common.hpp"

namespace leadkin::csv {

struct Row {
    std::size_t line = 0;  // 1-based line number in the file
    std::vector<std::string> fields;
};

struct Table {
    std::vector<std::string> header;
    std::vector<Row> rows;

    [[nodiscard]] std::optional<std::size_t> column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        return std::nullopt;
    }
};

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    s = s.substr(b, e - b);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return std::string(s);
}

inline std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return out;
}

inline Table parse(std::istream& in) {
    Table t;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (!have_header) {
            t.header = split(line);
            have_header = true;
            continue;
        }
        t.rows.push_back(Row{lineno, split(line)});
    }
    return t;
}

inline Table read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
    return parse(in);
}

/// Strict finite double parse; rejects NaN/inf and trailing garbage.
inline std::optional<double> to_double(std::string_view s) {
    double v = 0.0;
    const auto* first = s.data();
    const auto* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
    return v;
}

/// Shortest round-trip decimal representation.
inline std::string fmt(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

/// Up to `digits` significant digits, for human-facing summaries.
inline std::string brief(double v, int digits = 10) {
    std::ostringstream os;
    os.precision(digits);
    os << v;
    return os.str();
}

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    template <typename... Ts>
    void row(const Ts&... cells) {
        bool first = true;
        ((emit(cells, first)), ...);
        out_ << '\n';
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << '\n';
    }

private:
    template <typename T>
    void emit(const T& v, bool& first) {
        if (!first) out_ << ',';
        first = false;
        if constexpr (std::is_floating_point_v<T>)
            out_ << fmt(static_cast<double>(v));
        else
            out_ << v;
    }

    std::ostream& out_;
};

} // namespace leadkin::csv
