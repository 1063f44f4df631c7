#include "nexus/csv.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "nexus/error.hpp"

namespace nexus::csv {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_line(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

void fail(std::size_t line, const std::string& message) {
    throw InputError("line " + std::to_string(line) + ": " + message);
}

std::vector<Row> read_table(std::istream& in, std::span<const std::string_view> expected_header) {
    std::vector<Row> rows;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        auto fields = split_line(t);
        if (!have_header) {
            bool ok = fields.size() == expected_header.size();
            for (std::size_t i = 0; ok && i < fields.size(); ++i) ok = fields[i] == expected_header[i];
            if (!ok) {
                std::string want;
                for (std::size_t i = 0; i < expected_header.size(); ++i) {
                    if (i) want += ',';
                    want += expected_header[i];
                }
                fail(lineno, "expected header '" + want + "'");
            }
            have_header = true;
            continue;
        }
        if (fields.size() != expected_header.size()) {
            fail(lineno, "expected " + std::to_string(expected_header.size()) + " fields, got " +
                             std::to_string(fields.size()));
        }
        rows.push_back(Row{lineno, std::move(fields)});
    }
    if (!have_header) throw InputError("missing header row");
    return rows;
}

double to_double(const std::string& s, std::size_t line, std::string_view column) {
    if (s.empty()) fail(line, "empty value in column " + std::string(column));
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) {
        fail(line, "invalid number '" + s + "' in column " + std::string(column));
    }
    return v;
}

long long to_int(const std::string& s, std::size_t line, std::string_view column) {
    if (s.empty()) fail(line, "empty value in column " + std::string(column));
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || errno == ERANGE) {
        fail(line, "invalid integer '" + s + "' in column " + std::string(column));
    }
    return v;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v == 0.0 ? 0.0 : v);
    return buf;
}

void write_row(std::ostream& out, std::span<const std::string> fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        const auto& f = fields[i];
        if (f.find_first_of(",\"") != std::string::npos) {
            out << '"';
            for (char c : f) {
                if (c == '"') out << '"';
                out << c;
            }
            out << '"';
        } else {
            out << f;
        }
    }
    out << '\n';
}

void write_header(std::ostream& out, std::span<const std::string_view> header) {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out << ',';
        out << header[i];
    }
    out << '\n';
}

}  // namespace nexus::csv
