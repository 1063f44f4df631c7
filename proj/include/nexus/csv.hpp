#pragma once

#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nexus::csv {

struct Row {
    std::size_t line = 0;  // 1-based line number in the source
    std::vector<std::string> fields;
};

// Reads a header-led CSV table. Blank lines and lines starting with '#' are
// skipped, fields are trimmed, and the header must equal `expected_header`
// exactly. Every data row must have as many fields as the header.
std::vector<Row> read_table(std::istream& in, std::span<const std::string_view> expected_header);

std::string trim(std::string_view s);
std::vector<std::string> split_line(std::string_view line);

double to_double(const std::string& s, std::size_t line, std::string_view column);
long long to_int(const std::string& s, std::size_t line, std::string_view column);

// 10 significant digits, the canonical float format of every emitted table.
std::string fmt(double v);

void write_row(std::ostream& out, std::span<const std::string> fields);
void write_header(std::ostream& out, std::span<const std::string_view> header);

[[noreturn]] void fail(std::size_t line, const std::string& message);

}  // namespace nexus::csv
