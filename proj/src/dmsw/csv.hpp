#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace dmsw::csv {

struct Row {
  std::size_t line = 0;  // 1-based line on which the record starts
  std::vector<std::string> fields;
};

// Comma-separated, double-quote escaped ("" inside quotes is a literal quote).
// Quoted fields may span lines. A trailing empty line is ignored.
std::vector<Row> parse(std::string_view text, const std::string& source_name);

std::vector<Row> read_file(const std::string& path);

// Parses the header row and checks it against `expected` exactly.
// Returns the data rows.
std::vector<Row> read_table(const std::string& path, const std::vector<std::string>& expected_header);

std::string escape(std::string_view field);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

// Shortest round-tripping decimal form of a double.
std::string format_double(double value);

double parse_double(const std::string& text, const std::string& where);
long long parse_int(const std::string& text, const std::string& where);

}  // namespace dmsw::csv
