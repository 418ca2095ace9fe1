#include "dmsw/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dmsw/error.hpp"

namespace dmsw::csv {

std::vector<Row> parse(std::string_view text, const std::string& source_name) {
  std::vector<Row> rows;
  Row current;
  std::string field;
  std::size_t line = 1;
  bool in_quotes = false;
  bool field_started = false;
  bool row_open = false;
  current.line = 1;

  auto end_field = [&] {
    current.fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(current));
    current = Row{};
    row_open = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (!row_open) {
      current.line = line;
      row_open = true;
    }
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started && !field.empty()) {
          throw DataError(source_name + ":" + std::to_string(line) + ": malformed row: stray quote");
        }
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        ++line;
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes) {
    throw DataError(source_name + ":" + std::to_string(current.line) + ": malformed row: unterminated quote");
  }
  if (row_open && (field_started || !current.fields.empty())) end_row();
  return rows;
}

std::vector<Row> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path);
}

std::vector<Row> read_table(const std::string& path, const std::vector<std::string>& expected_header) {
  auto rows = read_file(path);
  if (rows.empty()) throw DataError(path + ": missing header");
  if (rows.front().fields != expected_header) {
    std::string want;
    for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
    throw DataError(path + ":1: malformed header, expected `" + want + "`");
  }
  rows.erase(rows.begin());
  for (const auto& row : rows) {
    if (row.fields.size() != expected_header.size()) {
      throw DataError(path + ":" + std::to_string(row.line) + ": malformed row: expected " +
                      std::to_string(expected_header.size()) + " fields, got " +
                      std::to_string(row.fields.size()));
    }
  }
  return rows;
}

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << escape(fields[i]);
  }
  out << '\n';
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

double parse_double(const std::string& text, const std::string& where) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last || text.empty()) {
    throw DataError(where + ": malformed row: not a number `" + text + "`");
  }
  return value;
}

long long parse_int(const std::string& text, const std::string& where) {
  long long value = 0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last || text.empty()) {
    throw DataError(where + ": malformed row: not an integer `" + text + "`");
  }
  return value;
}

}  // namespace dmsw::csv
