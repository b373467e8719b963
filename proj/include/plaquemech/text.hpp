#pragma once

// Small text helpers shared by the file readers and writers: shortest
// round-trip number formatting, strict number parsing, and a header-checked
// CSV reader.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <filesystem>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "plaquemech/error.hpp"

namespace plaquemech::text {

/// Shortest representation that parses back to the identical double.
inline std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw Error(ErrorCode::IoFailure, "cannot format number");
  return std::string(buf, ptr);
}

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

/// Parses the whole field as a double; `what` names the field in the error.
inline double parse_double(std::string_view field, std::string_view what,
                           ErrorCode code = ErrorCode::InvariantViolation) {
  field = trim(field);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (field.empty() || ec != std::errc{} || ptr != field.data() + field.size()) {
    throw Error(code, std::string(what) + ": not a number '" + std::string(field) + "'");
  }
  return value;
}

template <typename Int>
Int parse_int(std::string_view field, std::string_view what,
              ErrorCode code = ErrorCode::InvariantViolation) {
  field = trim(field);
  Int value{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (field.empty() || ec != std::errc{} || ptr != field.data() + field.size()) {
    throw Error(code, std::string(what) + ": not an integer '" + std::string(field) + "'");
  }
  return value;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open for writing: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

/// Comma-separated table with a mandatory header row. Empty lines are skipped.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name, std::string_view file) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw Error(ErrorCode::InvariantViolation,
                std::string(file) + ": missing column '" + std::string(name) + "'");
  }
};

inline CsvTable parse_csv(std::string_view content, std::string_view file) {
  CsvTable table;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= content.size()) {
    auto end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(start, end - start);
    start = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) {
      if (end == content.size()) break;
      continue;
    }
    ++line_no;
    std::vector<std::string> fields;
    for (auto f : split(line, ',')) fields.emplace_back(trim(f));
    if (line_no == 1) {
      table.header = std::move(fields);
    } else {
      if (fields.size() != table.header.size()) {
        throw Error(ErrorCode::InvariantViolation,
                    std::string(file) + ": row " + std::to_string(line_no - 1) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(table.header.size()));
      }
      table.rows.push_back(std::move(fields));
    }
    if (end == content.size()) break;
  }
  if (table.header.empty()) {
    throw Error(ErrorCode::InvariantViolation, std::string(file) + ": missing header row");
  }
  return table;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  return parse_csv(read_file(path), path.filename().string());
}

}  // namespace plaquemech::text
