#include "deepdemand/csv.hpp"

#include <algorithm>
#include <sstream>

#include "deepdemand/common.hpp"

namespace deepdemand {

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

int CsvTable::require_column(const std::string& name) const {
  const int idx = column(name);
  if (idx < 0) throw IoError("missing required column '" + name + "'");
  return idx;
}

std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == delim) {
      fields.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(current);
  return fields;
}

std::string join_fields(const std::vector<std::string>& fields, char delim) {
  std::string line;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) line.push_back(delim);
    line += fields[i];
  }
  return line;
}

CsvTable read_csv(const std::string& path) {
  const std::string content = read_text_file(path);
  CsvTable table;
  std::istringstream in(content);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_fields(line);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw IoError(path + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(table.header.size()) + " fields, got " +
                    std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  if (table.header.empty()) throw IoError(path + ": missing header row");
  return table;
}

std::optional<double> parse_optional_double(const std::string& field) {
  if (field.empty()) return std::nullopt;
  return parse_double(field);
}

}  // namespace deepdemand
