#pragma once

#include <optional>
#include <string>
#include <vector>

namespace deepdemand {

/// Comma-delimited table with a mandatory header row. Lines starting with '#'
/// are metadata comments and are skipped on read; writers use them to embed
/// the run's config hash. Fields must not contain commas or newlines.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;               // -1 when absent
  int require_column(const std::string& name) const;       // throws IoError
};

CsvTable read_csv(const std::string& path);

std::vector<std::string> split_fields(const std::string& line, char delim = ',');

std::string join_fields(const std::vector<std::string>& fields, char delim = ',');

/// Parses a field as double; empty field yields nullopt.
std::optional<double> parse_optional_double(const std::string& field);

}  // namespace deepdemand
