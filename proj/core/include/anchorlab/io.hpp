#pragma once

// Text helpers shared by every file format: shortest round-trip number
// formatting and a small CSV table reader/writer.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace anchorlab {

// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);
double parse_double(std::string_view s);

std::vector<std::string> split(std::string_view line, char sep);
std::string trim(std::string_view s);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name; throws MissingArtifactError when absent.
  std::size_t column(std::string_view name) const;
  double number(std::size_t row, std::string_view name) const;
  const std::string& text(std::size_t row, std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

// Writes header + rows, replacing the file.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

std::string read_text(const std::filesystem::path& path);

}  // namespace anchorlab
