#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sqi {

// Line-oriented table grammar shared by constraint specs and run configs:
//
//   # full-line comment
//   [section-name]
//   key = bare value up to end of line
//   key = "quoted value with \" \\ \n \t escapes"
//
// Keys match [A-Za-z_][A-Za-z0-9_-]*. Entries keep file order. Entries before
// the first section header are a SyntaxError.

struct TableEntry {
  std::string key;
  std::string value;
  int line = 0;
  int column = 0;
};

struct TableSection {
  std::string name;
  int line = 0;
  std::vector<TableEntry> entries;
};

std::vector<TableSection> parse_table_text(std::string_view text);
std::vector<TableSection> load_table_file(const std::filesystem::path& path);

/// Inverse of parse_table_text for round-tripping; values are quoted whenever
/// they contain characters the bare form cannot carry.
std::string write_table_text(const std::vector<TableSection>& sections);

std::string quote_table_value(std::string_view value);

}  // namespace sqi
