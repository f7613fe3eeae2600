#include "sqi/tablefile.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "sqi/errors.hpp"
#include "sqi/strings.hpp"

namespace sqi {

namespace {

bool is_key_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) != 0 || c == '_';
}

bool is_key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '-';
}

// Parses a double-quoted value starting at `pos` (the quote). Returns the
// decoded string and leaves `pos` one past the closing quote.
std::string parse_quoted(std::string_view line, std::size_t& pos, int line_no) {
  std::string out;
  std::size_t i = pos + 1;
  while (i < line.size()) {
    const char c = line[i];
    if (c == '"') {
      pos = i + 1;
      return out;
    }
    if (c == '\\') {
      if (i + 1 >= line.size()) {
        throw SyntaxError("dangling escape in quoted value", line_no, static_cast<int>(i + 1));
      }
      const char esc = line[i + 1];
      switch (esc) {
        case '"':
          out.push_back('"');
          break;
        case '\\':
          out.push_back('\\');
          break;
        case 'n':
          out.push_back('\n');
          break;
        case 't':
          out.push_back('\t');
          break;
        default:
          throw SyntaxError(std::string("unknown escape \\") + esc, line_no,
                            static_cast<int>(i + 2));
      }
      i += 2;
      continue;
    }
    out.push_back(c);
    ++i;
  }
  throw SyntaxError("unterminated quoted value", line_no, static_cast<int>(pos + 1));
}

bool needs_quoting(std::string_view value) {
  if (value.empty()) return true;
  if (std::isspace(static_cast<unsigned char>(value.front())) ||
      std::isspace(static_cast<unsigned char>(value.back()))) {
    return true;
  }
  return value.find_first_of("\"\\\n\r\t#") != std::string_view::npos ||
         value.front() == '[';
}

}  // namespace

std::vector<TableSection> parse_table_text(std::string_view text) {
  std::vector<TableSection> sections;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find('\n', start);
    std::string_view line = end == std::string_view::npos
                                ? text.substr(start)
                                : text.substr(start, end - start);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    const std::string_view stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') {
      // blank or comment
    } else if (stripped.front() == '[') {
      if (stripped.back() != ']') {
        throw SyntaxError("section header missing closing ']'", line_no,
                          static_cast<int>(line.find('[') + 1));
      }
      const std::string_view name = trim(stripped.substr(1, stripped.size() - 2));
      if (name.empty()) {
        throw SyntaxError("empty section name", line_no, static_cast<int>(line.find('[') + 1));
      }
      sections.push_back(TableSection{std::string(name), line_no, {}});
    } else {
      std::size_t pos = line.find_first_not_of(" \t");
      const int key_col = static_cast<int>(pos + 1);
      if (!is_key_start(line[pos])) {
        throw SyntaxError("expected key or section header", line_no, key_col);
      }
      std::size_t key_end = pos;
      while (key_end < line.size() && is_key_char(line[key_end])) ++key_end;
      const std::string key(line.substr(pos, key_end - pos));

      std::size_t eq = line.find_first_not_of(" \t", key_end);
      if (eq == std::string_view::npos || line[eq] != '=') {
        throw SyntaxError("expected '=' after key '" + key + "'", line_no,
                          static_cast<int>(key_end + 1));
      }
      std::size_t value_pos = line.find_first_not_of(" \t", eq + 1);
      std::string value;
      if (value_pos == std::string_view::npos) {
        value.clear();
      } else if (line[value_pos] == '"') {
        value = parse_quoted(line, value_pos, line_no);
        const std::string_view rest = trim(line.substr(value_pos));
        if (!rest.empty() && rest.front() != '#') {
          throw SyntaxError("trailing characters after quoted value", line_no,
                            static_cast<int>(value_pos + 1));
        }
      } else {
        value = std::string(trim(line.substr(value_pos)));
      }

      if (sections.empty()) {
        throw SyntaxError("entry outside any [section]", line_no, key_col);
      }
      sections.back().entries.push_back(
          TableEntry{key, std::move(value), line_no, key_col});
    }

    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return sections;
}

std::vector<TableSection> load_table_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read file: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_table_text(buffer.str());
}

std::string quote_table_value(std::string_view value) {
  std::string out = "\"";
  for (char c : value) {
    switch (c) {
      case '"':
        out += "\\\"";
        break;
      case '\\':
        out += "\\\\";
        break;
      case '\n':
        out += "\\n";
        break;
      case '\t':
        out += "\\t";
        break;
      default:
        out.push_back(c);
    }
  }
  out.push_back('"');
  return out;
}

std::string write_table_text(const std::vector<TableSection>& sections) {
  std::string out;
  bool first = true;
  for (const auto& section : sections) {
    if (!first) out.push_back('\n');
    first = false;
    out += "[" + section.name + "]\n";
    for (const auto& entry : section.entries) {
      out += entry.key;
      out += " = ";
      out += needs_quoting(entry.value) ? quote_table_value(entry.value) : entry.value;
      out.push_back('\n');
    }
  }
  return out;
}

}  // namespace sqi
