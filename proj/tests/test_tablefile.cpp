#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "sqi/errors.hpp"
#include "sqi/tablefile.hpp"

using namespace sqi;

namespace {

// Compares the logical content only; line/column positions are ignored.
bool same_content(const std::vector<TableSection>& lhs, const std::vector<TableSection>& rhs) {
  if (lhs.size() != rhs.size()) return false;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    if (lhs[i].name != rhs[i].name) return false;
    if (lhs[i].entries.size() != rhs[i].entries.size()) return false;
    for (std::size_t j = 0; j < lhs[i].entries.size(); ++j) {
      if (lhs[i].entries[j].key != rhs[i].entries[j].key) return false;
      if (lhs[i].entries[j].value != rhs[i].entries[j].value) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("table parser handles sections, bare and quoted values, comments") {
  const auto sections = parse_table_text(
      "# leading comment\n"
      "\n"
      "[alpha]\n"
      "plain = bare value with spaces\n"
      "quoted = \"a \\\"b\\\" \\\\ c\\nd\\te\"  # trailing comment\n"
      "empty =\n"
      "[beta]\n"
      "under_score-key = x\r\n");
  REQUIRE(sections.size() == 2);
  CHECK(sections[0].name == "alpha");
  REQUIRE(sections[0].entries.size() == 3);
  CHECK(sections[0].entries[0].key == "plain");
  CHECK(sections[0].entries[0].value == "bare value with spaces");
  CHECK(sections[0].entries[1].value == "a \"b\" \\ c\nd\te");
  CHECK(sections[0].entries[2].value.empty());
  CHECK(sections[1].name == "beta");
  CHECK(sections[1].entries[0].key == "under_score-key");
  CHECK(sections[1].entries[0].value == "x");  // CRLF line ending stripped
}

TEST_CASE("table parser records line numbers") {
  const auto sections = parse_table_text("[s]\nkey = v\n\nother = w\n");
  CHECK(sections[0].line == 1);
  CHECK(sections[0].entries[0].line == 2);
  CHECK(sections[0].entries[1].line == 4);
}

TEST_CASE("table parser rejects malformed input with positions") {
  CHECK_THROWS_AS(parse_table_text("key = value\n"), SyntaxError);  // before any section
  CHECK_THROWS_AS(parse_table_text("[s]\nkey = \"unterminated\n"), SyntaxError);
  CHECK_THROWS_AS(parse_table_text("[s]\nkey = \"bad \\q escape\"\n"), SyntaxError);
  CHECK_THROWS_AS(parse_table_text("[s]\nkey value\n"), SyntaxError);        // missing '='
  CHECK_THROWS_AS(parse_table_text("[s\nkey = v\n"), SyntaxError);           // missing ']'
  CHECK_THROWS_AS(parse_table_text("[]\n"), SyntaxError);                    // empty name
  CHECK_THROWS_AS(parse_table_text("[s]\nkey = \"v\" junk\n"), SyntaxError); // trailing junk
  CHECK_THROWS_AS(parse_table_text("[s]\n9key = v\n"), SyntaxError);         // bad key start

  try {
    parse_table_text("[s]\nkey = \"unterminated\n");
    FAIL("expected SyntaxError");
  } catch (const SyntaxError& e) {
    CHECK(e.line() == 2);
    CHECK(e.column() > 0);
  }
}

TEST_CASE("write_table_text round-trips hostile values") {
  std::vector<TableSection> sections(1);
  sections[0].name = "s";
  const std::vector<std::string> values = {
      "",
      " leading space",
      "trailing space ",
      "quote \" inside",
      "back\\slash",
      "new\nline",
      "tab\there",
      "carriage\rreturn",
      "# looks like a comment",
      "[looks like a section]",
      "plain",
  };
  for (std::size_t i = 0; i < values.size(); ++i) {
    sections[0].entries.push_back({"k" + std::to_string(i), values[i], 0, 0});
  }
  const auto reparsed = parse_table_text(write_table_text(sections));
  CHECK(same_content(sections, reparsed));
}

TEST_CASE("write/parse round-trip property over random values") {
  std::mt19937 rng(20240815);
  const std::string alphabet = "ab \"\\\n\t\r#[]=xyz_-.";
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::uniform_int_distribution<int> length(0, 24);

  for (int round = 0; round < 250; ++round) {
    std::vector<TableSection> sections(1);
    sections[0].name = "fuzz";
    for (int entry = 0; entry < 4; ++entry) {
      std::string value;
      const int n = length(rng);
      for (int i = 0; i < n; ++i) value.push_back(alphabet[pick(rng)]);
      sections[0].entries.push_back({"key" + std::to_string(entry), value, 0, 0});
    }
    const auto reparsed = parse_table_text(write_table_text(sections));
    REQUIRE(same_content(sections, reparsed));
  }
}
