#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sqi {

/// Illusion query families the dispatcher distinguishes; Other is the total
/// fallback.
enum class QueryType {
  Alignment,
  Length,
  Size,
  Color,
  Count,
  Orientation,
  Curvature,
  Other,
};

inline constexpr int kQueryTypeCount = 8;

std::string_view to_string(QueryType type);
std::optional<QueryType> query_type_from_string(std::string_view name);

struct DispatchRule {
  QueryType type = QueryType::Other;
  std::vector<std::string> keywords;  // matched case-insensitively as substrings

  bool operator==(const DispatchRule&) const = default;
};

// Rule file grammar, one rule per line:
//   <query-type> := <keyword>[, <keyword>...]
// '#' lines are comments. First matching line wins, top to bottom.
struct DispatchTable {
  std::vector<DispatchRule> rules;

  static DispatchTable parse(std::string_view text);
  static DispatchTable load(const std::filesystem::path& path);
  static const DispatchTable& builtin();

  bool operator==(const DispatchTable&) const = default;
};

/// Total, deterministic, and invariant under case changes and surrounding
/// whitespace. Empty or unmatched text maps to Other.
QueryType classify_query(std::string_view question, const DispatchTable& table = DispatchTable::builtin());

/// The bundled keyword rules (embedded at build time from
/// data/default_dispatch.rules).
std::string_view default_dispatch_rules_text();

}  // namespace sqi
