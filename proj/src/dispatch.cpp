#include "sqi/dispatch.hpp"

#include <fstream>
#include <sstream>

#include "sqi/constraints.hpp"
#include "sqi/errors.hpp"
#include "sqi/strings.hpp"

namespace sqi {

std::string_view to_string(QueryType type) {
  switch (type) {
    case QueryType::Alignment:
      return "alignment";
    case QueryType::Length:
      return "length";
    case QueryType::Size:
      return "size";
    case QueryType::Color:
      return "color";
    case QueryType::Count:
      return "count";
    case QueryType::Orientation:
      return "orientation";
    case QueryType::Curvature:
      return "curvature";
    case QueryType::Other:
      return "other";
  }
  return "unknown";
}

std::optional<QueryType> query_type_from_string(std::string_view name) {
  if (name == "alignment") return QueryType::Alignment;
  if (name == "length") return QueryType::Length;
  if (name == "size") return QueryType::Size;
  if (name == "color") return QueryType::Color;
  if (name == "count") return QueryType::Count;
  if (name == "orientation") return QueryType::Orientation;
  if (name == "curvature") return QueryType::Curvature;
  if (name == "other") return QueryType::Other;
  return std::nullopt;
}

DispatchTable DispatchTable::parse(std::string_view text) {
  DispatchTable table;
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
    if (!stripped.empty() && stripped.front() != '#') {
      const std::size_t sep = stripped.find(":=");
      if (sep == std::string_view::npos) {
        throw SyntaxError("dispatch rule missing ':='", line_no, 1);
      }
      const std::string_view name = trim(stripped.substr(0, sep));
      const auto type = query_type_from_string(name);
      if (!type) {
        throw ValidationError("unknown query type '" + std::string(name) + "' on line " +
                              std::to_string(line_no));
      }
      DispatchRule rule;
      rule.type = *type;
      std::string_view rest = stripped.substr(sep + 2);
      while (!rest.empty()) {
        const std::size_t comma = rest.find(',');
        const std::string_view keyword =
            trim(comma == std::string_view::npos ? rest : rest.substr(0, comma));
        if (keyword.empty()) {
          throw SyntaxError("empty keyword in dispatch rule", line_no, 1);
        }
        rule.keywords.push_back(to_lower(keyword));
        if (comma == std::string_view::npos) break;
        rest = rest.substr(comma + 1);
      }
      if (rule.keywords.empty()) {
        throw SyntaxError("dispatch rule has no keywords", line_no, 1);
      }
      table.rules.push_back(std::move(rule));
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return table;
}

DispatchTable DispatchTable::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read dispatch rules: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

const DispatchTable& DispatchTable::builtin() {
  static const DispatchTable table = DispatchTable::parse(default_dispatch_rules_text());
  return table;
}

QueryType classify_query(std::string_view question, const DispatchTable& table) {
  const std::string lowered = to_lower(trim(question));
  for (const auto& rule : table.rules) {
    for (const auto& keyword : rule.keywords) {
      if (lowered.find(keyword) != std::string::npos) {
        return rule.type;
      }
    }
  }
  return QueryType::Other;
}

HeuristicProfile heuristic_profile(QueryType type) {
  HeuristicProfile profile;
  profile.query_type = type;
  switch (type) {
    case QueryType::Alignment:
      profile.extra_directives.push_back(
          {Stage::Decomposition,
           "Check the directional consistency of each target segment from end to end, and "
           "suppress background grids or hatching when judging direction."});
      profile.extra_directives.push_back(
          {Stage::Counterfactual,
           "Mentally extend each segment across any gap or occluder; if the extensions meet, "
           "report alignment even when the gap suggests otherwise."});
      break;
    case QueryType::Color:
      profile.extra_directives.push_back(
          {Stage::Decomposition,
           "Apply strict isolation of target surfaces: compare the named surfaces alone, "
           "excluding surrounding shading, gradients, and cast shadows."});
      break;
    default:
      break;  // base constraints only
  }
  return profile;
}

}  // namespace sqi
