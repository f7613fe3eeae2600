#include "sqi/constraints.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "sqi/errors.hpp"
#include "sqi/strings.hpp"
#include "sqi/tablefile.hpp"

namespace sqi {

namespace {

constexpr std::string_view kSystemPreamble =
    "You are a careful visual analyst. An image and a question follow, together with "
    "constraint blocks you must obey exactly. Judge what is actually present, not what "
    "the arrangement suggests at a glance.";

const std::array<std::string_view, 5> kQuantitativeVerbs = {
    "measure", "count", "estimate", "calculate", "compute"};

const std::set<std::string_view> kClauseOpeners = {
    "then", "also", "always", "now", "first", "next", "please"};

const std::set<std::string_view> kNegationCues = {
    "not", "never", "avoid", "without", "don't", "dont", "cannot", "no"};

bool matches_quantitative_verb(std::string_view word) {
  static const std::array<std::string_view, 6> kSuffixes = {"", "s", "d", "es", "ed", "ing"};
  for (std::string_view verb : kQuantitativeVerbs) {
    if (word.substr(0, verb.size()) != verb) continue;
    const std::string_view rest = word.substr(verb.size());
    for (std::string_view suffix : kSuffixes) {
      if (rest == suffix) return true;
    }
  }
  return false;
}

struct DirectiveWord {
  std::string text;       // lowercase
  bool opens_clause = false;
};

std::vector<DirectiveWord> split_words(std::string_view directive) {
  std::vector<DirectiveWord> words;
  bool clause_boundary = true;  // directive start opens a clause
  std::size_t i = 0;
  while (i < directive.size()) {
    const char c = directive[i];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '\'') {
      std::size_t end = i;
      while (end < directive.size() &&
             (std::isalpha(static_cast<unsigned char>(directive[end])) ||
              directive[end] == '\'')) {
        ++end;
      }
      DirectiveWord word;
      word.text = to_lower(directive.substr(i, end - i));
      word.opens_clause = clause_boundary ||
                          (!words.empty() && kClauseOpeners.count(words.back().text) > 0);
      clause_boundary = false;
      words.push_back(std::move(word));
      i = end;
    } else {
      if (c == '.' || c == ';' || c == ':' || c == '!' || c == '?') {
        clause_boundary = true;
      }
      ++i;
    }
  }
  return words;
}

bool negated_nearby(const std::vector<DirectiveWord>& words, std::size_t index) {
  const std::size_t lookback = index >= 3 ? index - 3 : 0;
  for (std::size_t j = lookback; j < index; ++j) {
    if (kNegationCues.count(words[j].text) > 0) return true;
  }
  return false;
}

}  // namespace

Stage stage_for(FailureMode mode) {
  switch (mode) {
    case FailureMode::MetricHallucination:
      return Stage::Axioms;
    case FailureMode::BackgroundInterference:
      return Stage::Decomposition;
    case FailureMode::ConfirmationBias:
      return Stage::Counterfactual;
  }
  throw ValidationError("unknown failure mode");
}

FailureMode failure_mode_for(Stage stage) {
  switch (stage) {
    case Stage::Axioms:
      return FailureMode::MetricHallucination;
    case Stage::Decomposition:
      return FailureMode::BackgroundInterference;
    case Stage::Counterfactual:
      return FailureMode::ConfirmationBias;
    case Stage::AnswerFormat:
      break;
  }
  throw ValidationError("stage has no failure mode: " + std::string(to_string(stage)));
}

std::vector<LintViolation> lint_directive(std::string_view id, std::string_view directive) {
  std::vector<LintViolation> violations;
  const auto words = split_words(directive);
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (!words[i].opens_clause) continue;
    if (!matches_quantitative_verb(words[i].text)) continue;
    if (negated_nearby(words, i)) continue;
    violations.push_back(LintViolation{std::string(id), words[i].text});
  }
  return violations;
}

std::vector<LintViolation> lint_quantitative_verbs(const ConstraintSet& set) {
  std::vector<LintViolation> violations;
  for (const auto& constraint : set.constraints) {
    auto found = lint_directive(constraint.id, constraint.directive);
    violations.insert(violations.end(), found.begin(), found.end());
  }
  return violations;
}

namespace {

std::vector<QueryType> parse_applies_to(std::string_view value, int line_no) {
  std::vector<QueryType> types;
  std::string_view rest = value;
  while (!rest.empty()) {
    const std::size_t comma = rest.find(',');
    const std::string_view name =
        trim(comma == std::string_view::npos ? rest : rest.substr(0, comma));
    const auto type = query_type_from_string(name);
    if (!type) {
      throw ValidationError("unknown query-type filter '" + std::string(name) + "' on line " +
                            std::to_string(line_no));
    }
    types.push_back(*type);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return types;
}

void throw_lint(const std::vector<LintViolation>& violations) {
  if (violations.empty()) return;
  std::string message = "quantitative-verb lint rejected";
  for (const auto& v : violations) {
    message += " [" + v.constraint_id + ": '" + v.verb + "']";
  }
  throw ValidationError(message);
}

}  // namespace

ConstraintSet parse_constraint_spec(std::string_view source) {
  const auto sections = parse_table_text(source);
  ConstraintSet set;
  std::set<std::string> seen_ids;
  for (const auto& section : sections) {
    if (section.name != "constraint") {
      throw ValidationError("unknown section [" + section.name + "] on line " +
                            std::to_string(section.line));
    }
    Constraint constraint;
    bool has_id = false;
    bool has_target = false;
    bool has_directive = false;
    for (const auto& entry : section.entries) {
      if (entry.key == "id") {
        if (has_id) {
          throw ValidationError("duplicate key 'id' on line " + std::to_string(entry.line));
        }
        constraint.id = entry.value;
        has_id = true;
      } else if (entry.key == "target") {
        if (has_target) {
          throw ValidationError("duplicate key 'target' on line " + std::to_string(entry.line));
        }
        const auto mode = failure_mode_from_string(entry.value);
        if (!mode) {
          throw ValidationError("unknown failure mode '" + entry.value + "' on line " +
                                std::to_string(entry.line));
        }
        constraint.target = *mode;
        has_target = true;
      } else if (entry.key == "directive") {
        if (has_directive) {
          throw ValidationError("duplicate key 'directive' on line " +
                                std::to_string(entry.line));
        }
        constraint.directive = entry.value;
        has_directive = true;
      } else if (entry.key == "applies_to") {
        constraint.applies_to = parse_applies_to(entry.value, entry.line);
      } else {
        throw ValidationError("unknown key '" + entry.key + "' on line " +
                              std::to_string(entry.line));
      }
    }
    if (!has_id || constraint.id.empty()) {
      throw ValidationError("constraint section on line " + std::to_string(section.line) +
                            " is missing a non-empty id");
    }
    if (!has_target) {
      throw ValidationError("constraint '" + constraint.id + "' is missing a target");
    }
    if (!has_directive || trim(constraint.directive).empty()) {
      throw ValidationError("constraint '" + constraint.id + "' has an empty directive");
    }
    if (!seen_ids.insert(constraint.id).second) {
      throw ValidationError("duplicate constraint id '" + constraint.id + "'");
    }
    set.constraints.push_back(std::move(constraint));
  }
  if (set.constraints.empty()) {
    throw ValidationError("constraint spec declares no constraints");
  }
  throw_lint(lint_quantitative_verbs(set));
  return set;
}

ConstraintSet load_constraint_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read constraint spec: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_constraint_spec(buffer.str());
}

const ConstraintSet& default_constraint_set() {
  static const ConstraintSet set = parse_constraint_spec(default_constraint_spec_text());
  return set;
}

std::string serialize_constraint_spec(const ConstraintSet& set) {
  std::vector<TableSection> sections;
  sections.reserve(set.constraints.size());
  for (const auto& constraint : set.constraints) {
    TableSection section;
    section.name = "constraint";
    section.entries.push_back({"id", constraint.id, 0, 0});
    section.entries.push_back({"target", std::string(to_string(constraint.target)), 0, 0});
    if (!constraint.applies_to.empty()) {
      std::string joined;
      for (const auto type : constraint.applies_to) {
        if (!joined.empty()) joined += ", ";
        joined += std::string(to_string(type));
      }
      section.entries.push_back({"applies_to", std::move(joined), 0, 0});
    }
    section.entries.push_back({"directive", constraint.directive, 0, 0});
    sections.push_back(std::move(section));
  }
  return write_table_text(sections);
}

std::string stage_heading(Stage stage) {
  switch (stage) {
    case Stage::Axioms:
      return "=== AXIOMS ===";
    case Stage::Decomposition:
      return "=== SCENE DECOMPOSITION ===";
    case Stage::Counterfactual:
      return "=== COUNTERFACTUAL CHECK ===";
    case Stage::AnswerFormat:
      return "=== ANSWER FORMAT ===";
  }
  throw ValidationError("unknown stage");
}

const ProtocolSegment& ConstraintProtocol::segment(Stage stage) const {
  for (const auto& seg : segments) {
    if (seg.stage == stage) return seg;
  }
  throw ValidationError("protocol has no segment for stage " + std::string(to_string(stage)));
}

ConstraintProtocol compile_protocol(const ConstraintSet& set, const HeuristicProfile& profile,
                                    const ResponseGrammar& grammar) {
  throw_lint(lint_quantitative_verbs(set));
  for (const auto& extra : profile.extra_directives) {
    if (extra.stage == Stage::AnswerFormat) {
      throw ValidationError("profile directives cannot target the answer-format stage");
    }
    throw_lint(lint_directive("profile-extra", extra.text));
  }

  const auto applies = [&profile](const Constraint& constraint) {
    if (!constraint.applies_to.empty() &&
        std::find(constraint.applies_to.begin(), constraint.applies_to.end(),
                  profile.query_type) == constraint.applies_to.end()) {
      return false;
    }
    return !profile.filter || profile.filter(constraint);
  };

  ConstraintProtocol protocol;
  for (const Stage stage : {Stage::Axioms, Stage::Decomposition, Stage::Counterfactual}) {
    const FailureMode mode = failure_mode_for(stage);
    std::string text = stage_heading(stage);
    int directives = 0;
    for (const auto& constraint : set.constraints) {
      if (constraint.target != mode || !applies(constraint)) continue;
      text += "\n- " + constraint.directive;
      ++directives;
    }
    for (const auto& extra : profile.extra_directives) {
      if (extra.stage != stage) continue;
      text += "\n- " + extra.text;
      ++directives;
    }
    if (directives == 0) {
      throw EmptyStageError("stage " + std::string(to_string(stage)) +
                            " would render empty after filtering");
    }
    protocol.segments.push_back(ProtocolSegment{stage, std::move(text)});
  }
  protocol.segments.push_back(ProtocolSegment{
      Stage::AnswerFormat, stage_heading(Stage::AnswerFormat) + "\n" + answer_format_block(grammar)});
  return protocol;
}

PromptDocument render_prompt(const ConstraintProtocol& protocol, const IllusionQuery& query,
                             bool axioms_in_system) {
  PromptDocument doc;
  doc.system_text = std::string(kSystemPreamble);
  if (axioms_in_system) {
    doc.system_text += "\n\n" + protocol.segment(Stage::Axioms).text;
  }
  for (const auto& segment : protocol.segments) {
    if (!doc.user_text.empty()) doc.user_text += "\n\n";
    doc.user_text += segment.text;
  }
  doc.user_text += "\n\n";
  doc.user_text += kQuestionPrefix;
  doc.user_text += query.question;
  doc.image = query.image;
  return doc;
}

}  // namespace sqi
