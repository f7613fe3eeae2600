#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "sqi/core.hpp"
#include "sqi/dispatch.hpp"
#include "sqi/parser.hpp"

namespace sqi {

/// One declarative qualitative constraint. `applies_to` empty means the
/// constraint applies to every query type.
struct Constraint {
  std::string id;
  FailureMode target = FailureMode::MetricHallucination;
  std::string directive;
  std::vector<QueryType> applies_to;

  bool operator==(const Constraint&) const = default;
};

struct ConstraintSet {
  std::vector<Constraint> constraints;  // spec-file order, never sorted

  bool operator==(const ConstraintSet&) const = default;
};

/// Which protocol stage a failure mode's constraints render into.
Stage stage_for(FailureMode mode);
FailureMode failure_mode_for(Stage stage);  // AnswerFormat has none; throws ValidationError

struct StageDirective {
  Stage stage = Stage::Decomposition;
  std::string text;

  bool operator==(const StageDirective&) const = default;
};

/// Query-type specialization applied at compile time: extra directives are
/// appended inside their stage block, and the optional filter can exclude
/// base constraints beyond the applies_to match.
struct HeuristicProfile {
  QueryType query_type = QueryType::Other;
  std::vector<StageDirective> extra_directives;
  std::function<bool(const Constraint&)> filter;  // empty = accept all
};

/// Pure table lookup from query type to its built-in specialization; Other
/// yields an empty-extras profile.
HeuristicProfile heuristic_profile(QueryType type);

struct ProtocolSegment {
  Stage stage = Stage::Axioms;
  std::string text;  // rendered block, heading included

  bool operator==(const ProtocolSegment&) const = default;
};

/// Compiled prompt protocol: exactly one segment per stage, in stage order.
struct ConstraintProtocol {
  std::vector<ProtocolSegment> segments;

  const ProtocolSegment& segment(Stage stage) const;

  bool operator==(const ConstraintProtocol&) const = default;
};

struct PromptDocument {
  std::string system_text;
  std::string user_text;
  ImageRef image;

  bool operator==(const PromptDocument&) const = default;
};

// Constraint spec files use the shared table grammar with [constraint]
// sections and keys id, target, directive, applies_to (see tablefile.hpp).
ConstraintSet parse_constraint_spec(std::string_view source);
ConstraintSet load_constraint_spec(const std::filesystem::path& path);
std::string serialize_constraint_spec(const ConstraintSet& set);

/// The bundled default constraint set (embedded at build time from
/// data/default_constraints.spec).
const ConstraintSet& default_constraint_set();
std::string_view default_constraint_spec_text();

struct LintViolation {
  std::string constraint_id;
  std::string verb;

  bool operator==(const LintViolation&) const = default;
};

/// Rejects directives that instruct quantitative estimation. A denylist verb
/// (measure, count, estimate, calculate, compute) violates when it opens the
/// directive or a clause and no negation cue (not, never, avoid, without,
/// don't, cannot, no) appears within the three preceding words.
std::vector<LintViolation> lint_quantitative_verbs(const ConstraintSet& set);
std::vector<LintViolation> lint_directive(std::string_view id, std::string_view directive);

std::string stage_heading(Stage stage);

ConstraintProtocol compile_protocol(const ConstraintSet& set, const HeuristicProfile& profile,
                                    const ResponseGrammar& grammar = {});

/// Fuses the compiled protocol and the query into one prompt. The user text
/// carries the four stage blocks in protocol order and ends with the verbatim
/// question; when axioms_in_system is set the Axioms block is mirrored into
/// the system text as well.
PromptDocument render_prompt(const ConstraintProtocol& protocol, const IllusionQuery& query,
                             bool axioms_in_system = false);

inline constexpr std::string_view kQuestionPrefix = "QUESTION: ";

}  // namespace sqi
