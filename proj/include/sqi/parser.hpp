#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "sqi/core.hpp"

namespace sqi {

/// Output grammar the prompt mandates and the parser reads back. The
/// AnswerFormat prompt block is generated from this struct so the two can
/// never drift.
struct ResponseGrammar {
  std::string decomposition_marker = "DECOMPOSITION:";
  std::string initial_marker = "INITIAL:";
  std::string counterfactual_marker = "COUNTERFACTUAL:";
  std::string final_marker = "FINAL:";
  std::string yes_token = "YES";
  std::string no_token = "NO";
  // How far back from the end of the text the recovery rule searches for a
  // standalone yes/no token.
  std::size_t recovery_window = 200;
};

// Parse rules, applied in order; the parser never throws on arbitrary text.
//  Clean:     all four markers occur in order (first occurrence after the
//             previous marker), every section body is non-empty after
//             trimming, and the FINAL body is exactly a yes/no token
//             (case-insensitive, trailing '.' or '!' ignored).
//  Recovered: otherwise, the last standalone yes/no word within the final
//             recovery_window characters decides the verdict; whatever
//             sections were found are kept best-effort.
//  Unparseable: no verdict found; the item scores as incorrect.
ReasoningTrace parse_response(std::string_view text, const ResponseGrammar& grammar = {});

/// The fallback rule alone: last standalone yes/no token in the final window.
std::optional<Answer> recover_answer(std::string_view text, const ResponseGrammar& grammar = {});

/// Strict FINAL-body check: exactly one yes/no token, modulo surrounding
/// whitespace and a trailing '.' or '!'.
std::optional<Answer> strict_final_answer(std::string_view body, const ResponseGrammar& grammar = {});

/// Canonical text form such that parse_response(render_trace(t)) == t.
/// Requires a Clean trace whose section bodies are trimmed and marker-free;
/// throws RenderError otherwise.
std::string render_trace(const ReasoningTrace& trace, const ResponseGrammar& grammar = {});

/// Prompt block content mandating the response grammar.
std::string answer_format_block(const ResponseGrammar& grammar = {});

/// Stricter block appended to retry prompts after a parse failure.
std::string format_reminder_block(const ResponseGrammar& grammar = {});

}  // namespace sqi
