#include "sqi/parser.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "sqi/errors.hpp"
#include "sqi/strings.hpp"

namespace sqi {

namespace {

bool is_word_char(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) != 0;
}

bool iequals(std::string_view lhs, std::string_view rhs) {
  return lhs.size() == rhs.size() &&
         std::equal(lhs.begin(), lhs.end(), rhs.begin(), rhs.end(), [](char a, char b) {
           return std::tolower(static_cast<unsigned char>(a)) ==
                  std::tolower(static_cast<unsigned char>(b));
         });
}

std::optional<Answer> token_to_answer(std::string_view token, const ResponseGrammar& grammar) {
  if (iequals(token, grammar.yes_token)) return Answer::Yes;
  if (iequals(token, grammar.no_token)) return Answer::No;
  return std::nullopt;
}

struct SectionSplit {
  std::array<std::string_view, 4> bodies;  // decomposition, initial, counterfactual, final
  std::array<bool, 4> found{};
  bool in_order = false;
};

SectionSplit split_sections(std::string_view text, const ResponseGrammar& grammar) {
  const std::array<std::string_view, 4> markers = {
      grammar.decomposition_marker,
      grammar.initial_marker,
      grammar.counterfactual_marker,
      grammar.final_marker,
  };
  SectionSplit split;
  std::array<std::size_t, 4> marker_pos{};
  // Each marker is matched at its first occurrence after the previous one, so
  // bodies that echo a later marker split deterministically.
  std::size_t search_from = 0;
  bool all = true;
  for (std::size_t i = 0; i < markers.size(); ++i) {
    const std::size_t pos = text.find(markers[i], search_from);
    if (pos == std::string_view::npos) {
      all = false;
      continue;
    }
    split.found[i] = true;
    marker_pos[i] = pos;
    search_from = pos + markers[i].size();
  }
  for (std::size_t i = 0; i < markers.size(); ++i) {
    if (!split.found[i]) continue;
    const std::size_t start = marker_pos[i] + markers[i].size();
    std::size_t end = text.size();
    for (std::size_t j = i + 1; j < markers.size(); ++j) {
      if (split.found[j]) {
        end = marker_pos[j];
        break;
      }
    }
    split.bodies[i] = text.substr(start, end - start);
  }
  split.in_order = all;
  return split;
}

}  // namespace

std::optional<Answer> strict_final_answer(std::string_view body, const ResponseGrammar& grammar) {
  std::string_view token = trim(body);
  while (!token.empty() && (token.back() == '.' || token.back() == '!')) {
    token.remove_suffix(1);
  }
  token = trim(token);
  return token_to_answer(token, grammar);
}

std::optional<Answer> recover_answer(std::string_view text, const ResponseGrammar& grammar) {
  const std::size_t window_start =
      text.size() > grammar.recovery_window ? text.size() - grammar.recovery_window : 0;
  std::optional<Answer> last;
  std::size_t i = window_start;
  while (i < text.size()) {
    if (!is_word_char(text[i])) {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < text.size() && is_word_char(text[end])) ++end;
    if (auto answer = token_to_answer(text.substr(i, end - i), grammar)) {
      last = answer;
    }
    i = end;
  }
  return last;
}

ReasoningTrace parse_response(std::string_view text, const ResponseGrammar& grammar) {
  ReasoningTrace trace;
  trace.raw = std::string(text);

  const SectionSplit split = split_sections(text, grammar);
  trace.decomposition = std::string(trim(split.bodies[0]));
  trace.initial_judgment = std::string(trim(split.bodies[1]));
  trace.counterfactual = std::string(trim(split.bodies[2]));

  if (split.in_order && !trace.decomposition.empty() && !trace.initial_judgment.empty() &&
      !trace.counterfactual.empty()) {
    if (auto answer = strict_final_answer(split.bodies[3], grammar)) {
      trace.final = Verdict{answer, ParseStatus::Clean};
      return trace;
    }
  }

  if (auto answer = recover_answer(text, grammar)) {
    trace.final = Verdict{answer, ParseStatus::Recovered};
    return trace;
  }

  trace.final = Verdict{std::nullopt, ParseStatus::Unparseable};
  return trace;
}

std::string render_trace(const ReasoningTrace& trace, const ResponseGrammar& grammar) {
  if (trace.final.parse_status != ParseStatus::Clean || !trace.final.answer) {
    throw RenderError("only Clean traces can be rendered");
  }
  const std::array<std::pair<std::string_view, std::string_view>, 3> sections = {{
      {grammar.decomposition_marker, trace.decomposition},
      {grammar.initial_marker, trace.initial_judgment},
      {grammar.counterfactual_marker, trace.counterfactual},
  }};
  const std::array<std::string_view, 4> markers = {
      grammar.decomposition_marker,
      grammar.initial_marker,
      grammar.counterfactual_marker,
      grammar.final_marker,
  };
  std::string out;
  for (const auto& [marker, body] : sections) {
    if (body.empty()) {
      throw RenderError("trace section for " + std::string(marker) + " is empty");
    }
    if (body != trim(body)) {
      throw RenderError("trace section for " + std::string(marker) +
                        " has leading or trailing whitespace");
    }
    for (std::string_view m : markers) {
      if (body.find(m) != std::string_view::npos) {
        throw RenderError("trace section for " + std::string(marker) +
                          " contains marker string " + std::string(m));
      }
    }
    out += marker;
    out.push_back(' ');
    out += body;
    out.push_back('\n');
  }
  out += grammar.final_marker;
  out.push_back(' ');
  out += *trace.final.answer == Answer::Yes ? grammar.yes_token : grammar.no_token;
  return out;
}

std::string answer_format_block(const ResponseGrammar& grammar) {
  std::string out;
  out += "Respond with exactly four labeled sections, in this order and nothing else:\n";
  out += grammar.decomposition_marker +
         " <the target objects, then the background elements you will set aside>\n";
  out += grammar.initial_marker + " <your first qualitative judgment>\n";
  out += grammar.counterfactual_marker +
         " <the strongest case for the opposite conclusion and whether it survives>\n";
  out += grammar.final_marker + " " + grammar.yes_token + " or " + grammar.no_token + "\n";
  out += "The " + grammar.final_marker + " line must contain exactly one token: " +
         grammar.yes_token + " or " + grammar.no_token + ".";
  return out;
}

std::string format_reminder_block(const ResponseGrammar& grammar) {
  std::string out;
  out += "=== FORMAT REMINDER ===\n";
  out += "Your previous reply did not follow the required format. Respond again using ";
  out += "exactly the four labeled sections " + grammar.decomposition_marker + " " +
         grammar.initial_marker + " " + grammar.counterfactual_marker + " " +
         grammar.final_marker + " in that order.\n";
  out += "The last line must be exactly \"" + grammar.final_marker + " " + grammar.yes_token +
         "\" or \"" + grammar.final_marker + " " + grammar.no_token + "\".";
  return out;
}

}  // namespace sqi
