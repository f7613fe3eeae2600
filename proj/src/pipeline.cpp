#include "sqi/pipeline.hpp"

#include <functional>
#include <utility>

#include "sqi/errors.hpp"
#include "sqi/strings.hpp"

namespace sqi {

namespace {

struct PreparedPrompt {
  QueryType type = QueryType::Other;
  ConstraintProtocol protocol;
  PromptDocument prompt;
  ImageData image;
};

PreparedPrompt prepare(const IllusionQuery& query, const ConstraintSet& constraints,
                       const PipelineConfig& config) {
  validate_query(query);
  validate_pipeline_config(config);
  const DispatchTable& table = config.dispatch ? *config.dispatch : DispatchTable::builtin();
  PreparedPrompt out;
  out.type = classify_query(query.question, table);
  out.protocol = compile_protocol(constraints, heuristic_profile(out.type), config.grammar);
  out.prompt = render_prompt(out.protocol, query, config.axioms_in_system);
  out.image = load_image(query.image);
  return out;
}

ChatRequest base_request(const PreparedPrompt& prepared, const PipelineConfig& config) {
  ChatRequest request;
  request.system_text = prepared.prompt.system_text;
  request.user_text = prepared.prompt.user_text;
  request.image_payload = prepared.image.bytes;
  request.image_media = std::string(mime_name(prepared.image.media));
  request.temperature = config.temperature;
  request.seed = config.seed;
  request.model_name = config.model_name;
  return request;
}

std::string call_backend(Backend& backend, const ChatRequest& request, const IllusionQuery& query,
                         int& calls) {
  ++calls;
  try {
    return backend.complete(request);
  } catch (const BackendError& e) {
    throw BackendError(e.kind(), "item " + query.item_id + ": " + e.what());
  }
}

// --- multi-turn plumbing ---------------------------------------------------

std::string turn1_instruction(const ResponseGrammar& g) {
  return "This is exchange 1 of 3. Reply with exactly one labeled section:\n" +
         g.decomposition_marker +
         " <the target objects, then the background elements you will set aside>";
}

std::string turn2_instruction(const ResponseGrammar& g) {
  return "This is exchange 2 of 3. Reply with exactly one labeled section:\n" + g.initial_marker +
         " <your first qualitative judgment>";
}

std::string turn3_instruction(const ResponseGrammar& g) {
  return "This is exchange 3 of 3. Reply with exactly two labeled sections:\n" +
         g.counterfactual_marker +
         " <the strongest case for the opposite conclusion and whether it survives>\n" +
         g.final_marker + " " + g.yes_token + " or " + g.no_token + "\nThe " + g.final_marker +
         " line must contain exactly one token: " + g.yes_token + " or " + g.no_token + ".";
}

std::string turn_reminder(std::initializer_list<std::string_view> markers) {
  std::string out = "=== FORMAT REMINDER ===\n";
  out += "Your previous reply did not follow the required format. Reply again using exactly";
  out += " the labeled section(s)";
  for (std::string_view marker : markers) {
    out += ' ';
    out += marker;
  }
  out += " and nothing else.";
  return out;
}

/// Clean single-section reply: only whitespace before the marker, nonempty body.
std::optional<std::string> clean_single_section(std::string_view text, std::string_view marker) {
  const std::size_t pos = text.find(marker);
  if (pos == std::string_view::npos) return std::nullopt;
  if (!trim(text.substr(0, pos)).empty()) return std::nullopt;
  std::string_view body = trim(text.substr(pos + marker.size()));
  if (body.empty()) return std::nullopt;
  return std::string(body);
}

struct Turn3Parse {
  std::string counterfactual;
  std::optional<Answer> answer;
  bool clean = false;
};

Turn3Parse parse_turn3(std::string_view text, const ResponseGrammar& g) {
  Turn3Parse out;
  const std::size_t cf_pos = text.find(g.counterfactual_marker);
  if (cf_pos != std::string_view::npos && trim(text.substr(0, cf_pos)).empty()) {
    const std::size_t body_start = cf_pos + g.counterfactual_marker.size();
    const std::size_t final_pos = text.find(g.final_marker, body_start);
    if (final_pos != std::string_view::npos) {
      std::string_view body = trim(text.substr(body_start, final_pos - body_start));
      auto answer = strict_final_answer(text.substr(final_pos + g.final_marker.size()), g);
      if (!body.empty() && answer) {
        out.counterfactual = std::string(body);
        out.answer = answer;
        out.clean = true;
        return out;
      }
    }
  }
  out.counterfactual = std::string(trim(text));
  out.answer = recover_answer(text, g);
  return out;
}

enum class AttemptGrade { Clean, Usable, Unusable };

struct TurnOutcome {
  std::string raw;  // last reply received, accepted or not
  bool clean = false;
};

/// One exchange with per-turn retry budget. A clean or usable reply is
/// accepted immediately; only unusable replies consume retries.
TurnOutcome run_exchange(Backend& backend, ChatRequest request, const std::string& user_text,
                         const std::string& reminder, const PipelineConfig& config,
                         const IllusionQuery& query, int& calls,
                         const std::function<AttemptGrade(std::string_view)>& grade) {
  TurnOutcome outcome;
  for (int attempt = 0; attempt <= config.max_parse_retries; ++attempt) {
    request.user_text = attempt == 0 ? user_text : user_text + "\n\n" + reminder;
    outcome.raw = call_backend(backend, request, query, calls);
    const AttemptGrade result = grade(outcome.raw);
    if (result != AttemptGrade::Unusable) {
      outcome.clean = result == AttemptGrade::Clean;
      return outcome;
    }
  }
  return outcome;
}

}  // namespace

std::string_view to_string(PipelineMode mode) {
  switch (mode) {
    case PipelineMode::SinglePass: return "singlepass";
    case PipelineMode::MultiTurn: return "multiturn";
  }
  throw Error("unknown pipeline mode");
}

std::optional<PipelineMode> pipeline_mode_from_string(std::string_view name) {
  if (name == "singlepass") return PipelineMode::SinglePass;
  if (name == "multiturn") return PipelineMode::MultiTurn;
  return std::nullopt;
}

void validate_pipeline_config(const PipelineConfig& config) {
  if (config.max_parse_retries < 0 || config.max_parse_retries > 3) {
    throw ValidationError("max_parse_retries must be in [0, 3]");
  }
  if (config.temperature < 0) throw ValidationError("temperature must be >= 0");
  if (config.model_name.empty()) throw ValidationError("model_name must not be empty");
}

PipelineResult run_sqi(const IllusionQuery& query, const ConstraintSet& constraints,
                       const PipelineConfig& config, Backend& backend) {
  if (config.mode == PipelineMode::MultiTurn) {
    return run_sqi_multiturn(query, constraints, config, backend);
  }
  const PreparedPrompt prepared = prepare(query, constraints, config);
  ChatRequest request = base_request(prepared, config);

  PipelineResult result;
  result.query = query;
  result.query_type = prepared.type;
  const std::string reminder = format_reminder_block(config.grammar);
  for (int attempt = 0; attempt <= config.max_parse_retries; ++attempt) {
    request.user_text = attempt == 0 ? prepared.prompt.user_text
                                     : prepared.prompt.user_text + "\n\n" + reminder;
    const std::string text = call_backend(backend, request, query, result.backend_calls);
    result.trace = parse_response(text, config.grammar);
    if (result.trace.final.parse_status != ParseStatus::Unparseable) break;
  }
  result.verdict = result.trace.final;
  result.cache_hit = backend.kind() == BackendKind::Replay;
  return result;
}

PipelineResult run_sqi(const IllusionQuery& query, const ConstraintSet& constraints,
                       const PipelineConfig& config, const BackendHandle& handle) {
  auto backend = make_backend(handle);
  return run_sqi(query, constraints, config, *backend);
}

PipelineResult run_sqi_multiturn(const IllusionQuery& query, const ConstraintSet& constraints,
                                 const PipelineConfig& config, Backend& backend) {
  if (config.mode != PipelineMode::MultiTurn) {
    throw ValidationError("run_sqi_multiturn requires MultiTurn mode");
  }
  const PreparedPrompt prepared = prepare(query, constraints, config);
  const ChatRequest request = base_request(prepared, config);
  const ResponseGrammar& g = config.grammar;

  PipelineResult result;
  result.query = query;
  result.query_type = prepared.type;

  const std::string turn1_user = prepared.protocol.segment(Stage::Axioms).text + "\n\n" +
                                 prepared.protocol.segment(Stage::Decomposition).text + "\n\n" +
                                 std::string(kQuestionPrefix) + query.question + "\n\n" +
                                 turn1_instruction(g);
  const TurnOutcome turn1 = run_exchange(
      backend, request, turn1_user, turn_reminder({g.decomposition_marker}), config, query,
      result.backend_calls, [&](std::string_view text) {
        if (clean_single_section(text, g.decomposition_marker)) return AttemptGrade::Clean;
        return trim(text).empty() ? AttemptGrade::Unusable : AttemptGrade::Usable;
      });

  const std::string turn2_user = turn1_user + "\n\n" + turn1.raw + "\n\n" + turn2_instruction(g);
  const TurnOutcome turn2 = run_exchange(
      backend, request, turn2_user, turn_reminder({g.initial_marker}), config, query,
      result.backend_calls, [&](std::string_view text) {
        if (clean_single_section(text, g.initial_marker)) return AttemptGrade::Clean;
        return trim(text).empty() ? AttemptGrade::Unusable : AttemptGrade::Usable;
      });

  const std::string turn3_user = turn2_user + "\n\n" + turn2.raw + "\n\n" +
                                 prepared.protocol.segment(Stage::Counterfactual).text + "\n\n" +
                                 turn3_instruction(g);
  const TurnOutcome turn3 = run_exchange(
      backend, request, turn3_user, turn_reminder({g.counterfactual_marker, g.final_marker}),
      config, query, result.backend_calls, [&](std::string_view text) {
        const Turn3Parse parsed = parse_turn3(text, g);
        if (parsed.clean) return AttemptGrade::Clean;
        return parsed.answer ? AttemptGrade::Usable : AttemptGrade::Unusable;
      });

  const Turn3Parse verdict_parse = parse_turn3(turn3.raw, g);
  ReasoningTrace& trace = result.trace;
  if (auto body = clean_single_section(turn1.raw, g.decomposition_marker)) {
    trace.decomposition = *body;
  } else {
    trace.decomposition = std::string(trim(turn1.raw));
  }
  if (auto body = clean_single_section(turn2.raw, g.initial_marker)) {
    trace.initial_judgment = *body;
  } else {
    trace.initial_judgment = std::string(trim(turn2.raw));
  }
  trace.counterfactual = verdict_parse.counterfactual;
  trace.raw = turn1.raw + "\n\n" + turn2.raw + "\n\n" + turn3.raw;

  if (verdict_parse.answer) {
    const bool all_clean = turn1.clean && turn2.clean && turn3.clean;
    trace.final = Verdict{verdict_parse.answer,
                          all_clean ? ParseStatus::Clean : ParseStatus::Recovered};
  } else {
    trace.final = Verdict{std::nullopt, ParseStatus::Unparseable};
  }
  result.verdict = trace.final;
  result.cache_hit = backend.kind() == BackendKind::Replay;
  return result;
}

}  // namespace sqi
