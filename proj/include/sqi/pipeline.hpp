#pragma once

#include <memory>
#include <optional>
#include <string>

#include "sqi/backend.hpp"
#include "sqi/constraints.hpp"
#include "sqi/core.hpp"
#include "sqi/dispatch.hpp"
#include "sqi/parser.hpp"

namespace sqi {

enum class PipelineMode { SinglePass, MultiTurn };

std::string_view to_string(PipelineMode mode);
std::optional<PipelineMode> pipeline_mode_from_string(std::string_view name);

struct PipelineConfig {
  PipelineMode mode = PipelineMode::SinglePass;
  int max_parse_retries = 1;  // extra attempts after a parse failure, per exchange
  std::string backend_id;    // informational echo; routing happens via the handle
  std::string model_name = "default";
  double temperature = 0.0;
  std::optional<long long> seed;
  // When set, the Axioms block is mirrored into the system text as well; the
  // user text always carries all four stage blocks.
  bool axioms_in_system = false;
  ResponseGrammar grammar;
  std::shared_ptr<const DispatchTable> dispatch;  // null = builtin rules
};

void validate_pipeline_config(const PipelineConfig& config);

struct PipelineResult {
  IllusionQuery query;
  QueryType query_type = QueryType::Other;
  ReasoningTrace trace;
  Verdict verdict;
  int backend_calls = 0;
  bool cache_hit = false;
};

/// Runs one query end-to-end: dispatch → compile → render → backend call →
/// parse. Retries with an appended format reminder when an attempt is
/// Unparseable, up to max_parse_retries extra attempts; the result is
/// Unparseable only after the budget is exhausted. MultiTurn mode delegates to
/// run_sqi_multiturn. Backend errors propagate with the item id attached.
PipelineResult run_sqi(const IllusionQuery& query, const ConstraintSet& constraints,
                       const PipelineConfig& config, Backend& backend);

/// Convenience overload that constructs the backend from a handle.
PipelineResult run_sqi(const IllusionQuery& query, const ConstraintSet& constraints,
                       const PipelineConfig& config, const BackendHandle& handle);

/// Three sequential exchanges: (1) axioms + decomposition, (2) initial
/// judgment, (3) counterfactual + final. Each later turn repeats the prior
/// transcript verbatim, so the exchange stays cacheable as plain requests.
/// Turn replies degrade independently: turns 1–2 accept any nonempty text as a
/// Recovered section, turn 3 falls back to the recovery rule; the result is
/// Clean only when every turn parsed cleanly.
PipelineResult run_sqi_multiturn(const IllusionQuery& query, const ConstraintSet& constraints,
                                 const PipelineConfig& config, Backend& backend);

}  // namespace sqi
