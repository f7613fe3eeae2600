#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sqi/constraints.hpp"
#include "sqi/core.hpp"
#include "sqi/dispatch.hpp"
#include "sqi/pipeline.hpp"

namespace sqi {

struct ManifestMeta {
  std::string name;
  std::string version;

  bool operator==(const ManifestMeta&) const = default;
};

/// A scoring dataset: JSON-lines, one {id, image, question, gt} object per
/// line, with an optional leading metadata object (any object without an "id"
/// key). Image paths are resolved relative to the manifest's directory.
struct Manifest {
  ManifestMeta meta;
  std::vector<IllusionQuery> items;
  std::filesystem::path base_dir;
};

Manifest load_manifest(const std::filesystem::path& path);

struct ItemOutcome {
  std::string item_id;
  QueryType query_type = QueryType::Other;
  int gt_label = 0;
  std::optional<int> predicted_label;  // absent when unparseable
  ParseStatus parse_status = ParseStatus::Unparseable;
  bool correct = false;
  int backend_calls = 0;

  bool operator==(const ItemOutcome&) const = default;
};

struct EvalCounts {
  int n_items = 0;
  int n_pert = 0;  // GT=0 subset
  int n_orig = 0;  // GT=1 subset
  int n_unparseable = 0;

  bool operator==(const EvalCounts&) const = default;
};

struct EvalReport {
  ManifestMeta meta;
  std::string pipeline_mode;          // echoed run metadata ("singlepass"/"multiturn")
  std::vector<ItemOutcome> per_item;  // ordered by item_id
  double acc_pert = 0.0;   // full precision; display rounding is separate
  double acc_orig = 0.0;
  double overall = 0.0;
  EvalCounts counts;
};

/// 100 · correct / total over the items whose gt_label equals subset (0 =
/// perturbed, 1 = original). Throws EmptySubsetError when the subset is empty.
double subset_accuracy(const std::vector<ItemOutcome>& items, int subset);

/// Arithmetic mean at full precision; display rounding happens only when
/// formatting.
double overall_accuracy(double acc_pert, double acc_orig);

/// Rounds half-up to two decimals (71.665 → 71.67).
double round_half_up(double value);

/// Two-decimal display form, rounded half-up: 83.3333… → "83.33".
std::string format_percent(double value);

struct EvalOptions {
  int concurrency = 1;              // in-flight item bound
  std::filesystem::path trace_dir;  // when set, writes trace.jsonl there
};

/// Runs the pipeline over every manifest item and aggregates the challenge
/// metric. Deterministic for a given backend: items may execute concurrently
/// but outcomes are ordered by item_id. The first pipeline error aborts the
/// run and propagates.
EvalReport run_eval(const Manifest& manifest, const ConstraintSet& constraints,
                    const PipelineConfig& config, Backend& backend,
                    const EvalOptions& options = {});

std::string report_json(const EvalReport& report);
std::string report_csv(const EvalReport& report);
std::string report_summary(const EvalReport& report);  // "overall=… pert=… orig=…"

/// Writes report.json, report.csv, and summary.txt into out_dir.
void write_report_files(const EvalReport& report, const std::filesystem::path& out_dir);

}  // namespace sqi
