#include "sqi/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "sqi/errors.hpp"
#include "sqi/strings.hpp"

namespace sqi {

namespace {

using nlohmann::json;

std::string manifest_context(const std::filesystem::path& path, int line_no) {
  return path.filename().string() + " line " + std::to_string(line_no);
}

IllusionQuery item_from_json(const json& doc, const Manifest& manifest,
                             const std::string& context) {
  for (const char* field : {"id", "image", "question", "gt"}) {
    if (!doc.contains(field)) {
      throw SchemaError(context + ": missing field \"" + std::string(field) + "\"");
    }
  }
  if (!doc["id"].is_string() || !doc["image"].is_string() || !doc["question"].is_string()) {
    throw SchemaError(context + ": id, image, and question must be strings");
  }
  if (!doc["gt"].is_number_integer()) {
    throw SchemaError(context + ": gt must be an integer");
  }
  IllusionQuery query;
  query.item_id = doc["id"].get<std::string>();
  query.question = doc["question"].get<std::string>();
  const long long gt = doc["gt"].get<long long>();
  if (gt != 0 && gt != 1) {
    throw SchemaError(context + ": item " + query.item_id + ": gt must be 0 or 1, got " +
                      std::to_string(gt));
  }
  query.gt_label = static_cast<int>(gt);
  const std::filesystem::path image_path =
      manifest.base_dir / std::filesystem::path(doc["image"].get<std::string>());
  if (!std::filesystem::exists(image_path)) {
    throw MissingImageError(context + ": item " + query.item_id + ": image not found: " +
                            image_path.string());
  }
  query.image = ImageRef::from_path(image_path.string());
  try {
    validate_query(query);
  } catch (const ValidationError& e) {
    throw SchemaError(context + ": item " + query.item_id + ": " + e.what());
  }
  return query;
}

std::string csv_escape(const std::string& value) {
  if (value.find_first_of(",\"\r\n") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

json outcome_to_json(const ItemOutcome& outcome) {
  json doc;
  doc["item_id"] = outcome.item_id;
  doc["query_type"] = std::string(to_string(outcome.query_type));
  doc["gt_label"] = outcome.gt_label;
  doc["predicted_label"] =
      outcome.predicted_label ? json(*outcome.predicted_label) : json(nullptr);
  doc["parse_status"] = std::string(to_string(outcome.parse_status));
  doc["correct"] = outcome.correct;
  doc["backend_calls"] = outcome.backend_calls;
  return doc;
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  out.flush();
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest manifest;
  manifest.base_dir = path.parent_path();

  std::set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  bool saw_record = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::exception& e) {
      throw SchemaError(manifest_context(path, line_no) + ": not valid JSON: " + e.what());
    }
    if (!doc.is_object()) {
      throw SchemaError(manifest_context(path, line_no) + ": not a JSON object");
    }
    if (!saw_record && !doc.contains("id")) {
      // Leading metadata object.
      manifest.meta.name = doc.value("name", "");
      manifest.meta.version = doc.value("version", "");
      saw_record = true;
      continue;
    }
    saw_record = true;
    IllusionQuery query = item_from_json(doc, manifest, manifest_context(path, line_no));
    if (!seen_ids.insert(query.item_id).second) {
      throw SchemaError(manifest_context(path, line_no) + ": duplicate item id " +
                        query.item_id);
    }
    manifest.items.push_back(std::move(query));
  }
  if (manifest.items.empty()) throw SchemaError("manifest has no items: " + path.string());
  if (manifest.meta.name.empty()) manifest.meta.name = path.stem().string();
  if (manifest.meta.version.empty()) manifest.meta.version = "1";
  return manifest;
}

double subset_accuracy(const std::vector<ItemOutcome>& items, int subset) {
  if (subset != 0 && subset != 1) throw ValidationError("subset must be 0 or 1");
  long long total = 0;
  long long correct = 0;
  for (const ItemOutcome& item : items) {
    if (item.gt_label != subset) continue;
    ++total;
    if (item.correct) ++correct;
  }
  if (total == 0) {
    throw EmptySubsetError(std::string("no items in subset gt=") + std::to_string(subset));
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

double overall_accuracy(double acc_pert, double acc_orig) {
  return (acc_pert + acc_orig) / 2.0;
}

double round_half_up(double value) {
  return static_cast<double>(std::llround(value * 100.0)) / 100.0;
}

std::string format_percent(double value) {
  const long long hundredths = std::llround(value * 100.0);
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%lld.%02lld", hundredths / 100,
                std::llabs(hundredths % 100));
  return buffer;
}

EvalReport run_eval(const Manifest& manifest, const ConstraintSet& constraints,
                    const PipelineConfig& config, Backend& backend, const EvalOptions& options) {
  if (options.concurrency < 1) throw ValidationError("concurrency must be >= 1");
  bool has_pert = false;
  bool has_orig = false;
  for (const IllusionQuery& item : manifest.items) {
    if (item.gt_label == 0) has_pert = true;
    if (item.gt_label == 1) has_orig = true;
  }
  if (!has_pert) throw EmptySubsetError("manifest has no perturbed (gt=0) items");
  if (!has_orig) throw EmptySubsetError("manifest has no original (gt=1) items");

  const std::size_t n = manifest.items.size();
  std::vector<std::optional<PipelineResult>> results(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto work = [&] {
    while (!stop.load()) {
      const std::size_t index = next.fetch_add(1);
      if (index >= n) break;
      try {
        results[index] = run_sqi(manifest.items[index], constraints, config, backend);
      } catch (...) {
        {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
        stop.store(true);
        break;
      }
    }
  };

  const int workers = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(options.concurrency), n));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(work);
    for (std::thread& worker : pool) worker.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return results[a]->query.item_id < results[b]->query.item_id;
  });

  EvalReport report;
  report.meta = manifest.meta;
  report.pipeline_mode = std::string(to_string(config.mode));
  report.per_item.reserve(n);
  for (std::size_t i : order) {
    const PipelineResult& result = *results[i];
    ItemOutcome outcome;
    outcome.item_id = result.query.item_id;
    outcome.query_type = result.query_type;
    outcome.gt_label = *result.query.gt_label;
    outcome.predicted_label = result.verdict.numeric_label();
    outcome.parse_status = result.verdict.parse_status;
    outcome.correct = outcome.predicted_label && *outcome.predicted_label == outcome.gt_label;
    outcome.backend_calls = result.backend_calls;
    report.per_item.push_back(std::move(outcome));
  }

  report.counts.n_items = static_cast<int>(n);
  for (const ItemOutcome& outcome : report.per_item) {
    if (outcome.gt_label == 0) ++report.counts.n_pert;
    else ++report.counts.n_orig;
    if (outcome.parse_status == ParseStatus::Unparseable) ++report.counts.n_unparseable;
  }
  report.acc_pert = subset_accuracy(report.per_item, 0);
  report.acc_orig = subset_accuracy(report.per_item, 1);
  report.overall = overall_accuracy(report.acc_pert, report.acc_orig);

  if (!options.trace_dir.empty()) {
    std::filesystem::create_directories(options.trace_dir);
    std::ostringstream lines;
    for (std::size_t i : order) {
      const PipelineResult& result = *results[i];
      json doc;
      doc["item_id"] = result.query.item_id;
      doc["query_type"] = std::string(to_string(result.query_type));
      doc["gt_label"] = *result.query.gt_label;
      doc["predicted_label"] =
          result.verdict.numeric_label() ? json(*result.verdict.numeric_label()) : json(nullptr);
      doc["parse_status"] = std::string(to_string(result.verdict.parse_status));
      doc["backend_calls"] = result.backend_calls;
      doc["cache_hit"] = result.cache_hit;
      doc["trace"] = {
          {"decomposition", result.trace.decomposition},
          {"initial_judgment", result.trace.initial_judgment},
          {"counterfactual", result.trace.counterfactual},
          {"raw", result.trace.raw},
      };
      lines << doc.dump() << "\n";
    }
    write_text_file(options.trace_dir / "trace.jsonl", lines.str());
  }
  return report;
}

std::string report_json(const EvalReport& report) {
  json doc;
  doc["manifest"] = {{"name", report.meta.name}, {"version", report.meta.version}};
  doc["run"] = {{"mode", report.pipeline_mode}};
  doc["counts"] = {
      {"n_items", report.counts.n_items},
      {"n_pert", report.counts.n_pert},
      {"n_orig", report.counts.n_orig},
      {"n_unparseable", report.counts.n_unparseable},
  };
  doc["accuracy"] = {
      {"pert", report.acc_pert},
      {"orig", report.acc_orig},
      {"overall", report.overall},
  };
  doc["display"] = {
      {"pert", format_percent(report.acc_pert)},
      {"orig", format_percent(report.acc_orig)},
      {"overall", format_percent(report.overall)},
  };
  json items = json::array();
  for (const ItemOutcome& outcome : report.per_item) items.push_back(outcome_to_json(outcome));
  doc["per_item"] = std::move(items);
  return doc.dump(2) + "\n";
}

std::string report_csv(const EvalReport& report) {
  std::string out = "item_id,query_type,gt_label,predicted_label,parse_status,correct,backend_calls\n";
  for (const ItemOutcome& outcome : report.per_item) {
    out += csv_escape(outcome.item_id);
    out.push_back(',');
    out += to_string(outcome.query_type);
    out.push_back(',');
    out += std::to_string(outcome.gt_label);
    out.push_back(',');
    if (outcome.predicted_label) out += std::to_string(*outcome.predicted_label);
    out.push_back(',');
    out += to_string(outcome.parse_status);
    out.push_back(',');
    out += outcome.correct ? "true" : "false";
    out.push_back(',');
    out += std::to_string(outcome.backend_calls);
    out.push_back('\n');
  }
  return out;
}

std::string report_summary(const EvalReport& report) {
  return "overall=" + format_percent(report.overall) + " pert=" + format_percent(report.acc_pert) +
         " orig=" + format_percent(report.acc_orig) + "\n";
}

void write_report_files(const EvalReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir / "report.json", report_json(report));
  write_text_file(out_dir / "report.csv", report_csv(report));
  write_text_file(out_dir / "summary.txt", report_summary(report));
}

}  // namespace sqi
