#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "sqi/backend.hpp"
#include "sqi/constraints.hpp"
#include "sqi/core.hpp"
#include "sqi/dispatch.hpp"
#include "sqi/errors.hpp"
#include "sqi/eval.hpp"
#include "sqi/parser.hpp"
#include "sqi/pipeline.hpp"
#include "sqi/strings.hpp"
#include "sqi/tablefile.hpp"

namespace {

using nlohmann::json;

/// Merged run settings. Precedence: flags > environment (SQI_ENDPOINT,
/// SQI_API_KEY) > config file > these defaults.
struct RunConfig {
  std::string backend = "http";  // http[:<url>] | scripted:<table.json> | replay[:<dir>]
  std::string endpoint;
  std::string model = "default";
  std::string constraints;     // spec file path; empty = bundled default set
  std::string dispatch_rules;  // rule file path; empty = bundled rules
  std::string mode = "singlepass";
  int concurrency = 1;
  std::string cache_dir;
  bool record = false;
  bool replay = false;
  std::string out = "sqi-out";
  std::string trace_dir;
  double temperature = 0.0;
  std::optional<long long> seed;
  int max_parse_retries = 1;
  std::string auth_env = "SQI_API_KEY";
};

long long parse_int(const std::string& value, const std::string& key) {
  try {
    std::size_t used = 0;
    const long long parsed = std::stoll(value, &used);
    if (used == value.size()) return parsed;
  } catch (const std::exception&) {
  }
  throw sqi::ValidationError("config key '" + key + "' needs an integer, got '" + value + "'");
}

double parse_double(const std::string& value, const std::string& key) {
  try {
    std::size_t used = 0;
    const double parsed = std::stod(value, &used);
    if (used == value.size()) return parsed;
  } catch (const std::exception&) {
  }
  throw sqi::ValidationError("config key '" + key + "' needs a number, got '" + value + "'");
}

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw sqi::ValidationError("config key '" + key + "' needs true or false, got '" + value + "'");
}

void apply_config_entry(RunConfig& config, const std::string& key, const std::string& value) {
  if (key == "backend") config.backend = value;
  else if (key == "endpoint") config.endpoint = value;
  else if (key == "model") config.model = value;
  else if (key == "constraints") config.constraints = value;
  else if (key == "dispatch_rules") config.dispatch_rules = value;
  else if (key == "mode") config.mode = value;
  else if (key == "concurrency") config.concurrency = static_cast<int>(parse_int(value, key));
  else if (key == "cache_dir") config.cache_dir = value;
  else if (key == "record") config.record = parse_bool(value, key);
  else if (key == "replay") config.replay = parse_bool(value, key);
  else if (key == "out") config.out = value;
  else if (key == "trace_dir") config.trace_dir = value;
  else if (key == "temperature") config.temperature = parse_double(value, key);
  else if (key == "seed") {
    if (value == "null" || value.empty()) config.seed.reset();
    else config.seed = parse_int(value, key);
  } else if (key == "max_parse_retries") {
    config.max_parse_retries = static_cast<int>(parse_int(value, key));
  } else if (key == "auth_env") {
    config.auth_env = value;
  } else {
    throw sqi::ValidationError("unknown config key '" + key + "'");
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw sqi::IoError("cannot open config file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  const std::string_view trimmed = sqi::trim(text);
  if (!trimmed.empty() && trimmed.front() == '{') {
    // An echoed effective-config.json round-trips as a config file.
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::exception& e) {
      throw sqi::SchemaError("config file is not valid JSON: " + std::string(e.what()));
    }
    for (const auto& [key, value] : doc.items()) {
      if (value.is_string()) apply_config_entry(config, key, value.get<std::string>());
      else if (value.is_boolean()) apply_config_entry(config, key, value.get<bool>() ? "true" : "false");
      else if (value.is_null()) apply_config_entry(config, key, "null");
      else apply_config_entry(config, key, value.dump());
    }
    return;
  }

  for (const auto& section : sqi::parse_table_text(text)) {
    if (section.name != "run") {
      throw sqi::ValidationError("unknown section [" + section.name + "] in config file (line " +
                                 std::to_string(section.line) + ")");
    }
    for (const auto& entry : section.entries) apply_config_entry(config, entry.key, entry.value);
  }
}

json config_to_json(const RunConfig& config) {
  json doc;
  doc["backend"] = config.backend;
  doc["endpoint"] = config.endpoint;
  doc["model"] = config.model;
  doc["constraints"] = config.constraints;
  doc["dispatch_rules"] = config.dispatch_rules;
  doc["mode"] = config.mode;
  doc["concurrency"] = config.concurrency;
  doc["cache_dir"] = config.cache_dir;
  doc["record"] = config.record;
  doc["replay"] = config.replay;
  doc["out"] = config.out;
  doc["trace_dir"] = config.trace_dir;
  doc["temperature"] = config.temperature;
  doc["seed"] = config.seed ? json(*config.seed) : json(nullptr);
  doc["max_parse_retries"] = config.max_parse_retries;
  doc["auth_env"] = config.auth_env;
  return doc;
}

void write_effective_config(const RunConfig& config) {
  std::filesystem::create_directories(config.out);
  const auto path = std::filesystem::path(config.out) / "effective-config.json";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw sqi::IoError("cannot write " + path.string());
  out << config_to_json(config).dump(2) << "\n";
}

sqi::BackendHandle make_handle(const RunConfig& config) {
  sqi::BackendHandle handle;
  std::string kind = config.backend;
  std::string arg;
  if (const auto colon = config.backend.find(':'); colon != std::string::npos) {
    kind = config.backend.substr(0, colon);
    arg = config.backend.substr(colon + 1);
  }
  if (kind == "http") {
    handle.kind = sqi::BackendKind::Http;
    handle.endpoint = arg.empty() ? config.endpoint : arg;
    if (handle.endpoint.empty()) {
      throw sqi::ValidationError(
          "http backend needs an endpoint: pass --backend http:<url> or set SQI_ENDPOINT");
    }
  } else if (kind == "scripted") {
    if (arg.empty()) {
      throw sqi::ValidationError("scripted backend needs a table: --backend scripted:<table.json>");
    }
    handle.kind = sqi::BackendKind::Scripted;
    handle.scripted = sqi::ScriptedTable::load(arg);
  } else if (kind == "replay") {
    handle.kind = sqi::BackendKind::Replay;
    handle.cache_dir = arg.empty() ? config.cache_dir : arg;
    if (handle.cache_dir.empty()) {
      throw sqi::ValidationError("replay backend needs a cache dir: --backend replay:<dir> or --cache-dir");
    }
  } else {
    throw sqi::ValidationError("unknown backend '" + kind +
                               "' (expected http, scripted, or replay)");
  }
  handle.model_name = config.model;
  handle.auth_env = config.auth_env;
  return handle;
}

std::unique_ptr<sqi::Backend> build_backend(const RunConfig& config) {
  if (config.replay) {
    if (config.cache_dir.empty()) throw sqi::ValidationError("--replay requires --cache-dir");
    sqi::BackendHandle handle;
    handle.kind = sqi::BackendKind::Replay;
    handle.cache_dir = config.cache_dir;
    handle.model_name = config.model;
    return sqi::make_backend(handle);
  }
  auto backend = sqi::make_backend(make_handle(config));
  if (config.record) {
    if (config.cache_dir.empty()) throw sqi::ValidationError("--record requires --cache-dir");
    return std::make_unique<sqi::RecordingBackend>(std::move(backend), config.cache_dir,
                                                   config.model);
  }
  return backend;
}

sqi::PipelineConfig make_pipeline_config(const RunConfig& config) {
  sqi::PipelineConfig pipeline;
  const auto mode = sqi::pipeline_mode_from_string(config.mode);
  if (!mode) {
    throw sqi::ValidationError("unknown mode '" + config.mode + "' (singlepass or multiturn)");
  }
  pipeline.mode = *mode;
  pipeline.max_parse_retries = config.max_parse_retries;
  pipeline.backend_id = config.backend;
  pipeline.model_name = config.model;
  pipeline.temperature = config.temperature;
  pipeline.seed = config.seed;
  if (!config.dispatch_rules.empty()) {
    pipeline.dispatch =
        std::make_shared<sqi::DispatchTable>(sqi::DispatchTable::load(config.dispatch_rules));
  }
  sqi::validate_pipeline_config(pipeline);
  return pipeline;
}

sqi::ConstraintSet resolve_constraints(const RunConfig& config) {
  if (config.constraints.empty()) return sqi::default_constraint_set();
  return sqi::load_constraint_spec(config.constraints);
}

/// Flag storage for one subcommand; `count()` on the parsed app decides which
/// of these actually override the config.
struct FlagBag {
  std::string config_path;
  std::string backend;
  std::string model;
  std::string constraints;
  std::string dispatch_rules;
  std::string mode;
  std::string cache_dir;
  std::string out;
  std::string trace_dir;
  int concurrency = 1;
  double temperature = 0.0;
  long long seed = 0;
  int max_parse_retries = 1;
  bool record = false;
  bool replay = false;
  bool show_trace = false;
};

void add_run_flags(CLI::App* cmd, FlagBag& bag) {
  cmd->add_option("--config", bag.config_path,
                  "Config file: a [run] table section, or an echoed effective-config.json");
  cmd->add_option("--backend", bag.backend,
                  "Backend: http[:<url>], scripted:<table.json>, or replay[:<dir>]");
  cmd->add_option("--model", bag.model, "Model name sent to the endpoint and hashed into cache keys");
  cmd->add_option("--constraints", bag.constraints, "Constraint spec file (default: bundled set)");
  cmd->add_option("--dispatch-rules", bag.dispatch_rules, "Dispatch rule file (default: bundled rules)");
  cmd->add_option("--mode", bag.mode, "Pipeline mode")
      ->check(CLI::IsMember({"singlepass", "multiturn"}));
  cmd->add_option("--cache-dir", bag.cache_dir, "Response cache directory for --record/--replay");
  cmd->add_flag("--record", bag.record, "Record every response into --cache-dir");
  cmd->add_flag("--replay", bag.replay, "Serve responses from --cache-dir; no network");
  cmd->add_option("--out", bag.out, "Output directory for run artifacts (default sqi-out)");
  cmd->add_option("--temperature", bag.temperature, "Sampling temperature (default 0)");
  cmd->add_option("--seed", bag.seed, "Decoding seed passed to the endpoint");
  cmd->add_option("--max-parse-retries", bag.max_parse_retries,
                  "Extra attempts after a parse failure, 0-3 (default 1)");
}

RunConfig resolve_config(const CLI::App* cmd, const FlagBag& bag) {
  RunConfig config;
  if (cmd->count("--config") > 0) apply_config_file(config, bag.config_path);
  if (const char* endpoint = std::getenv("SQI_ENDPOINT")) config.endpoint = endpoint;
  if (cmd->count("--backend") > 0) config.backend = bag.backend;
  if (cmd->count("--model") > 0) config.model = bag.model;
  if (cmd->count("--constraints") > 0) config.constraints = bag.constraints;
  if (cmd->count("--dispatch-rules") > 0) config.dispatch_rules = bag.dispatch_rules;
  if (cmd->count("--mode") > 0) config.mode = bag.mode;
  if (cmd->count("--cache-dir") > 0) config.cache_dir = bag.cache_dir;
  if (cmd->count("--record") > 0) config.record = bag.record;
  if (cmd->count("--replay") > 0) config.replay = bag.replay;
  if (cmd->count("--out") > 0) config.out = bag.out;
  if (cmd->get_option_no_throw("--concurrency") != nullptr && cmd->count("--concurrency") > 0) {
    config.concurrency = bag.concurrency;
  }
  if (cmd->get_option_no_throw("--trace-dir") != nullptr && cmd->count("--trace-dir") > 0) {
    config.trace_dir = bag.trace_dir;
  }
  if (cmd->count("--temperature") > 0) config.temperature = bag.temperature;
  if (cmd->count("--seed") > 0) config.seed = bag.seed;
  if (cmd->count("--max-parse-retries") > 0) config.max_parse_retries = bag.max_parse_retries;
  return config;
}

int run_ask(const CLI::App* cmd, const FlagBag& bag, const std::string& image,
            const std::string& question) {
  const RunConfig config = resolve_config(cmd, bag);
  const sqi::ConstraintSet constraints = resolve_constraints(config);
  const sqi::PipelineConfig pipeline = make_pipeline_config(config);
  auto backend = build_backend(config);

  sqi::IllusionQuery query;
  query.item_id = "cli";
  query.image = sqi::ImageRef::from_path(image);
  query.question = question;

  const sqi::PipelineResult result = sqi::run_sqi(query, constraints, pipeline, *backend);
  write_effective_config(config);

  const sqi::ResponseGrammar& grammar = pipeline.grammar;
  if (bag.show_trace) {
    std::cout << grammar.decomposition_marker << " " << result.trace.decomposition << "\n";
    std::cout << grammar.initial_marker << " " << result.trace.initial_judgment << "\n";
    std::cout << grammar.counterfactual_marker << " " << result.trace.counterfactual << "\n";
  }
  if (result.verdict.answer) {
    std::cout << grammar.final_marker << " "
              << (*result.verdict.answer == sqi::Answer::Yes ? grammar.yes_token : grammar.no_token)
              << "\n";
  } else {
    std::cout << grammar.final_marker << " UNPARSEABLE\n";
  }
  return result.verdict.parse_status == sqi::ParseStatus::Unparseable ? 2 : 0;
}

int run_eval_cmd(const CLI::App* cmd, const FlagBag& bag, const std::string& manifest_path) {
  const RunConfig config = resolve_config(cmd, bag);
  const sqi::ConstraintSet constraints = resolve_constraints(config);
  const sqi::PipelineConfig pipeline = make_pipeline_config(config);
  auto backend = build_backend(config);

  const sqi::Manifest manifest = sqi::load_manifest(manifest_path);
  sqi::EvalOptions options;
  options.concurrency = config.concurrency;
  if (!config.trace_dir.empty()) options.trace_dir = config.trace_dir;

  const sqi::EvalReport report = sqi::run_eval(manifest, constraints, pipeline, *backend, options);
  sqi::write_report_files(report, config.out);
  write_effective_config(config);

  std::cout << "wrote report.json, report.csv, summary.txt to " << config.out << "\n";
  std::cout << sqi::report_summary(report);
  return 0;
}

std::filesystem::path existing_cache_dir(const std::string& dir) {
  if (dir.empty()) throw sqi::ValidationError("--cache-dir is required");
  if (!std::filesystem::exists(dir)) throw sqi::IoError("cache dir does not exist: " + dir);
  return dir;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured qualitative inference over a frozen vision-language endpoint"};
  app.require_subcommand(1);

  FlagBag ask_bag;
  std::string ask_image;
  std::string ask_question;
  CLI::App* ask = app.add_subcommand("ask", "Answer one yes/no question about one image");
  ask->add_option("image", ask_image, "Image file")->required();
  ask->add_option("question", ask_question, "Yes/no question about the image")->required();
  add_run_flags(ask, ask_bag);
  ask->add_flag("--show-trace", ask_bag.show_trace, "Print the reasoning trace sections");

  FlagBag eval_bag;
  std::string eval_manifest;
  CLI::App* eval = app.add_subcommand("eval", "Score a manifest and write report files");
  eval->add_option("manifest", eval_manifest, "JSON-lines manifest file")->required();
  add_run_flags(eval, eval_bag);
  eval->add_option("--concurrency", eval_bag.concurrency, "In-flight item bound (default 1)");
  eval->add_option("--trace-dir", eval_bag.trace_dir,
                   "Write per-item trace.jsonl into this directory");

  CLI::App* cache = app.add_subcommand("cache", "Inspect and maintain a response cache");
  cache->require_subcommand(1);
  std::string cache_ls_dir;
  std::string cache_verify_dir;
  std::string cache_gc_dir;
  CLI::App* cache_ls = cache->add_subcommand("ls", "List cached response keys");
  cache_ls->add_option("--cache-dir", cache_ls_dir, "Response cache directory")->required();
  CLI::App* cache_verify =
      cache->add_subcommand("verify", "Recompute digests and report corrupt entries");
  cache_verify->add_option("--cache-dir", cache_verify_dir, "Response cache directory")->required();
  CLI::App* cache_gc = cache->add_subcommand("gc", "Remove entries unreferenced by the journal");
  cache_gc->add_option("--cache-dir", cache_gc_dir, "Response cache directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (ask->parsed()) return run_ask(ask, ask_bag, ask_image, ask_question);
    if (eval->parsed()) return run_eval_cmd(eval, eval_bag, eval_manifest);
    if (cache_ls->parsed()) {
      sqi::ResponseCache store(existing_cache_dir(cache_ls_dir));
      for (const auto& key : store.entry_keys()) std::cout << key << "\n";
      return 0;
    }
    if (cache_verify->parsed()) {
      sqi::ResponseCache store(existing_cache_dir(cache_verify_dir));
      const sqi::CacheVerifyResult result = store.verify();
      if (result.ok()) {
        std::cout << "ok, " << result.entries << " entries\n";
        return 0;
      }
      for (const auto& key : result.corrupt_keys) std::cout << "corrupt: " << key << "\n";
      return 1;
    }
    if (cache_gc->parsed()) {
      sqi::ResponseCache store(existing_cache_dir(cache_gc_dir));
      std::cout << "removed " << store.gc() << "\n";
      return 0;
    }
  } catch (const sqi::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
