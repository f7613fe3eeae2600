#include "sqi/backend.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "sqi/errors.hpp"
#include "sqi/strings.hpp"

namespace sqi {

namespace {

using nlohmann::json;

std::atomic<long long> g_transport_attempts{0};

std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm parts{};
  gmtime_r(&now, &parts);
  char buffer[32];
  std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &parts);
  return buffer;
}

std::string format_temperature(double temperature) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.6f", temperature);
  return buffer;
}

void atomic_write_file(const std::filesystem::path& path, const std::string& contents) {
  static std::atomic<unsigned long long> counter{0};
  auto tmp = path;
  tmp += ".tmp-" + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

std::string read_file_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

bool is_hex_key(const std::string& name) {
  if (name.size() != 64) return false;
  for (char c : name) {
    bool ok = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
    if (!ok) return false;
  }
  return true;
}

json entry_to_json(const CacheEntry& entry) {
  json doc;
  doc["key"] = entry.key;
  doc["backend_kind"] = std::string(to_string(entry.backend_kind));
  doc["request_canonical"] = entry.request_canonical;
  doc["response_text"] = entry.response_text;
  doc["timestamp"] = entry.timestamp;
  doc["usage"] = entry.usage ? json::parse(*entry.usage) : json(nullptr);
  return doc;
}

CacheEntry entry_from_json(const json& doc, const std::filesystem::path& path) {
  if (!doc.is_object()) throw SchemaError("cache entry is not an object: " + path.string());
  CacheEntry entry;
  try {
    entry.key = doc.at("key").get<std::string>();
    auto kind = backend_kind_from_string(doc.at("backend_kind").get<std::string>());
    if (!kind) throw SchemaError("unknown backend_kind in " + path.string());
    entry.backend_kind = *kind;
    entry.request_canonical = doc.at("request_canonical").get<std::string>();
    entry.response_text = doc.at("response_text").get<std::string>();
    entry.timestamp = doc.at("timestamp").get<std::string>();
    if (doc.contains("usage") && !doc.at("usage").is_null()) {
      entry.usage = doc.at("usage").dump();
    }
  } catch (const json::exception& e) {
    throw SchemaError("malformed cache entry " + path.string() + ": " + e.what());
  }
  return entry;
}

}  // namespace

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::Http: return "http";
    case BackendKind::Scripted: return "scripted";
    case BackendKind::Replay: return "replay";
  }
  throw Error("unknown backend kind");
}

std::optional<BackendKind> backend_kind_from_string(std::string_view name) {
  if (name == "http") return BackendKind::Http;
  if (name == "scripted") return BackendKind::Scripted;
  if (name == "replay") return BackendKind::Replay;
  return std::nullopt;
}

std::string canonical_request_bytes(const ChatRequest& request) {
  json doc;
  doc["image_media"] = request.image_media;
  doc["image_payload_b64"] = base64_encode(request.image_payload);
  doc["model"] = request.model_name;
  doc["seed"] = request.seed ? json(*request.seed) : json(nullptr);
  doc["system"] = request.system_text;
  doc["temperature"] = format_temperature(request.temperature);
  doc["user"] = request.user_text;
  return doc.dump();
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0x0f]);
  }
  return out;
}

std::string cache_key(const ChatRequest& request, BackendKind kind, const std::string& model_name) {
  std::string bytes = canonical_request_bytes(request);
  bytes.push_back('\n');
  bytes.append(to_string(kind));
  bytes.push_back('\n');
  bytes.append(model_name);
  return sha256_hex(bytes);
}

ScriptedTable ScriptedTable::single(std::string response) {
  ScriptedTable table;
  table.entries["*"] = {std::move(response)};
  return table;
}

ScriptedTable ScriptedTable::from_json_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("scripted table is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("scripted table must be a JSON object");
  ScriptedTable table;
  for (const auto& [key, value] : doc.items()) {
    std::vector<std::string> responses;
    if (value.is_string()) {
      responses.push_back(value.get<std::string>());
    } else if (value.is_array() && !value.empty()) {
      for (const auto& item : value) {
        if (!item.is_string()) throw SchemaError("scripted table sequences must hold strings");
        responses.push_back(item.get<std::string>());
      }
    } else {
      throw SchemaError("scripted table values must be strings or non-empty string arrays");
    }
    table.entries[key] = std::move(responses);
  }
  if (table.entries.empty()) throw SchemaError("scripted table has no entries");
  return table;
}

ScriptedTable ScriptedTable::load(const std::filesystem::path& path) {
  return from_json_text(read_file_text(path));
}

void validate_handle(const BackendHandle& handle) {
  switch (handle.kind) {
    case BackendKind::Http:
      if (handle.endpoint.empty()) throw ValidationError("http backend requires an endpoint");
      break;
    case BackendKind::Scripted:
      if (handle.scripted.entries.empty()) {
        throw ValidationError("scripted backend requires a response table");
      }
      break;
    case BackendKind::Replay:
      if (handle.cache_dir.empty()) throw ValidationError("replay backend requires a cache dir");
      break;
  }
  if (handle.max_transport_retries < 0) throw ValidationError("max_transport_retries must be >= 0");
  if (handle.timeout.count() <= 0) throw ValidationError("timeout must be positive");
}

ScriptedBackend::ScriptedBackend(ScriptedTable table) : table_(std::move(table)) {
  if (table_.entries.empty()) throw ValidationError("scripted backend requires a response table");
}

std::string ScriptedBackend::complete(const ChatRequest& request) {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = table_.entries.find(request.user_text);
  if (it == table_.entries.end()) it = table_.entries.find("*");
  if (it == table_.entries.end()) {
    throw BackendError(BackendError::Kind::MalformedResponse,
                       "scripted table has no entry for request");
  }
  std::size_t& cursor = cursor_[it->first];
  const auto& responses = it->second;
  std::string response = responses[std::min(cursor, responses.size() - 1)];
  if (cursor + 1 < responses.size()) ++cursor;
  ++requests_served_;
  return response;
}

namespace {

struct EndpointParts {
  std::string base;  // scheme://host[:port]
  std::string path_prefix;
};

EndpointParts split_endpoint(const std::string& endpoint) {
  auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw ValidationError("endpoint must include a scheme: " + endpoint);
  }
  auto path_start = endpoint.find('/', scheme_end + 3);
  EndpointParts parts;
  if (path_start == std::string::npos) {
    parts.base = endpoint;
  } else {
    parts.base = endpoint.substr(0, path_start);
    parts.path_prefix = endpoint.substr(path_start);
    while (!parts.path_prefix.empty() && parts.path_prefix.back() == '/') {
      parts.path_prefix.pop_back();
    }
  }
  return parts;
}

json wire_request_body(const ChatRequest& request) {
  json user_content = json::array();
  user_content.push_back({{"type", "text"}, {"text", request.user_text}});
  if (!request.image_payload.empty()) {
    std::string url = "data:" + request.image_media + ";base64," +
                      base64_encode(request.image_payload);
    user_content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
  }
  json body;
  body["model"] = request.model_name;
  body["temperature"] = request.temperature;
  if (request.seed) body["seed"] = *request.seed;
  body["messages"] = json::array({
      json{{"role", "system"}, {"content", request.system_text}},
      json{{"role", "user"}, {"content", user_content}},
  });
  return body;
}

std::string extract_response_text(const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::exception&) {
    throw BackendError(BackendError::Kind::MalformedResponse, "response body is not valid JSON");
  }
  if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
    throw BackendError(BackendError::Kind::MalformedResponse, "response has no choices");
  }
  const json& message = doc["choices"][0].value("message", json());
  if (!message.is_object() || !message.contains("content")) {
    throw BackendError(BackendError::Kind::MalformedResponse, "choice has no message content");
  }
  const json& content = message["content"];
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string joined;
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text") {
        joined += part.value("text", "");
      }
    }
    if (!joined.empty()) return joined;
  }
  throw BackendError(BackendError::Kind::MalformedResponse, "message content is not text");
}

bool retriable_status(int status) {
  return status == 408 || status == 429 || (status >= 500 && status < 600);
}

}  // namespace

long long http_transport_attempts() { return g_transport_attempts.load(); }

HttpBackend::HttpBackend(BackendHandle handle) : handle_(std::move(handle)) {
  validate_handle(handle_);
  if (handle_.kind != BackendKind::Http) throw ValidationError("handle is not an http handle");
  if (!handle_.auth_env.empty()) {
    if (const char* token = std::getenv(handle_.auth_env.c_str())) bearer_token_ = token;
  }
}

std::string HttpBackend::complete(const ChatRequest& request) {
  EndpointParts endpoint = split_endpoint(handle_.endpoint);
  std::string path = endpoint.path_prefix + "/chat/completions";
  std::string body = wire_request_body(request).dump();

  int attempts = handle_.max_transport_retries + 1;
  int last_status = 0;
  std::string last_detail = "no attempt made";
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      auto delay = handle_.retry_backoff * (1LL << (attempt - 1));
      std::this_thread::sleep_for(delay);
    }
    g_transport_attempts.fetch_add(1);

    httplib::Client client(endpoint.base);
    client.set_connection_timeout(handle_.timeout);
    client.set_read_timeout(handle_.timeout);
    client.set_write_timeout(handle_.timeout);
    httplib::Headers headers;
    if (!bearer_token_.empty()) headers.emplace("Authorization", "Bearer " + bearer_token_);

    auto result = client.Post(path, headers, body, "application/json");
    if (!result) {
      last_status = 0;
      last_detail = "transport failure: " + httplib::to_string(result.error());
      continue;
    }
    int status = result->status;
    if (status == 401 || status == 403) {
      throw BackendError(BackendError::Kind::Auth,
                         "endpoint rejected credentials (HTTP " + std::to_string(status) +
                             "); check " + handle_.auth_env);
    }
    if (retriable_status(status)) {
      last_status = status;
      last_detail = "HTTP " + std::to_string(status);
      continue;
    }
    if (status != 200) {
      throw BackendError(BackendError::Kind::Transport,
                         "endpoint returned HTTP " + std::to_string(status));
    }
    std::string text = extract_response_text(result->body);
    ++requests_served_;
    return text;
  }

  if (last_status == 429) {
    throw BackendError(BackendError::Kind::RateLimitExhausted,
                       "rate limited after " + std::to_string(attempts) + " attempts");
  }
  throw BackendError(BackendError::Kind::Transport,
                     "request failed after " + std::to_string(attempts) + " attempts (" +
                         last_detail + ")");
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (dir_.empty()) throw ValidationError("cache dir must not be empty");
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ResponseCache::entry_path(const std::string& key) const {
  return dir_ / (key + ".json");
}

void ResponseCache::write_meta(const CacheMeta& meta) {
  json doc;
  doc["backend_kind"] = std::string(to_string(meta.backend_kind));
  doc["model_name"] = meta.model_name;
  atomic_write_file(dir_ / "cache-meta.json", doc.dump(2) + "\n");
}

std::optional<CacheMeta> ResponseCache::read_meta() const {
  auto path = dir_ / "cache-meta.json";
  if (!std::filesystem::exists(path)) return std::nullopt;
  json doc;
  try {
    doc = json::parse(read_file_text(path));
  } catch (const json::exception& e) {
    throw SchemaError("malformed cache-meta.json: " + std::string(e.what()));
  }
  CacheMeta meta;
  auto kind = backend_kind_from_string(doc.value("backend_kind", ""));
  if (!kind) throw SchemaError("cache-meta.json has an unknown backend_kind");
  meta.backend_kind = *kind;
  meta.model_name = doc.value("model_name", "");
  return meta;
}

void ResponseCache::store(const CacheEntry& entry) {
  if (!is_hex_key(entry.key)) throw ValidationError("cache key is not a sha256 hex digest");
  atomic_write_file(entry_path(entry.key), entry_to_json(entry).dump(2) + "\n");
}

std::optional<CacheEntry> ResponseCache::lookup(const std::string& key) const {
  auto path = entry_path(key);
  if (!std::filesystem::exists(path)) return std::nullopt;
  json doc;
  try {
    doc = json::parse(read_file_text(path));
  } catch (const json::exception& e) {
    throw SchemaError("malformed cache entry " + path.string() + ": " + std::string(e.what()));
  }
  return entry_from_json(doc, path);
}

void ResponseCache::append_journal(const std::string& key) {
  std::lock_guard<std::mutex> lock(journal_mutex_);
  std::ofstream out(dir_ / "journal.jsonl", std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to journal in " + dir_.string());
  json line;
  line["key"] = key;
  line["timestamp"] = utc_timestamp();
  out << line.dump() << "\n";
  out.flush();
  if (!out) throw IoError("short write to journal in " + dir_.string());
}

std::vector<std::string> ResponseCache::journal_keys() const {
  std::vector<std::string> keys;
  std::ifstream in(dir_ / "journal.jsonl", std::ios::binary);
  if (!in) return keys;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      json doc = json::parse(line);
      keys.push_back(doc.at("key").get<std::string>());
    } catch (const json::exception& e) {
      throw SchemaError("malformed journal line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return keys;
}

std::vector<std::string> ResponseCache::entry_keys() const {
  std::vector<std::string> keys;
  if (!std::filesystem::exists(dir_)) return keys;
  for (const auto& item : std::filesystem::directory_iterator(dir_)) {
    if (!item.is_regular_file() || item.path().extension() != ".json") continue;
    std::string stem = item.path().stem().string();
    if (is_hex_key(stem)) keys.push_back(stem);
  }
  std::sort(keys.begin(), keys.end());
  return keys;
}

CacheVerifyResult ResponseCache::verify() const {
  auto meta = read_meta();
  if (!meta) throw IoError("cache has no cache-meta.json: " + dir_.string());
  CacheVerifyResult result;
  for (const auto& key : entry_keys()) {
    ++result.entries;
    std::optional<CacheEntry> entry;
    try {
      entry = lookup(key);
    } catch (const Error&) {
      result.corrupt_keys.push_back(key);
      continue;
    }
    if (!entry) {
      result.corrupt_keys.push_back(key);
      continue;
    }
    std::string bytes = entry->request_canonical;
    bytes.push_back('\n');
    bytes.append(to_string(entry->backend_kind));
    bytes.push_back('\n');
    bytes.append(meta->model_name);
    if (entry->key != key || sha256_hex(bytes) != key) result.corrupt_keys.push_back(key);
  }
  std::sort(result.corrupt_keys.begin(), result.corrupt_keys.end());
  return result;
}

int ResponseCache::gc() {
  auto journal = journal_keys();
  std::sort(journal.begin(), journal.end());
  int removed = 0;
  for (const auto& key : entry_keys()) {
    if (std::binary_search(journal.begin(), journal.end(), key)) continue;
    std::error_code ec;
    if (std::filesystem::remove(entry_path(key), ec)) ++removed;
  }
  return removed;
}

ReplayBackend::ReplayBackend(std::filesystem::path cache_dir) : cache_(std::move(cache_dir)) {
  auto meta = cache_.read_meta();
  if (!meta) {
    throw IoError("replay cache has no cache-meta.json: " + cache_.dir().string());
  }
  meta_ = *meta;
}

std::string ReplayBackend::complete(const ChatRequest& request) {
  std::string key = cache_key(request, meta_.backend_kind, meta_.model_name);
  auto entry = cache_.lookup(key);
  if (!entry) throw CacheMissError(key);
  ++requests_served_;
  return entry->response_text;
}

RecordingBackend::RecordingBackend(std::unique_ptr<Backend> inner, std::filesystem::path cache_dir,
                                   std::string model_name)
    : inner_(std::move(inner)), cache_(std::move(cache_dir)), model_name_(std::move(model_name)) {
  if (!inner_) throw ValidationError("recording backend requires an inner backend");
  cache_.write_meta(CacheMeta{inner_->kind(), model_name_});
}

std::string RecordingBackend::complete(const ChatRequest& request) {
  std::string response = inner_->complete(request);
  CacheEntry entry;
  entry.key = cache_key(request, inner_->kind(), model_name_);
  entry.backend_kind = inner_->kind();
  entry.request_canonical = canonical_request_bytes(request);
  entry.response_text = response;
  entry.timestamp = utc_timestamp();
  cache_.store(entry);
  cache_.append_journal(entry.key);
  ++requests_served_;
  return response;
}

std::unique_ptr<Backend> make_backend(const BackendHandle& handle) {
  validate_handle(handle);
  switch (handle.kind) {
    case BackendKind::Http: return std::make_unique<HttpBackend>(handle);
    case BackendKind::Scripted: return std::make_unique<ScriptedBackend>(handle.scripted);
    case BackendKind::Replay: return std::make_unique<ReplayBackend>(handle.cache_dir);
  }
  throw Error("unknown backend kind");
}

}  // namespace sqi
