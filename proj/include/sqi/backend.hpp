#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sqi/core.hpp"

namespace sqi {

enum class BackendKind { Http, Scripted, Replay };

std::string_view to_string(BackendKind kind);
std::optional<BackendKind> backend_kind_from_string(std::string_view name);

/// One chat-completion request to the frozen model.
struct ChatRequest {
  std::string system_text;
  std::string user_text;
  std::string image_payload;  // raw bytes; empty = text-only request
  std::string image_media;    // mime name, e.g. "image/png"
  double temperature = 0.0;
  std::optional<long long> seed;
  std::string model_name;

  bool operator==(const ChatRequest&) const = default;
};

// Canonical serialization used for hashing: a compact JSON object with the
// keys image_media, image_payload_b64, model, seed, system, temperature, user
// in that (sorted) order; temperature rendered as a fixed "%.6f" string.
std::string canonical_request_bytes(const ChatRequest& request);

std::string sha256_hex(std::string_view bytes);

/// Content address of a response: SHA-256 over the canonical request bytes,
/// the producing backend kind, and the model name.
std::string cache_key(const ChatRequest& request, BackendKind kind, const std::string& model_name);

/// Response table for the scripted backend: exact user_text match with "*"
/// wildcard fallback. A multi-element value is consumed one response per call
/// (the last element repeats); sequences are stateful and meant for
/// single-threaded test fixtures.
struct ScriptedTable {
  std::map<std::string, std::vector<std::string>> entries;

  static ScriptedTable single(std::string response);  // wildcard-only table
  static ScriptedTable from_json_text(std::string_view text);
  static ScriptedTable load(const std::filesystem::path& path);
};

struct BackendHandle {
  BackendKind kind = BackendKind::Scripted;
  std::string endpoint;                      // required for Http
  std::string model_name = "default";
  std::string auth_env = "SQI_API_KEY";      // bearer token env var; empty = no auth header
  std::chrono::milliseconds timeout{30000};
  int max_transport_retries = 2;
  std::chrono::milliseconds retry_backoff{250};  // doubled per attempt
  std::filesystem::path cache_dir;           // required for Replay
  ScriptedTable scripted;                    // required for Scripted
};

void validate_handle(const BackendHandle& handle);

class Backend {
 public:
  virtual ~Backend() = default;

  /// Returns the model's response text for the request. Throws BackendError
  /// (Http after transport retries are exhausted) or CacheMissError (Replay).
  virtual std::string complete(const ChatRequest& request) = 0;

  virtual BackendKind kind() const = 0;

  long long requests_served() const { return requests_served_.load(); }

 protected:
  std::atomic<long long> requests_served_{0};
};

class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(ScriptedTable table);

  std::string complete(const ChatRequest& request) override;
  BackendKind kind() const override { return BackendKind::Scripted; }

 private:
  std::mutex mutex_;
  ScriptedTable table_;
  std::map<std::string, std::size_t> cursor_;
};

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(BackendHandle handle);

  std::string complete(const ChatRequest& request) override;
  BackendKind kind() const override { return BackendKind::Http; }

  const BackendHandle& handle() const { return handle_; }

 private:
  BackendHandle handle_;
  std::string bearer_token_;
};

/// Process-wide count of HTTP transport attempts, for auditing that replay
/// runs perform zero network operations.
long long http_transport_attempts();

struct CacheEntry {
  std::string key;
  BackendKind backend_kind = BackendKind::Http;
  std::string request_canonical;
  std::string response_text;
  std::string timestamp;  // ISO 8601 UTC
  std::optional<std::string> usage;  // raw JSON text when the endpoint reported usage
};

struct CacheMeta {
  BackendKind backend_kind = BackendKind::Http;
  std::string model_name;
};

struct CacheVerifyResult {
  int entries = 0;
  std::vector<std::string> corrupt_keys;

  bool ok() const { return corrupt_keys.empty(); }
};

/// Directory of one immutable JSON file per entry plus an append-only
/// journal. Writes go to a temp file and are renamed into place; journal
/// appends are serialized through one writer.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }

  void write_meta(const CacheMeta& meta);
  std::optional<CacheMeta> read_meta() const;

  void store(const CacheEntry& entry);
  std::optional<CacheEntry> lookup(const std::string& key) const;

  void append_journal(const std::string& key);
  std::vector<std::string> journal_keys() const;
  std::vector<std::string> entry_keys() const;

  CacheVerifyResult verify() const;
  int gc();  // removes entries unreferenced by the journal, returns count

 private:
  std::filesystem::path entry_path(const std::string& key) const;

  std::filesystem::path dir_;
  std::mutex journal_mutex_;
};

class ReplayBackend : public Backend {
 public:
  explicit ReplayBackend(std::filesystem::path cache_dir);

  std::string complete(const ChatRequest& request) override;
  BackendKind kind() const override { return BackendKind::Replay; }

 private:
  ResponseCache cache_;
  CacheMeta meta_;
};

/// Wraps another backend and persists every completed response. Failed calls
/// write no entry.
class RecordingBackend : public Backend {
 public:
  RecordingBackend(std::unique_ptr<Backend> inner, std::filesystem::path cache_dir,
                   std::string model_name);

  std::string complete(const ChatRequest& request) override;
  BackendKind kind() const override { return inner_->kind(); }

  Backend& inner() { return *inner_; }

 private:
  std::unique_ptr<Backend> inner_;
  ResponseCache cache_;
  std::string model_name_;
};

std::unique_ptr<Backend> make_backend(const BackendHandle& handle);

}  // namespace sqi
