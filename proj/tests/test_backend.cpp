#include <atomic>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "sqi/backend.hpp"
#include "sqi/errors.hpp"
#include "sqi/strings.hpp"
#include "helpers.hpp"

using namespace sqi;
using sqi_test::TempDir;

namespace {

ChatRequest sample_request() {
  ChatRequest request;
  request.system_text = "sys";
  request.user_text = "hello";
  request.image_payload = "abc";
  request.image_media = "image/png";
  request.temperature = 0.0;
  request.model_name = "default";
  return request;
}

// Local stub that replays a fixed status sequence, then answers successfully.
class StubServer {
 public:
  explicit StubServer(std::vector<int> statuses) : statuses_(std::move(statuses)) {
    server_.Post("/v1/chat/completions",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   const std::size_t n = hits_.fetch_add(1);
                   {
                     std::lock_guard<std::mutex> lock(mutex_);
                     last_body_ = req.body;
                     last_auth_ = req.get_header_value("Authorization");
                   }
                   if (n < statuses_.size()) {
                     res.status = statuses_[n];
                     res.set_content("{}", "application/json");
                     return;
                   }
                   nlohmann::json body;
                   body["choices"] = {{{"message", {{"content", "FINAL: YES"}}}}};
                   res.set_content(body.dump(), "application/json");
                 });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  std::size_t hits() const { return hits_.load(); }
  std::string last_body() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return last_body_;
  }
  std::string last_auth() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return last_auth_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::vector<int> statuses_;
  std::atomic<std::size_t> hits_{0};
  mutable std::mutex mutex_;
  std::string last_body_;
  std::string last_auth_;
};

BackendHandle http_handle(const std::string& endpoint) {
  BackendHandle handle;
  handle.kind = BackendKind::Http;
  handle.endpoint = endpoint;
  handle.retry_backoff = std::chrono::milliseconds(1);
  return handle;
}

}  // namespace

TEST_CASE("canonical request bytes match the frozen serialization") {
  CHECK(canonical_request_bytes(sample_request()) ==
        "{\"image_media\":\"image/png\",\"image_payload_b64\":\"YWJj\","
        "\"model\":\"default\",\"seed\":null,\"system\":\"sys\","
        "\"temperature\":\"0.000000\",\"user\":\"hello\"}");

  ChatRequest second;
  second.system_text = "analyst";
  second.user_text = "look closely";
  second.image_payload = std::string("\x89PNG\r\n\x1a\n", 8) + "rest";
  second.image_media = "image/jpeg";
  second.temperature = 0.7;
  second.seed = 42;
  second.model_name = "gpt-x";
  CHECK(canonical_request_bytes(second) ==
        "{\"image_media\":\"image/jpeg\",\"image_payload_b64\":\"iVBORw0KGgpyZXN0\","
        "\"model\":\"gpt-x\",\"seed\":42,\"system\":\"analyst\","
        "\"temperature\":\"0.700000\",\"user\":\"look closely\"}");
}

TEST_CASE("sha256 and cache keys match frozen digests") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

  CHECK(cache_key(sample_request(), BackendKind::Scripted, "default") ==
        "cb49daf450e08be1a54f084a4cd55bd00d5cfe8663bf9055735b12ee3d540347");

  ChatRequest second;
  second.system_text = "analyst";
  second.user_text = "look closely";
  second.image_payload = std::string("\x89PNG\r\n\x1a\n", 8) + "rest";
  second.image_media = "image/jpeg";
  second.temperature = 0.7;
  second.seed = 42;
  second.model_name = "gpt-x";
  CHECK(cache_key(second, BackendKind::Http, "gpt-x") ==
        "b1679f97861138b58bf305033dd6979b0dbdd3888bb376ba1476318b36d36e77");
}

TEST_CASE("every request field participates in the cache key") {
  const ChatRequest base = sample_request();
  const std::string base_key = cache_key(base, BackendKind::Scripted, "default");

  std::vector<ChatRequest> variants(7, base);
  variants[0].system_text = "sys2";
  variants[1].user_text = "hello2";
  variants[2].image_payload = "abd";
  variants[3].image_media = "image/jpeg";
  variants[4].temperature = 0.000001;
  variants[5].seed = 0;
  variants[6].model_name = "other";
  for (const auto& variant : variants) {
    CHECK(cache_key(variant, BackendKind::Scripted, "default") != base_key);
  }
  CHECK(cache_key(base, BackendKind::Http, "default") != base_key);
  CHECK(cache_key(base, BackendKind::Scripted, "other") != base_key);
}

TEST_CASE("scripted tables parse strings and sequences") {
  const auto table = ScriptedTable::from_json_text(
      "{\"*\": \"fallback\", \"q\": [\"first\", \"second\"]}");
  CHECK(table.entries.at("*") == std::vector<std::string>{"fallback"});
  CHECK(table.entries.at("q") == std::vector<std::string>{"first", "second"});

  CHECK_THROWS_AS(ScriptedTable::from_json_text("not json"), SchemaError);
  CHECK_THROWS_AS(ScriptedTable::from_json_text("[1,2]"), SchemaError);
  CHECK_THROWS_AS(ScriptedTable::from_json_text("{}"), SchemaError);
  CHECK_THROWS_AS(ScriptedTable::from_json_text("{\"q\": []}"), SchemaError);
  CHECK_THROWS_AS(ScriptedTable::from_json_text("{\"q\": [1]}"), SchemaError);
  CHECK_THROWS_AS(ScriptedTable::from_json_text("{\"q\": 3}"), SchemaError);
}

TEST_CASE("scripted backend consumes sequences and falls back to the wildcard") {
  ScriptedTable table;
  table.entries["q"] = {"first", "second"};
  table.entries["*"] = {"star"};
  ScriptedBackend backend(std::move(table));

  ChatRequest request = sample_request();
  request.user_text = "q";
  CHECK(backend.complete(request) == "first");
  CHECK(backend.complete(request) == "second");
  CHECK(backend.complete(request) == "second");  // last response sticks

  request.user_text = "unknown";
  CHECK(backend.complete(request) == "star");
  CHECK(backend.requests_served() == 4);
  CHECK(backend.kind() == BackendKind::Scripted);

  ScriptedTable bare;
  bare.entries["only"] = {"x"};
  ScriptedBackend strict(std::move(bare));
  try {
    strict.complete(request);
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendError::Kind::MalformedResponse);
  }
}

TEST_CASE("validate_handle enforces per-kind requirements") {
  BackendHandle http;
  http.kind = BackendKind::Http;
  CHECK_THROWS_AS(validate_handle(http), ValidationError);
  http.endpoint = "http://localhost:1/v1";
  CHECK_NOTHROW(validate_handle(http));
  http.max_transport_retries = -1;
  CHECK_THROWS_AS(validate_handle(http), ValidationError);
  http.max_transport_retries = 0;
  http.timeout = std::chrono::milliseconds(0);
  CHECK_THROWS_AS(validate_handle(http), ValidationError);

  BackendHandle scripted;
  scripted.kind = BackendKind::Scripted;
  CHECK_THROWS_AS(validate_handle(scripted), ValidationError);
  scripted.scripted = ScriptedTable::single("x");
  CHECK_NOTHROW(validate_handle(scripted));

  BackendHandle replay;
  replay.kind = BackendKind::Replay;
  CHECK_THROWS_AS(validate_handle(replay), ValidationError);
}

TEST_CASE("response cache stores, lists, and verifies entries") {
  TempDir dir;
  ResponseCache cache(dir.path);
  cache.write_meta(CacheMeta{BackendKind::Scripted, "default"});

  const ChatRequest request = sample_request();
  CacheEntry entry;
  entry.key = cache_key(request, BackendKind::Scripted, "default");
  entry.backend_kind = BackendKind::Scripted;
  entry.request_canonical = canonical_request_bytes(request);
  entry.response_text = "FINAL: YES";
  entry.timestamp = "2024-01-01T00:00:00Z";
  entry.usage = "{\"total_tokens\":12}";
  cache.store(entry);
  cache.append_journal(entry.key);

  const auto loaded = cache.lookup(entry.key);
  REQUIRE(loaded.has_value());
  CHECK(loaded->response_text == "FINAL: YES");
  CHECK(loaded->request_canonical == entry.request_canonical);
  REQUIRE(loaded->usage.has_value());
  CHECK(nlohmann::json::parse(*loaded->usage)["total_tokens"] == 12);
  CHECK(!cache.lookup(sha256_hex("missing")).has_value());

  CHECK(cache.entry_keys() == std::vector<std::string>{entry.key});
  CHECK(cache.journal_keys() == std::vector<std::string>{entry.key});

  const auto meta = cache.read_meta();
  REQUIRE(meta.has_value());
  CHECK(meta->backend_kind == BackendKind::Scripted);
  CHECK(meta->model_name == "default");

  auto verify = cache.verify();
  CHECK(verify.ok());
  CHECK(verify.entries == 1);
  CHECK(cache.gc() == 0);

  CHECK_THROWS_AS(cache.store(CacheEntry{"not-a-key", BackendKind::Scripted, "", "", "", {}}),
                  ValidationError);
}

TEST_CASE("cache verify flags tampered entries and gc removes unjournaled ones") {
  TempDir dir;
  ResponseCache cache(dir.path);
  cache.write_meta(CacheMeta{BackendKind::Scripted, "default"});

  ChatRequest good = sample_request();
  ChatRequest orphan = sample_request();
  orphan.user_text = "orphan";
  for (const auto& request : {good, orphan}) {
    CacheEntry entry;
    entry.key = cache_key(request, BackendKind::Scripted, "default");
    entry.backend_kind = BackendKind::Scripted;
    entry.request_canonical = canonical_request_bytes(request);
    entry.response_text = "x";
    entry.timestamp = "2024-01-01T00:00:00Z";
    cache.store(entry);
  }
  const std::string good_key = cache_key(good, BackendKind::Scripted, "default");
  const std::string orphan_key = cache_key(orphan, BackendKind::Scripted, "default");
  cache.append_journal(good_key);

  // Tamper with the journaled entry's canonical request text.
  {
    auto entry = *cache.lookup(good_key);
    entry.request_canonical += " ";
    cache.store(entry);
  }
  const auto verify = cache.verify();
  CHECK(verify.entries == 2);
  CHECK(verify.corrupt_keys == std::vector<std::string>{good_key});

  CHECK(cache.gc() == 1);
  CHECK(!cache.lookup(orphan_key).has_value());
  CHECK(cache.lookup(good_key).has_value());
}

TEST_CASE("cache survives entries overwritten with non-JSON bytes") {
  TempDir dir;
  ResponseCache cache(dir.path);
  cache.write_meta(CacheMeta{BackendKind::Scripted, "default"});

  const ChatRequest request = sample_request();
  CacheEntry entry;
  entry.key = cache_key(request, BackendKind::Scripted, "default");
  entry.backend_kind = BackendKind::Scripted;
  entry.request_canonical = canonical_request_bytes(request);
  entry.response_text = "x";
  entry.timestamp = "2024-01-01T00:00:00Z";
  cache.store(entry);
  cache.append_journal(entry.key);

  sqi_test::write_file(dir.path / (entry.key + ".json"), "tampered");
  CHECK_THROWS_AS(cache.lookup(entry.key), SchemaError);

  const auto verify = cache.verify();
  CHECK(verify.entries == 1);
  CHECK(verify.corrupt_keys == std::vector<std::string>{entry.key});
}

TEST_CASE("cache verify requires metadata") {
  TempDir dir;
  ResponseCache cache(dir.path);
  CHECK_THROWS_AS(cache.verify(), IoError);
}

TEST_CASE("recording backend persists successes and skips failures") {
  TempDir dir;
  ScriptedTable table;
  table.entries["hello"] = {"FINAL: NO"};
  RecordingBackend recorder(std::make_unique<ScriptedBackend>(std::move(table)), dir.path,
                            "default");

  const auto meta = ResponseCache(dir.path).read_meta();
  REQUIRE(meta.has_value());
  CHECK(meta->backend_kind == BackendKind::Scripted);

  const ChatRequest request = sample_request();
  CHECK(recorder.complete(request) == "FINAL: NO");
  CHECK(recorder.requests_served() == 1);
  CHECK(recorder.kind() == BackendKind::Scripted);

  ChatRequest unmatched = request;
  unmatched.user_text = "no entry for this";
  CHECK_THROWS_AS(recorder.complete(unmatched), BackendError);

  ResponseCache cache(dir.path);
  const std::string key = cache_key(request, BackendKind::Scripted, "default");
  CHECK(cache.entry_keys() == std::vector<std::string>{key});
  CHECK(cache.journal_keys() == std::vector<std::string>{key});
  CHECK(cache.verify().ok());
}

TEST_CASE("replay backend serves recorded responses and misses loudly") {
  TempDir dir;
  {
    RecordingBackend recorder(std::make_unique<ScriptedBackend>(ScriptedTable::single("FINAL: YES")),
                              dir.path, "default");
    recorder.complete(sample_request());
  }

  ReplayBackend replay(dir.path);
  CHECK(replay.kind() == BackendKind::Replay);
  CHECK(replay.complete(sample_request()) == "FINAL: YES");

  ChatRequest missing = sample_request();
  missing.user_text = "never recorded";
  const std::string expected_key = cache_key(missing, BackendKind::Scripted, "default");
  try {
    replay.complete(missing);
    FAIL("expected CacheMissError");
  } catch (const CacheMissError& e) {
    CHECK(e.key() == expected_key);
    CHECK(std::string(e.what()).find(expected_key) != std::string::npos);
  }

  TempDir bare;
  CHECK_THROWS_AS(ReplayBackend(bare.path), IoError);
}

TEST_CASE("concurrent recording keeps every entry and journal line") {
  TempDir dir;
  RecordingBackend recorder(std::make_unique<ScriptedBackend>(ScriptedTable::single("FINAL: YES")),
                            dir.path, "default");

  constexpr int kThreads = 8;
  std::vector<std::thread> workers;
  for (int t = 0; t < kThreads; ++t) {
    workers.emplace_back([&recorder, t] {
      ChatRequest request = sample_request();
      request.user_text = "request " + std::to_string(t);
      recorder.complete(request);
    });
  }
  for (auto& worker : workers) worker.join();

  ResponseCache cache(dir.path);
  CHECK(cache.entry_keys().size() == kThreads);
  CHECK(cache.journal_keys().size() == kThreads);
  CHECK(cache.verify().ok());
  CHECK(recorder.requests_served() == kThreads);
}

TEST_CASE("http backend retries transient statuses and then succeeds") {
  StubServer server({500, 503});
  HttpBackend backend(http_handle(server.endpoint()));

  const long long before = http_transport_attempts();
  ChatRequest request = sample_request();
  request.seed = 7;
  CHECK(backend.complete(request) == "FINAL: YES");
  CHECK(http_transport_attempts() - before == 3);
  CHECK(server.hits() == 3);
  CHECK(backend.requests_served() == 1);

  // The wire body carries the model, sampling knobs, and the image data URL.
  const auto body = nlohmann::json::parse(server.last_body());
  CHECK(body["model"] == "default");
  CHECK(body["temperature"] == 0.0);
  CHECK(body["seed"] == 7);
  REQUIRE(body["messages"].size() == 2);
  CHECK(body["messages"][0]["role"] == "system");
  CHECK(body["messages"][0]["content"] == "sys");
  const auto& user_parts = body["messages"][1]["content"];
  REQUIRE(user_parts.size() == 2);
  CHECK(user_parts[0]["text"] == "hello");
  const std::string url = user_parts[1]["image_url"]["url"];
  CHECK(url == "data:image/png;base64," + base64_encode("abc"));
}

TEST_CASE("http backend sends the bearer token from the configured env var") {
  StubServer server({});
  setenv("SQI_TEST_TOKEN", "sk-test-123", 1);
  BackendHandle handle = http_handle(server.endpoint());
  handle.auth_env = "SQI_TEST_TOKEN";
  HttpBackend backend(handle);
  CHECK(backend.complete(sample_request()) == "FINAL: YES");
  CHECK(server.last_auth() == "Bearer sk-test-123");
  unsetenv("SQI_TEST_TOKEN");
}

TEST_CASE("http backend maps auth and rate-limit failures to error kinds") {
  {
    StubServer server({401, 401, 401});
    HttpBackend backend(http_handle(server.endpoint()));
    try {
      backend.complete(sample_request());
      FAIL("expected BackendError");
    } catch (const BackendError& e) {
      CHECK(e.kind() == BackendError::Kind::Auth);
      CHECK(std::string(e.what()).find("SQI_API_KEY") != std::string::npos);
    }
    CHECK(server.hits() == 1);  // auth failures do not retry
  }
  {
    StubServer server({429, 429, 429});
    HttpBackend backend(http_handle(server.endpoint()));
    try {
      backend.complete(sample_request());
      FAIL("expected BackendError");
    } catch (const BackendError& e) {
      CHECK(e.kind() == BackendError::Kind::RateLimitExhausted);
    }
    CHECK(server.hits() == 3);  // default handle allows two retries
  }
  {
    StubServer server({418});
    HttpBackend backend(http_handle(server.endpoint()));
    try {
      backend.complete(sample_request());
      FAIL("expected BackendError");
    } catch (const BackendError& e) {
      CHECK(e.kind() == BackendError::Kind::Transport);
    }
    CHECK(server.hits() == 1);  // non-retriable status fails fast
  }
}

TEST_CASE("http backend rejects non-JSON response bodies") {
  httplib::Server raw;
  raw.Post("/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("this is not json", "text/plain");
  });
  const int port = raw.bind_to_any_port("127.0.0.1");
  std::thread thread([&raw] { raw.listen_after_bind(); });
  raw.wait_until_ready();

  HttpBackend backend(http_handle("http://127.0.0.1:" + std::to_string(port)));
  try {
    backend.complete(sample_request());
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendError::Kind::MalformedResponse);
  }
  raw.stop();
  thread.join();
}

TEST_CASE("transport failures exhaust retries against an unreachable endpoint") {
  BackendHandle handle = http_handle("http://127.0.0.1:1/v1");
  handle.max_transport_retries = 1;
  handle.timeout = std::chrono::milliseconds(200);
  HttpBackend backend(handle);
  const long long before = http_transport_attempts();
  try {
    backend.complete(sample_request());
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendError::Kind::Transport);
  }
  CHECK(http_transport_attempts() - before == 2);
}

TEST_CASE("make_backend dispatches on the handle kind") {
  BackendHandle scripted;
  scripted.kind = BackendKind::Scripted;
  scripted.scripted = ScriptedTable::single("x");
  CHECK(make_backend(scripted)->kind() == BackendKind::Scripted);

  TempDir dir;
  {
    RecordingBackend recorder(std::make_unique<ScriptedBackend>(ScriptedTable::single("x")),
                              dir.path, "default");
    recorder.complete(sample_request());
  }
  BackendHandle replay;
  replay.kind = BackendKind::Replay;
  replay.cache_dir = dir.path;
  CHECK(make_backend(replay)->kind() == BackendKind::Replay);

  BackendHandle http;
  http.kind = BackendKind::Http;
  http.endpoint = "http://127.0.0.1:1/v1";
  CHECK(make_backend(http)->kind() == BackendKind::Http);
}

TEST_CASE("backend kind names round-trip") {
  for (const BackendKind kind : {BackendKind::Http, BackendKind::Scripted, BackendKind::Replay}) {
    const auto parsed = backend_kind_from_string(to_string(kind));
    REQUIRE(parsed.has_value());
    CHECK(*parsed == kind);
  }
  CHECK(!backend_kind_from_string("grpc").has_value());
}
