#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harmony/catalogue.hpp"
#include "harmony/pipeline.hpp"

namespace harmony::gateway {

struct TokenEntry {
  std::string token;
  catalogue::Actor actor;
};

// Server config file (JSON). Relative paths resolve against the file's
// directory.
//   {port, host?, threads?, tokens: [{token, userId, role}], secrets: {name: envVar},
//    journalPath, snapshotPath?, vocabDir, mappingsDir, templatesDir, pipelinesDir,
//    bindingsPath?, bindings?: [SourceBinding...], seedPath?}
struct GatewayConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  int threads = 32;
  std::vector<TokenEntry> tokens;
  std::map<std::string, std::string> secrets;
  std::optional<std::filesystem::path> journal_path;
  std::optional<std::filesystem::path> snapshot_path;
  std::filesystem::path vocab_dir;
  std::filesystem::path mappings_dir;
  std::filesystem::path templates_dir;
  std::filesystem::path pipelines_dir;
  std::optional<std::filesystem::path> bindings_path;
  std::optional<std::filesystem::path> seed_path;
  std::filesystem::path base_dir;
  nlohmann::json bindings = nlohmann::json::array();
};

// Throws InvalidConfig.
GatewayConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
GatewayConfig load_config(const std::filesystem::path& file);

struct FetchSpec {
  enum class Kind { Http, File, Inline };
  Kind kind = Kind::File;
  std::string url;
  std::filesystem::path path;
  std::string body;
  std::string media_type;
  std::map<std::string, std::string> headers;
  std::optional<std::string> auth_ref;
};

struct ParamMap {
  std::optional<std::string> temporal;  // predicate for from/to
  std::optional<std::string> lat;       // predicates for bbox
  std::optional<std::string> lon;
};

struct SourceBinding {
  std::string record_id;
  FetchSpec fetch;
  std::optional<std::string> pipeline_ref;
  std::optional<std::string> source_name;
  ParamMap params;
  std::uint64_t cache_ttl_seconds = 0;
  nlohmann::json raw;  // the registered body, for idempotence and persistence
};

// Structural parse only; cross-checks happen on registration.
SourceBinding parse_binding(const nlohmann::json& body);

struct DataQuery {
  std::optional<std::string> distribution;
  std::optional<std::string> from;
  std::optional<std::string> to;
  std::optional<std::string> bbox;
};

struct DataResponse {
  std::string body;
  std::string content_type;
  std::optional<double> pipeline_millis;
  bool cache_hit = false;
};

// HTTP status for a library error code.
int http_status(Errc code);

// Escapes a payload for a single SSE `data:` line.
std::string sse_escape(std::string_view payload);

class Gateway {
 public:
  explicit Gateway(GatewayConfig config);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  catalogue::Catalogue& catalogue();
  const GatewayConfig& config() const;

  // Throws Unauthorized for an unknown token.
  catalogue::Actor authenticate(const std::string& bearer_token) const;

  // Throws Forbidden (non-tmb), SchemaViolation (invariant breach) or
  // NotFound (unknown record) .
  SourceBinding register_binding(const catalogue::Actor& actor, const nlohmann::json& body);
  std::optional<SourceBinding> binding(const std::string& record_id) const;

  // Raw upstream bytes for a bound record, bypassing cache and the approval
  // gate (collector use). Throws NotFound or UpstreamUnavailable.
  std::string fetch_upstream(const std::string& record_id);
  std::shared_ptr<const pipeline::CompiledPipeline> pipeline(const std::string& id) const;

  DataResponse data(const std::string& record_id, const DataQuery& query);

  // Pushes `payload` to every subscriber of data.{recordId}.
  void publish(const std::string& record_id, const std::string& payload);
  std::size_t subscriber_count(const std::string& record_id) const;

  // Counts upstream fetches (for cache tests).
  std::size_t upstream_fetches() const;

  // Binds and serves on a background thread; returns the bound port.
  int start();
  // Binds and serves on the calling thread until stop().
  void run();
  void stop();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace harmony::gateway
