#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "harmony/error.hpp"
#include "harmony/rdf.hpp"

namespace harmony::catalogue {

namespace ns {
inline constexpr std::string_view kDcat = "http://www.w3.org/ns/dcat#";
inline constexpr std::string_view kDcterms = "http://purl.org/dc/terms/";
inline constexpr std::string_view kCat = "https://w3id.org/harmony/catalogue#";
inline constexpr std::string_view kRecordBase = "https://w3id.org/harmony/catalogue/record/";
}  // namespace ns

enum class Role { Publisher, Tmb, User };
enum class Action { Submit, Approve, Reject, Revise, Deprecate };
enum class Kind { Dataset, DataService };

std::string_view to_string(Role r);
std::string_view to_string(Action a);
std::string_view to_string(Kind k);
std::optional<Role> parse_role(std::string_view s);
std::optional<Action> parse_action(std::string_view s);

inline constexpr std::string_view kUnclassified = "unclassified";

struct Actor {
  std::string user_id;
  Role role = Role::User;
};

struct Vocabularies {
  std::vector<std::string> statuses;
  std::vector<std::string> data_requirements;
  std::vector<std::string> source_types;
  std::vector<std::string> mandatory_fields;

  bool has_status(std::string_view s) const;
  bool has_requirement(std::string_view s) const;
  bool has_source_type(std::string_view s) const;
};

// Reads status.json, data_requirements.json, source_types.json and
// mandatory_fields.json (each a JSON list of strings) from `dir`.
Vocabularies load_vocabularies(const std::filesystem::path& dir);

nlohmann::json vocabularies_to_json(const Vocabularies& v);

struct Distribution {
  std::string id;
  std::string format;
  std::string semantics_tag;  // raw | harmonised:<templateId> | fused:<pipelineId>
  std::string access_url;

  friend bool operator==(const Distribution&, const Distribution&) = default;
};

struct Record {
  std::string id;
  Kind kind = Kind::Dataset;
  std::string title;
  std::string description;
  std::string publisher_org;
  std::string case_study;
  std::string data_requirement;
  std::string source_type;
  std::string status;
  std::optional<std::uint64_t> refresh_period_seconds;
  std::vector<Distribution> distributions;
  std::string endpoint_url;
  std::string created;
  std::string modified;
  std::string owner;

  const Distribution* find_distribution(std::string_view dist_id) const;

  friend bool operator==(const Record&, const Record&) = default;
};

nlohmann::json to_json(const Record& r);
// Full record including id/status/timestamps (snapshot and journal form).
Record record_from_json(const nlohmann::json& j);

struct Transition {
  std::string from;
  Action action;
  bool by_owner;  // owner of the record, otherwise any tmb
  std::string to;
};

const std::vector<Transition>& transition_table();

struct SearchFilters {
  std::optional<std::string> text;
  std::optional<std::string> status;
  std::optional<std::string> data_requirement;
  std::optional<std::string> source_type;
  std::optional<std::string> case_study;
  std::optional<std::string> format;
};

struct JournalEvent {
  std::string ts;
  std::string actor;
  std::string action;
  std::string record_id;
  nlohmann::json payload;
};

struct HarvestReport {
  std::vector<Record> records;
  std::vector<std::string> warnings;
};

using Clock = std::function<std::string()>;

// ISO 8601 UTC with microseconds, e.g. 2024-03-01T09:00:00.000000Z.
std::string utc_now();

class Catalogue {
 public:
  // In-memory catalogue; with a journal path, existing events are replayed
  // and every mutation is appended.
  explicit Catalogue(Vocabularies vocab, std::optional<std::filesystem::path> journal = {}, Clock clock = utc_now);

  // Loads `snapshot` first (if it exists) and replays only the journal events
  // written after it.
  static std::unique_ptr<Catalogue> open(Vocabularies vocab, const std::filesystem::path& journal,
                                         const std::optional<std::filesystem::path>& snapshot = {},
                                         Clock clock = utc_now);

  const Vocabularies& vocabularies() const noexcept { return vocab_; }

  // `draft` uses the JSON field names of the API (title, dataRequirement, ...).
  Record create(const Actor& actor, const nlohmann::json& draft);
  Record update(const Actor& actor, const std::string& id, const nlohmann::json& patch);
  Record transition(const Actor& actor, const std::string& id, Action action);
  HarvestReport harvest_import(const rdf::Graph& g, const Actor& actor);

  std::optional<Record> get(const std::string& id) const;
  std::vector<Record> search(const SearchFilters& filters = {}) const;
  rdf::Graph export_rdf(const std::optional<std::string>& id = {}) const;

  std::size_t size() const;
  std::size_t event_count() const;

  // Canonical serialization of the whole state (records sorted by id).
  std::string state_json() const;
  void write_snapshot(const std::filesystem::path& path) const;

 private:
  void append(JournalEvent ev);
  void apply(const JournalEvent& ev);
  std::string next_id();
  void validate(const Record& r) const;

  Vocabularies vocab_;
  std::optional<std::filesystem::path> journal_;
  Clock clock_;
  mutable std::shared_mutex mu_;
  std::map<std::string, Record> records_;
  std::size_t events_ = 0;
  std::uint64_t next_seq_ = 1;
};

std::vector<JournalEvent> read_journal(const std::filesystem::path& path);

// Seed file: list of {"record": draft, "targetStatus": status}. Each draft is
// created by `publisher` and driven to its target status with `tmb` reviewing.
std::vector<Record> apply_seed(Catalogue& c, const nlohmann::json& seed, const Actor& publisher, const Actor& tmb);

}  // namespace harmony::catalogue
