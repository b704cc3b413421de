#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harmony/pipeline.hpp"

namespace harmony::gateway {
class Gateway;
}

// Periodic collection of harmonised CSV datasets.
//
// Jobs file (JSON list):
//   [{"recordId": "rec-000001", "name": "detectors", "frequencySeconds": 60,
//     "pipelineRef": "detectors-history", "outputDir": "out", "rotation": "daily",
//     "compress": true, "dedupKey": ["id", "observedAt"]}]
//
// `name` defaults to the record id; the active file is <outputDir>/<name>.csv.
// An empty dedupKey deduplicates on the whole row.
namespace harmony::collector {

enum class Rotation { None, Daily };

struct CollectionJob {
  std::string record_id;
  std::string name;
  std::uint64_t frequency_seconds = 60;
  std::string pipeline_ref;
  std::filesystem::path output_dir;
  Rotation rotation = Rotation::None;
  bool compress = false;
  std::vector<std::string> dedup_key;
};

// Throws InvalidConfig. Relative output dirs resolve against base_dir.
std::vector<CollectionJob> parse_jobs(const nlohmann::json& doc, const std::filesystem::path& base_dir);
std::vector<CollectionJob> load_jobs(const std::filesystem::path& file);

using TimePoint = std::chrono::system_clock::time_point;

class Clock {
 public:
  virtual ~Clock() = default;
  virtual TimePoint now() = 0;
  // Returns early once interrupt() has been called.
  virtual void sleep_until(TimePoint deadline) = 0;
  virtual void interrupt() = 0;
  virtual void reset() = 0;
  // Scheduler threads register so a simulated clock knows when all of them
  // are blocked.
  virtual void enter() {}
  virtual void leave() {}

  void sleep_for(std::chrono::nanoseconds d) { sleep_until(now() + std::chrono::duration_cast<TimePoint::duration>(d)); }
};

class SystemClock final : public Clock {
 public:
  TimePoint now() override;
  void sleep_until(TimePoint deadline) override;
  void interrupt() override;
  void reset() override;

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  bool interrupted_ = false;
};

// Virtual time. Time only moves when every registered participant is asleep;
// it then jumps to the earliest deadline. advance() moves it by hand.
class FakeClock final : public Clock {
 public:
  explicit FakeClock(TimePoint start);

  TimePoint now() override;
  void sleep_until(TimePoint deadline) override;
  void interrupt() override;
  void reset() override;
  void enter() override;
  void leave() override;

  void advance(std::chrono::nanoseconds d);

 private:
  void maybe_advance();

  std::mutex mu_;
  std::condition_variable cv_;
  TimePoint now_;
  std::multiset<TimePoint> deadlines_;
  int participants_ = 0;
  int sleeping_ = 0;
  bool interrupted_ = false;
};

// Parses "YYYY-MM-DDTHH:MM:SSZ" (fake clock start). Throws InvalidRange.
TimePoint parse_utc(const std::string& text);
std::string utc_date(TimePoint t);

struct JobSource {
  std::function<std::string()> fetch;  // throws UpstreamUnavailable
  std::shared_ptr<const pipeline::CompiledPipeline> pipeline;
  std::string source_name;
};

// Resolves each job's pipeline and binding through the gateway. Throws
// InvalidConfig for an unknown pipeline or a record without a binding.
std::vector<JobSource> sources_from_gateway(gateway::Gateway& gw, const std::vector<CollectionJob>& jobs);

struct CollectorOptions {
  // Called with the lowered output after each successful run.
  std::function<void(const CollectionJob&, const std::string&)> on_output;
  std::uint64_t jitter_seed = 0x5eed;
};

struct JobStats {
  std::uint64_t runs = 0;
  std::uint64_t skipped = 0;
  std::uint64_t failures = 0;
  std::uint64_t rows = 0;
};

struct ScheduleOptions {
  std::optional<std::chrono::nanoseconds> duration;
  std::optional<std::uint64_t> ticks;  // per job, counting skipped ticks
};

class Collector {
 public:
  // Checks every job (csv lowering, dedupKey within the header) and rebuilds
  // dedup state from existing active files. Throws InvalidConfig.
  Collector(std::vector<CollectionJob> jobs, std::vector<JobSource> sources, Clock& clock,
            CollectorOptions options = {});
  ~Collector();
  Collector(const Collector&) = delete;
  Collector& operator=(const Collector&) = delete;

  std::size_t size() const;
  const CollectionJob& job(std::size_t i) const;
  std::filesystem::path active_path(std::size_t i) const;
  const std::vector<std::string>& columns(std::size_t i) const;

  // Appended row count. UpstreamUnavailable is logged and yields 0; other
  // failures propagate and leave the file untouched.
  std::size_t run_once(std::size_t i);

  // Moves the active file aside (gzipped when compress is set) and returns
  // the new path, or nothing when there is no active file.
  std::optional<std::filesystem::path> rotate(std::size_t i);

  // Blocks until the duration or tick budget is used up, or stop().
  std::vector<JobStats> schedule(const ScheduleOptions& options);
  void stop();

 private:
  struct State;
  std::vector<std::unique_ptr<State>> states_;
  Clock& clock_;
  CollectorOptions options_;
};

// gzip (RFC 1952) helpers.
void gzip_file(const std::filesystem::path& in, const std::filesystem::path& out);
std::string gunzip_file(const std::filesystem::path& in);

}  // namespace harmony::collector
