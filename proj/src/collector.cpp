#include "harmony/collector.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <ctime>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "harmony/csv.hpp"
#include "harmony/error.hpp"
#include "harmony/gateway.hpp"

namespace harmony::collector {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(Errc::InvalidConfig, msg); }

[[noreturn]] void io_error(const std::string& what, const fs::path& p) {
  throw Error(Errc::Io, what + " " + p.string() + ": " + std::strerror(errno));
}

std::string key_of(const csv::Row& row, const std::vector<std::size_t>& idx) {
  std::string key;
  for (std::size_t i : idx) {
    key += row[i];
    key += '\x1f';
  }
  return key;
}

std::optional<TimePoint> mtime_of(const fs::path& p) {
  struct stat st {};
  if (::stat(p.c_str(), &st) != 0) return std::nullopt;
  return TimePoint(std::chrono::duration_cast<TimePoint::duration>(std::chrono::seconds(st.st_mtim.tv_sec) +
                                                                   std::chrono::nanoseconds(st.st_mtim.tv_nsec)));
}

void set_mtime(int fd, TimePoint t) {
  const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(t.time_since_epoch()).count();
  timespec times[2];
  times[0].tv_sec = times[1].tv_sec = static_cast<time_t>(ns / 1'000'000'000);
  times[0].tv_nsec = times[1].tv_nsec = static_cast<long>(ns % 1'000'000'000);
  ::futimens(fd, times);
}

// Appends `chunk` in one piece or not at all.
void append_all_or_nothing(const fs::path& p, const std::string& chunk, TimePoint stamp) {
  const int fd = ::open(p.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) io_error("cannot open", p);
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    io_error("cannot stat", p);
  }
  std::size_t written = 0;
  while (written < chunk.size()) {
    const auto n = ::write(fd, chunk.data() + written, chunk.size() - written);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      const int saved = errno;
      if (::ftruncate(fd, st.st_size) != 0) spdlog::error("cannot roll back {}", p.string());
      ::close(fd);
      errno = saved;
      io_error("cannot append to", p);
    }
    written += static_cast<std::size_t>(n);
  }
  set_mtime(fd, stamp);
  ::close(fd);
}

}  // namespace

// ---------------------------------------------------------------- jobs file

std::vector<CollectionJob> parse_jobs(const json& doc, const fs::path& base_dir) {
  if (!doc.is_array()) config_error("jobs file must be a JSON list");
  std::vector<CollectionJob> jobs;
  std::set<std::string> names;
  for (const auto& j : doc) {
    if (!j.is_object()) config_error("each job must be an object");
    CollectionJob job;
    auto str = [&](const char* key) {
      auto it = j.find(key);
      if (it == j.end() || !it->is_string() || it->get<std::string>().empty()) {
        config_error(std::string("job needs a non-empty string '") + key + "'");
      }
      return it->get<std::string>();
    };
    job.record_id = str("recordId");
    job.pipeline_ref = str("pipelineRef");
    job.output_dir = str("outputDir");
    if (job.output_dir.is_relative()) job.output_dir = base_dir / job.output_dir;
    job.name = j.contains("name") ? str("name") : job.record_id;
    if (job.name.find('/') != std::string::npos) config_error("job name '" + job.name + "' contains '/'");
    auto freq = j.find("frequencySeconds");
    if (freq == j.end() || !freq->is_number_unsigned() || freq->get<std::uint64_t>() < 1) {
      config_error("job " + job.name + ": frequencySeconds must be an integer >= 1");
    }
    job.frequency_seconds = freq->get<std::uint64_t>();
    const auto rotation = j.value("rotation", std::string("none"));
    if (rotation == "daily") {
      job.rotation = Rotation::Daily;
    } else if (rotation != "none") {
      config_error("job " + job.name + ": rotation must be daily or none");
    }
    job.compress = j.value("compress", false);
    if (auto key = j.find("dedupKey"); key != j.end()) {
      if (!key->is_array()) config_error("job " + job.name + ": dedupKey must be a list");
      for (const auto& k : *key) job.dedup_key.push_back(k.get<std::string>());
    }
    if (!names.insert(job.output_dir.string() + "/" + job.name).second) {
      config_error("two jobs write " + job.name + ".csv in the same directory");
    }
    jobs.push_back(std::move(job));
  }
  return jobs;
}

std::vector<CollectionJob> load_jobs(const fs::path& file) {
  json doc;
  try {
    doc = json::parse(pipeline::read_text(file));
  } catch (const json::exception& e) {
    config_error(file.string() + ": " + e.what());
  }
  return parse_jobs(doc, file.parent_path());
}

// ---------------------------------------------------------------- clocks

TimePoint SystemClock::now() { return std::chrono::system_clock::now(); }

void SystemClock::sleep_until(TimePoint deadline) {
  std::unique_lock lock(mu_);
  cv_.wait_until(lock, deadline, [&] { return interrupted_; });
}

void SystemClock::interrupt() {
  {
    std::lock_guard lock(mu_);
    interrupted_ = true;
  }
  cv_.notify_all();
}

void SystemClock::reset() {
  std::lock_guard lock(mu_);
  interrupted_ = false;
}

FakeClock::FakeClock(TimePoint start) : now_(start) {}

TimePoint FakeClock::now() {
  std::lock_guard lock(mu_);
  return now_;
}

void FakeClock::sleep_until(TimePoint deadline) {
  std::unique_lock lock(mu_);
  if (deadline <= now_ || interrupted_) return;
  const auto slot = deadlines_.insert(deadline);
  ++sleeping_;
  maybe_advance();
  cv_.wait(lock, [&] { return now_ >= deadline || interrupted_; });
  --sleeping_;
  deadlines_.erase(slot);
}

void FakeClock::maybe_advance() {
  if (deadlines_.empty() || sleeping_ < participants_) return;
  const auto next = *deadlines_.begin();
  if (next <= now_) return;
  now_ = next;
  cv_.notify_all();
}

void FakeClock::interrupt() {
  {
    std::lock_guard lock(mu_);
    interrupted_ = true;
  }
  cv_.notify_all();
}

void FakeClock::reset() {
  std::lock_guard lock(mu_);
  interrupted_ = false;
}

void FakeClock::enter() {
  std::lock_guard lock(mu_);
  ++participants_;
}

void FakeClock::leave() {
  std::lock_guard lock(mu_);
  --participants_;
  maybe_advance();
}

void FakeClock::advance(std::chrono::nanoseconds d) {
  {
    std::lock_guard lock(mu_);
    now_ += std::chrono::duration_cast<TimePoint::duration>(d);
  }
  cv_.notify_all();
}

TimePoint parse_utc(const std::string& text) {
  std::tm tm{};
  const char* end = ::strptime(text.c_str(), "%Y-%m-%dT%H:%M:%S", &tm);
  if (!end || std::string_view(end) != "Z") throw Error(Errc::InvalidRange, "expected YYYY-MM-DDTHH:MM:SSZ, got '" + text + "'");
  return std::chrono::system_clock::from_time_t(::timegm(&tm));
}

std::string utc_date(TimePoint t) {
  const auto secs = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[16];
  std::strftime(buf, sizeof buf, "%Y-%m-%d", &tm);
  return buf;
}

// ---------------------------------------------------------------- gzip

void gzip_file(const fs::path& in, const fs::path& out) {
  const auto data = pipeline::read_text(in);
  const auto tmp = fs::path(out.string() + ".tmp");
  gzFile gz = gzopen(tmp.c_str(), "wb");
  if (!gz) io_error("cannot create", tmp);
  std::size_t offset = 0;
  while (offset < data.size()) {
    const auto n = static_cast<unsigned>(std::min<std::size_t>(data.size() - offset, 1u << 20));
    if (gzwrite(gz, data.data() + offset, n) != static_cast<int>(n)) {
      gzclose(gz);
      fs::remove(tmp);
      throw Error(Errc::Io, "gzip write failed for " + tmp.string());
    }
    offset += n;
  }
  if (gzclose(gz) != Z_OK) throw Error(Errc::Io, "gzip close failed for " + tmp.string());
  fs::rename(tmp, out);
}

std::string gunzip_file(const fs::path& in) {
  gzFile gz = gzopen(in.c_str(), "rb");
  if (!gz) io_error("cannot open", in);
  std::string out;
  char buf[1 << 16];
  int n = 0;
  while ((n = gzread(gz, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  int err = Z_OK;
  const char* msg = gzerror(gz, &err);
  gzclose(gz);
  if (n < 0 || (err != Z_OK && err != Z_BUF_ERROR)) throw Error(Errc::Io, in.string() + ": " + msg);
  return out;
}

// ---------------------------------------------------------------- gateway wiring

std::vector<JobSource> sources_from_gateway(gateway::Gateway& gw, const std::vector<CollectionJob>& jobs) {
  std::vector<JobSource> out;
  for (const auto& job : jobs) {
    JobSource s;
    s.pipeline = gw.pipeline(job.pipeline_ref);
    if (!s.pipeline) config_error("job " + job.name + ": unknown pipeline '" + job.pipeline_ref + "'");
    const auto b = gw.binding(job.record_id);
    if (!b) config_error("job " + job.name + ": no integration registered for " + job.record_id);
    const auto dyn = s.pipeline->dynamic_sources();
    if (b->source_name && std::find(dyn.begin(), dyn.end(), *b->source_name) != dyn.end()) {
      s.source_name = *b->source_name;
    } else if (dyn.size() == 1) {
      s.source_name = dyn.front();
    } else {
      config_error("job " + job.name + ": cannot tell which pipeline source the upstream feeds");
    }
    s.fetch = [&gw, id = job.record_id] { return gw.fetch_upstream(id); };
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------- collector

struct Collector::State {
  CollectionJob job;
  JobSource source;
  std::vector<std::string> header;
  std::vector<std::size_t> key_idx;
  std::mutex mu;
  std::set<std::string> seen;  // dedup keys in the active file
  fs::path active;
};

Collector::Collector(std::vector<CollectionJob> jobs, std::vector<JobSource> sources, Clock& clock,
                     CollectorOptions options)
    : clock_(clock), options_(std::move(options)) {
  if (jobs.size() != sources.size()) config_error("one source per job is required");
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto st = std::make_unique<State>();
    st->job = std::move(jobs[i]);
    st->source = std::move(sources[i]);
    const auto& job = st->job;
    if (!st->source.pipeline) config_error("job " + job.name + ": no pipeline");
    const auto tpl = st->source.pipeline->lowering();
    if (!tpl || tpl->format != lower::OutputFormat::Csv) {
      config_error("job " + job.name + ": pipeline '" + job.pipeline_ref + "' must end in a csv lowering");
    }
    const auto empty = csv::parse(lower::render(*tpl, rdf::Graph{}));
    if (empty.empty() || empty.front().empty()) {
      config_error("job " + job.name + ": the csv template writes no header line");
    }
    st->header = empty.front();
    const auto& key = job.dedup_key;
    if (key.empty()) {
      for (std::size_t c = 0; c < st->header.size(); ++c) st->key_idx.push_back(c);
    }
    for (const auto& k : key) {
      auto it = std::find(st->header.begin(), st->header.end(), k);
      if (it == st->header.end()) config_error("job " + job.name + ": dedupKey column '" + k + "' is not in the header");
      st->key_idx.push_back(static_cast<std::size_t>(it - st->header.begin()));
    }
    st->active = job.output_dir / (job.name + ".csv");
    fs::create_directories(job.output_dir);
    if (fs::exists(st->active)) {
      const auto rows = csv::parse(pipeline::read_text(st->active));
      if (rows.empty() || rows.front() != st->header) {
        config_error("job " + job.name + ": " + st->active.string() + " has a different header");
      }
      for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() == st->header.size()) st->seen.insert(key_of(rows[r], st->key_idx));
      }
    }
    states_.push_back(std::move(st));
  }
}

Collector::~Collector() = default;

std::size_t Collector::size() const { return states_.size(); }
const CollectionJob& Collector::job(std::size_t i) const { return states_.at(i)->job; }
fs::path Collector::active_path(std::size_t i) const { return states_.at(i)->active; }
const std::vector<std::string>& Collector::columns(std::size_t i) const { return states_.at(i)->header; }

namespace {

std::optional<fs::path> rotate_locked(const CollectionJob& job, const fs::path& active, std::set<std::string>& seen) {
  const auto stamp = mtime_of(active);
  if (!stamp) return std::nullopt;
  const auto stem = job.name + "." + utc_date(*stamp);
  auto target = job.output_dir / (stem + ".csv");
  for (int n = 1; fs::exists(target) || fs::exists(target.string() + ".gz"); ++n) {
    target = job.output_dir / (stem + "." + std::to_string(n) + ".csv");
  }
  fs::rename(active, target);
  seen.clear();
  if (!job.compress) return target;
  const auto gz = fs::path(target.string() + ".gz");
  gzip_file(target, gz);
  fs::remove(target);
  return gz;
}

}  // namespace

std::optional<fs::path> Collector::rotate(std::size_t i) {
  auto& st = *states_.at(i);
  std::lock_guard lock(st.mu);
  return rotate_locked(st.job, st.active, st.seen);
}

std::size_t Collector::run_once(std::size_t i) {
  auto& st = *states_.at(i);
  std::lock_guard lock(st.mu);
  const auto now = clock_.now();
  if (st.job.rotation == Rotation::Daily) {
    // The active file's mtime is the clock time of its last append.
    if (const auto stamp = mtime_of(st.active); stamp && utc_date(*stamp) != utc_date(now)) {
      if (auto to = rotate_locked(st.job, st.active, st.seen)) spdlog::info("{}: rotated to {}", st.job.name, to->string());
    }
  }

  std::string bytes;
  try {
    bytes = st.source.fetch();
  } catch (const Error& e) {
    if (e.code() != Errc::UpstreamUnavailable) throw;
    spdlog::warn("{}: {}", st.job.name, e.what());
    return 0;
  }
  const auto result = st.source.pipeline->run({{st.source.source_name, std::move(bytes)}});
  if (!result.output) throw Error(Errc::PipelineError, "pipeline '" + st.job.pipeline_ref + "' produced no output");

  csv::Row header;
  std::vector<csv::Row> rows;
  try {
    rows = csv::parse(*result.output);
  } catch (const Error& e) {
    throw Error(Errc::PipelineError, "pipeline '" + st.job.pipeline_ref + "' wrote invalid csv: " + e.what());
  }
  if (rows.empty() || rows.front() != st.header) {
    throw Error(Errc::PipelineError, "pipeline '" + st.job.pipeline_ref + "' output header changed");
  }

  std::string chunk;
  const bool fresh = !fs::exists(st.active);
  if (fresh) chunk = csv::format_row(st.header) + "\n";
  std::set<std::string> added;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != st.header.size()) {
      throw Error(Errc::PipelineError, "row " + std::to_string(r + 1) + " has " + std::to_string(row.size()) +
                                           " columns, header has " + std::to_string(st.header.size()));
    }
    auto key = key_of(row, st.key_idx);
    if (st.seen.count(key) || !added.insert(std::move(key)).second) continue;
    chunk += csv::format_row(row);
    chunk += '\n';
  }
  if (!chunk.empty()) append_all_or_nothing(st.active, chunk, now);
  const auto appended = added.size();
  st.seen.merge(added);
  if (options_.on_output) options_.on_output(st.job, *result.output);
  return appended;
}

std::vector<JobStats> Collector::schedule(const ScheduleOptions& options) {
  std::vector<JobStats> stats(states_.size());
  clock_.reset();
  const auto start = clock_.now();
  const auto end = options.duration
                       ? std::optional<TimePoint>(start + std::chrono::duration_cast<TimePoint::duration>(*options.duration))
                       : std::nullopt;
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < states_.size(); ++i) clock_.enter();
  for (std::size_t i = 0; i < states_.size(); ++i) {
    threads.emplace_back([this, i, start, end, &options, &stats] {
      auto& s = stats[i];
      const auto period = std::chrono::duration_cast<TimePoint::duration>(
          std::chrono::seconds(states_[i]->job.frequency_seconds));
      std::mt19937_64 rng(options_.jitter_seed + i);
      // Offsets stay strictly under 5% of the period.
      std::uniform_real_distribution<double> jitter(0.0, 0.049);
      auto tick_time = [&](std::uint64_t k) {
        return start + period * static_cast<TimePoint::rep>(k) +
               std::chrono::duration_cast<TimePoint::duration>(period * jitter(rng));
      };
      std::uint64_t k = 1;
      std::uint64_t fired = 0;
      auto budget_left = [&] { return !options.ticks || fired < *options.ticks; };
      auto fire = tick_time(k);
      while (budget_left() && (!end || fire <= *end)) {
        clock_.sleep_until(fire);
        if (clock_.now() < fire) break;  // interrupted
        ++fired;
        try {
          s.rows += run_once(i);
          ++s.runs;
        } catch (const std::exception& e) {
          ++s.failures;
          spdlog::error("{}: {}", states_[i]->job.name, e.what());
        }
        const auto after = clock_.now();
        fire = tick_time(++k);
        while (fire < after && budget_left() && (!end || fire <= *end)) {
          ++s.skipped;
          ++fired;
          fire = tick_time(++k);
        }
      }
      clock_.leave();
    });
  }
  for (auto& t : threads) t.join();
  return stats;
}

void Collector::stop() { clock_.interrupt(); }

}  // namespace harmony::collector
