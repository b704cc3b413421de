#include "harmony/cli.hpp"

#include <pthread.h>
#include <signal.h>

#include <atomic>
#include <functional>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "harmony/catalogue.hpp"
#include "harmony/collector.hpp"
#include "harmony/error.hpp"
#include "harmony/gateway.hpp"
#include "harmony/graph_ops.hpp"
#include "harmony/lowering.hpp"
#include "harmony/mapping.hpp"
#include "harmony/pipeline.hpp"
#include "harmony/rdf.hpp"

#ifndef HARMONY_DEFAULT_VOCAB_DIR
#define HARMONY_DEFAULT_VOCAB_DIR "vocab"
#endif

namespace harmony::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using pipeline::read_text;

namespace {

// Raised for well-formed invocations whose input fails a static check.
struct ValidationFailure {
  std::string message;
};

struct UsageFailure {
  std::string message;
};

std::pair<std::string, fs::path> split_assignment(const std::string& arg, const char* flag) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size()) {
    throw UsageFailure{std::string(flag) + " expects name=path, got '" + arg + "'"};
  }
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

lift::SourceSet read_sources(const std::vector<std::string>& args) {
  lift::SourceSet out;
  for (const auto& a : args) {
    auto [name, path] = split_assignment(a, "--source");
    if (!out.emplace(name, read_text(path)).second) throw UsageFailure{"source '" + name + "' given twice"};
  }
  return out;
}

// Runs `body` until it returns, stopping it on SIGINT or SIGTERM.
void with_signal_stop(const std::function<void()>& body, const std::function<void()>& stop) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  sigset_t previous;
  pthread_sigmask(SIG_BLOCK, &set, &previous);
  std::atomic<bool> done{false};
  std::thread waiter([&] {
    const timespec tick{0, 200'000'000};
    while (!done) {
      if (sigtimedwait(&set, nullptr, &tick) > 0) {
        spdlog::info("stopping");
        stop();
        return;
      }
    }
  });
  try {
    body();
  } catch (...) {
    done = true;
    waiter.join();
    pthread_sigmask(SIG_SETMASK, &previous, nullptr);
    throw;
  }
  done = true;
  waiter.join();
  pthread_sigmask(SIG_SETMASK, &previous, nullptr);
}

class Commands {
 public:
  explicit Commands(std::ostream& out) : out_(out) {}

  void lift(const fs::path& mapping_file, const std::vector<std::string>& sources,
            const std::vector<std::string>& lookups) {
    const auto mapping = lift::parse_mapping(read_text(mapping_file));
    lift::LookupSet tables;
    for (const auto& a : lookups) {
      auto [name, path] = split_assignment(a, "--lookup");
      tables.insert_or_assign(name, lift::LookupTable::from_csv(name, read_text(path)));
    }
    for (const auto& ref : mapping.lookups) {
      if (tables.count(ref.name)) continue;
      const auto path = mapping_file.parent_path() / ref.csv_path;
      tables.emplace(ref.name, lift::LookupTable::from_csv(ref.name, read_text(path)));
    }
    out_ << rdf::serialize_ntriples(lift::lift(mapping, read_sources(sources), tables));
  }

  void lower(const fs::path& template_file, const fs::path& graph_file) {
    const auto tpl = lower::parse_template(read_text(template_file));
    out_ << lower::render(tpl, rdf::parse_ntriples(read_text(graph_file)));
  }

  void pipeline_run(const fs::path& spec, const std::vector<std::string>& sources,
                    const std::optional<fs::path>& emit_graph) {
    const auto p = pipeline::load_pipeline(spec);
    const auto given = read_sources(sources);
    for (const auto& name : p.dynamic_sources()) {
      if (!given.count(name)) throw UsageFailure{"pipeline '" + p.id() + "' needs --source " + name + "=<file>"};
    }
    const auto result = p.run(given);
    if (emit_graph) pipeline::write_text(*emit_graph, rdf::serialize_ntriples(result.graph));
    if (result.output) {
      out_ << *result.output;
    } else {
      out_ << rdf::serialize_ntriples(result.graph);
    }
  }

  void validate(const fs::path& shapes_file, const fs::path& graph_file) {
    const auto shapes = ops::parse_shapes(read_text(shapes_file));
    const auto report = ops::validate(rdf::parse_ntriples(read_text(graph_file)), shapes);
    out_ << ops::report_to_json(report) << "\n";
    if (!report.conforms) {
      throw ValidationFailure{graph_file.string() + ": " + std::to_string(report.violations.size()) +
                              " violation(s)"};
    }
  }

  void mapping_check(const fs::path& file) {
    const auto text = read_text(file);
    try {
      const auto m = lift::parse_mapping(text);
      out_ << file.string() << ": ok (" << m.maps.size() << " entity maps, " << m.lookups.size()
           << " lookups)\n";
    } catch (const Error& e) {
      throw ValidationFailure{file.string() + ": " + e.what()};
    }
  }

  void template_check(const fs::path& file) {
    const auto text = read_text(file);
    try {
      const auto t = lower::parse_template(text);
      const auto s = lower::stats(t);
      out_ << file.string() << ": ok (" << lower::to_string(t.format) << ", " << s.queries << " queries, "
           << s.for_blocks << " loops)\n";
    } catch (const Error& e) {
      throw ValidationFailure{file.string() + ": " + e.what()};
    }
  }

  void serve(const fs::path& config, const std::optional<fs::path>& jobs) {
    gateway::Gateway gw(gateway::load_config(config));
    std::unique_ptr<collector::SystemClock> clock;
    std::unique_ptr<collector::Collector> coll;
    if (jobs) {
      const auto list = collector::load_jobs(*jobs);
      clock = std::make_unique<collector::SystemClock>();
      coll = std::make_unique<collector::Collector>(list, collector::sources_from_gateway(gw, list), *clock,
                                                    publish_to(gw));
    }
    std::thread collecting;
    if (coll) collecting = std::thread([&] { coll->schedule({}); });
    with_signal_stop([&] { gw.run(); },
                     [&] {
                       if (coll) coll->stop();
                       gw.stop();
                     });
    if (coll) {
      coll->stop();
      collecting.join();
    }
  }

  void collect(const fs::path& jobs_file, const fs::path& config, std::optional<std::uint64_t> ticks,
               std::optional<double> duration, bool fake, const std::optional<std::string>& start) {
    if (fake && !ticks && !duration) throw UsageFailure{"--fake-clock needs --ticks or --duration"};
    if (start && !fake) throw UsageFailure{"--start only applies with --fake-clock"};
    gateway::Gateway gw(gateway::load_config(config));
    const auto jobs = collector::load_jobs(jobs_file);
    std::unique_ptr<collector::Clock> clock;
    if (fake) {
      clock = std::make_unique<collector::FakeClock>(start ? collector::parse_utc(*start)
                                                          : std::chrono::system_clock::now());
    } else {
      clock = std::make_unique<collector::SystemClock>();
    }
    collector::Collector coll(jobs, collector::sources_from_gateway(gw, jobs), *clock, publish_to(gw));
    collector::ScheduleOptions options;
    options.ticks = ticks;
    if (duration) {
      options.duration = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::duration<double>(*duration));
    }
    std::vector<collector::JobStats> stats;
    with_signal_stop([&] { stats = coll.schedule(options); }, [&] { coll.stop(); });
    json summary = json::array();
    for (std::size_t i = 0; i < coll.size(); ++i) {
      summary.push_back({{"name", coll.job(i).name},
                         {"recordId", coll.job(i).record_id},
                         {"runs", stats[i].runs},
                         {"skipped", stats[i].skipped},
                         {"failures", stats[i].failures},
                         {"rows", stats[i].rows},
                         {"file", coll.active_path(i).string()}});
    }
    out_ << summary.dump(2) << "\n";
  }

  void catalogue_export(const fs::path& journal, const fs::path& vocab, const std::optional<fs::path>& snapshot) {
    if (!fs::exists(journal)) throw Error(Errc::Io, "no journal at " + journal.string());
    const auto cat = catalogue::Catalogue::open(catalogue::load_vocabularies(vocab), journal, snapshot);
    out_ << rdf::serialize_ntriples(cat->export_rdf());
  }

 private:
  static collector::CollectorOptions publish_to(gateway::Gateway& gw) {
    collector::CollectorOptions o;
    o.on_output = [&gw](const collector::CollectionJob& job, const std::string& output) {
      gw.publish(job.record_id, output);
    };
    return o;
  }

  std::ostream& out_;
};

// Routes library logging to `err` for the duration of one invocation.
class LogToStream {
 public:
  explicit LogToStream(std::ostream& err) : previous_(spdlog::default_logger()) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
    auto logger = std::make_shared<spdlog::logger>("harmony", sink);
    logger->set_pattern("%Y-%m-%dT%H:%M:%S.%e %^%l%$ %v");
    spdlog::set_default_logger(logger);
  }
  ~LogToStream() { spdlog::set_default_logger(previous_); }

 private:
  std::shared_ptr<spdlog::logger> previous_;
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  LogToStream logging(err);
  Commands cmd(out);
  std::function<void()> action;

  CLI::App app{"Lift, transform and serve mobility data", "harmony"};
  app.require_subcommand(1);

  std::string mapping_file, template_file, graph_file, spec_file, shapes_file, config_file, jobs_file, journal;
  std::string vocab_dir = HARMONY_DEFAULT_VOCAB_DIR;
  std::vector<std::string> sources, lookups;
  std::optional<std::string> emit_graph, serve_jobs, snapshot, start;
  std::optional<std::uint64_t> ticks;
  std::optional<double> duration;
  bool fake_clock = false;

  auto* lift = app.add_subcommand("lift", "Lift sources to sorted N-Triples");
  lift->add_option("--mapping", mapping_file, "Lifting mapping (JSON)")->required();
  lift->add_option("--source", sources, "name=file, repeatable")->required();
  lift->add_option("--lookup", lookups, "name=csv, overrides the mapping's csvPath");
  lift->callback([&] { action = [&] { cmd.lift(mapping_file, sources, lookups); }; });

  auto* lower = app.add_subcommand("lower", "Render a template over an N-Triples graph");
  lower->add_option("--template", template_file, "Lowering template (.lot)")->required();
  lower->add_option("--graph", graph_file, "N-Triples graph")->required();
  lower->callback([&] { action = [&] { cmd.lower(template_file, graph_file); }; });

  auto* pipe = app.add_subcommand("pipeline", "Pipeline commands");
  pipe->require_subcommand(1);
  auto* pipe_run = pipe->add_subcommand("run", "Run a pipeline spec");
  pipe_run->add_option("--spec", spec_file, "Pipeline spec (JSON)")->required();
  pipe_run->add_option("--source", sources, "name=file, repeatable");
  pipe_run->add_option("--emit-graph", emit_graph, "Also write the graph before lowering");
  pipe_run->callback([&] {
    action = [&] {
      cmd.pipeline_run(spec_file, sources, emit_graph ? std::optional<fs::path>(*emit_graph) : std::nullopt);
    };
  });

  auto* validate = app.add_subcommand("validate", "Validate a graph against shapes");
  validate->add_option("--shapes", shapes_file, "Shapes (JSON)")->required();
  validate->add_option("--graph", graph_file, "N-Triples graph")->required();
  validate->callback([&] { action = [&] { cmd.validate(shapes_file, graph_file); }; });

  auto* mapping = app.add_subcommand("mapping", "Mapping commands");
  mapping->require_subcommand(1);
  auto* mapping_check = mapping->add_subcommand("check", "Statically check a mapping");
  mapping_check->add_option("file", mapping_file)->required();
  mapping_check->callback([&] { action = [&] { cmd.mapping_check(mapping_file); }; });

  auto* tpl = app.add_subcommand("template", "Template commands");
  tpl->require_subcommand(1);
  auto* template_check = tpl->add_subcommand("check", "Statically check a template");
  template_check->add_option("file", template_file)->required();
  template_check->callback([&] { action = [&] { cmd.template_check(template_file); }; });

  auto* serve = app.add_subcommand("serve", "Run the gateway");
  serve->add_option("--config", config_file, "Server config (JSON)")->required();
  serve->add_option("--jobs", serve_jobs, "Also run these collection jobs");
  serve->callback([&] {
    action = [&] { cmd.serve(config_file, serve_jobs ? std::optional<fs::path>(*serve_jobs) : std::nullopt); };
  });

  auto* collect = app.add_subcommand("collect", "Run collection jobs");
  collect->add_option("--jobs", jobs_file, "Jobs file (JSON list)")->required();
  collect->add_option("--config", config_file, "Server config holding the bindings and pipelines")->required();
  collect->add_option("--ticks", ticks, "Stop after N ticks per job");
  collect->add_option("--duration", duration, "Stop after this many seconds");
  collect->add_flag("--fake-clock", fake_clock, "Simulated time; runs without waiting");
  collect->add_option("--start", start, "Fake clock start, YYYY-MM-DDTHH:MM:SSZ");
  collect->callback([&] {
    action = [&] { cmd.collect(jobs_file, config_file, ticks, duration, fake_clock, start); };
  });

  auto* cat = app.add_subcommand("catalogue", "Catalogue commands");
  cat->require_subcommand(1);
  auto* cat_export = cat->add_subcommand("export", "Export every record as N-Triples");
  cat_export->add_option("--journal", journal, "Catalogue journal (JSONL)")->required();
  cat_export->add_option("--vocab", vocab_dir, "Vocabulary directory");
  cat_export->add_option("--snapshot", snapshot, "Snapshot written next to the journal");
  cat_export->callback([&] {
    action = [&] {
      cmd.catalogue_export(journal, vocab_dir, snapshot ? std::optional<fs::path>(*snapshot) : std::nullopt);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    action();
    return kOk;
  } catch (const UsageFailure& e) {
    err << "usage: " << e.message << "\n";
    return kUsageError;
  } catch (const ValidationFailure& e) {
    err << "invalid: " << e.message << "\n";
    return kValidationFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace harmony::cli
