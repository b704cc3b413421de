#include "harmony/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <mutex>
#include <shared_mutex>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "harmony/single_flight.hpp"

namespace harmony::gateway {

namespace {

using nlohmann::json;
using catalogue::Actor;
using catalogue::Role;

constexpr std::string_view kOpenStart = "0001-01-01T00:00:00Z";
constexpr std::string_view kOpenEnd = "9999-12-31T23:59:59Z";

[[noreturn]] void config_error(const std::string& msg) { throw Error(Errc::InvalidConfig, msg); }
[[noreturn]] void binding_error(const std::string& msg) { throw Error(Errc::SchemaViolation, msg); }

std::filesystem::path config_path(const json& doc, const char* key, const std::filesystem::path& base) {
  const auto& v = doc.at(key);
  if (!v.is_string()) config_error(std::string(key) + " must be a path string");
  std::filesystem::path p(v.get<std::string>());
  return p.is_absolute() ? p : base / p;
}

std::optional<std::filesystem::path> optional_path(const json& doc, const char* key,
                                                   const std::filesystem::path& base) {
  if (!doc.contains(key)) return std::nullopt;
  return config_path(doc, key, base);
}

std::string string_at(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) binding_error(where + ": '" + key + "' must be a string");
  return it->get<std::string>();
}

class FeedHub {
 public:
  struct Subscriber {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::string> queue;
    bool closed = false;
  };

  std::shared_ptr<Subscriber> subscribe(const std::string& channel) {
    auto sub = std::make_shared<Subscriber>();
    std::lock_guard lock(mu_);
    if (closed_) sub->closed = true;
    channels_[channel].push_back(sub);
    return sub;
  }

  void unsubscribe(const std::string& channel, const std::shared_ptr<Subscriber>& sub) {
    std::lock_guard lock(mu_);
    auto it = channels_.find(channel);
    if (it == channels_.end()) return;
    auto& subs = it->second;
    subs.erase(std::remove(subs.begin(), subs.end(), sub), subs.end());
    if (subs.empty()) channels_.erase(it);
  }

  void publish(const std::string& channel, const std::string& message) {
    std::lock_guard lock(mu_);
    auto it = channels_.find(channel);
    if (it == channels_.end()) return;
    for (const auto& sub : it->second) {
      {
        std::lock_guard sl(sub->mu);
        sub->queue.push_back(message);
      }
      sub->cv.notify_one();
    }
  }

  std::size_t count(const std::string& channel) const {
    std::lock_guard lock(mu_);
    auto it = channels_.find(channel);
    return it == channels_.end() ? 0 : it->second.size();
  }

  void close_all() {
    std::lock_guard lock(mu_);
    closed_ = true;
    for (auto& [_, subs] : channels_) {
      for (const auto& sub : subs) {
        {
          std::lock_guard sl(sub->mu);
          sub->closed = true;
        }
        sub->cv.notify_all();
      }
    }
  }

 private:
  mutable std::mutex mu_;
  bool closed_ = false;
  std::map<std::string, std::vector<std::shared_ptr<Subscriber>>> channels_;
};

std::string channel_of(const std::string& record_id) { return "data." + record_id; }

std::string bearer_token(const httplib::Request& req) {
  const auto h = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (h.size() <= prefix.size() || h.compare(0, prefix.size(), prefix) != 0) return {};
  return h.substr(prefix.size());
}

std::optional<std::string> param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  return req.get_param_value(name);
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  send_json(res, {{"error", code}, {"message", message}}, status);
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw Error(Errc::SyntaxError, std::string("request body is not JSON: ") + e.what());
  }
}

// Splits http://host[:port]/path into the client origin and the path.
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

int http_status(Errc code) {
  switch (code) {
    case Errc::Unauthorized: return 401;
    case Errc::Forbidden: return 403;
    case Errc::NotFound:
    case Errc::UnknownDistribution: return 404;
    case Errc::IllegalTransition:
    case Errc::NotApproved: return 409;
    case Errc::SchemaViolation:
    case Errc::UnknownVocabularyTerm: return 422;
    case Errc::InvalidRange:
    case Errc::SyntaxError: return 400;
    case Errc::UpstreamUnavailable: return 502;
    default: return 500;
  }
}

std::string sse_escape(std::string_view payload) {
  std::string out;
  out.reserve(payload.size());
  for (char c : payload) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out;
}

GatewayConfig parse_config(const json& doc, const std::filesystem::path& base) {
  if (!doc.is_object()) config_error("config must be a JSON object");
  GatewayConfig c;
  c.base_dir = base;
  try {
    c.host = doc.value("host", c.host);
    c.port = doc.value("port", c.port);
    c.threads = doc.value("threads", c.threads);
    if (c.port < 0 || c.port > 65535) config_error("port out of range");
    if (c.threads < 1) config_error("threads must be positive");
    std::set<std::string> seen;
    for (const auto& t : doc.at("tokens")) {
      TokenEntry e;
      e.token = t.at("token").get<std::string>();
      e.actor.user_id = t.at("userId").get<std::string>();
      const auto role = catalogue::parse_role(t.at("role").get<std::string>());
      if (!role) config_error("unknown role for user " + e.actor.user_id);
      e.actor.role = *role;
      if (e.token.empty() || !seen.insert(e.token).second) config_error("tokens must be unique and non-empty");
      c.tokens.push_back(std::move(e));
    }
    if (doc.contains("secrets")) c.secrets = doc.at("secrets").get<std::map<std::string, std::string>>();
    c.journal_path = optional_path(doc, "journalPath", base);
    c.snapshot_path = optional_path(doc, "snapshotPath", base);
    c.vocab_dir = config_path(doc, "vocabDir", base);
    c.mappings_dir = doc.contains("mappingsDir") ? config_path(doc, "mappingsDir", base) : base;
    c.templates_dir = doc.contains("templatesDir") ? config_path(doc, "templatesDir", base) : base;
    if (doc.contains("pipelinesDir")) c.pipelines_dir = config_path(doc, "pipelinesDir", base);
    c.bindings_path = optional_path(doc, "bindingsPath", base);
    c.seed_path = optional_path(doc, "seedPath", base);
    if (doc.contains("bindings")) {
      c.bindings = doc.at("bindings");
      if (!c.bindings.is_array()) config_error("bindings must be a list");
    }
  } catch (const json::exception& e) {
    config_error(std::string("bad server config: ") + e.what());
  }
  return c;
}

GatewayConfig load_config(const std::filesystem::path& file) {
  json doc;
  try {
    doc = json::parse(pipeline::read_text(file));
  } catch (const json::parse_error& e) {
    config_error(file.string() + ": " + e.what());
  }
  return parse_config(doc, file.has_parent_path() ? file.parent_path() : std::filesystem::path("."));
}

SourceBinding parse_binding(const json& body) {
  if (!body.is_object()) binding_error("binding must be a JSON object");
  SourceBinding b;
  b.raw = body;
  b.record_id = string_at(body, "recordId", "binding");
  const auto fetch = body.find("fetch");
  if (fetch == body.end() || !fetch->is_object()) binding_error("binding: 'fetch' must be an object");
  const auto kind = string_at(*fetch, "kind", "fetch");
  if (kind == "http") {
    b.fetch.kind = FetchSpec::Kind::Http;
    b.fetch.url = string_at(*fetch, "url", "fetch");
    if (b.fetch.url.rfind("http://", 0) != 0) binding_error("fetch: only http:// upstreams are supported");
  } else if (kind == "file") {
    b.fetch.kind = FetchSpec::Kind::File;
    b.fetch.path = string_at(*fetch, "path", "fetch");
  } else if (kind == "inline") {
    b.fetch.kind = FetchSpec::Kind::Inline;
    b.fetch.body = string_at(*fetch, "body", "fetch");
  } else {
    binding_error("fetch: kind must be http, file or inline");
  }
  if (fetch->contains("mediaType")) b.fetch.media_type = string_at(*fetch, "mediaType", "fetch");
  if (fetch->contains("authRef")) b.fetch.auth_ref = string_at(*fetch, "authRef", "fetch");
  if (auto h = fetch->find("headers"); h != fetch->end()) {
    if (!h->is_object()) binding_error("fetch: headers must be an object");
    for (const auto& [k, v] : h->items()) {
      if (!v.is_string()) binding_error("fetch: header values must be strings");
      b.fetch.headers[k] = v.get<std::string>();
    }
  }
  if (body.contains("pipelineRef")) b.pipeline_ref = string_at(body, "pipelineRef", "binding");
  if (body.contains("sourceName")) b.source_name = string_at(body, "sourceName", "binding");

  auto prefixes = rdf::PrefixMap::with_defaults();
  if (auto p = body.find("prefixes"); p != body.end()) {
    if (!p->is_object()) binding_error("binding: prefixes must be an object");
    for (const auto& [k, v] : p->items()) prefixes.bind(k, v.get<std::string>());
  }
  if (auto pm = body.find("paramMap"); pm != body.end()) {
    if (!pm->is_object()) binding_error("binding: paramMap must be an object");
    std::optional<std::string> from, to;
    try {
      if (pm->contains("from")) from = prefixes.expand(string_at(*pm, "from", "paramMap"));
      if (pm->contains("to")) to = prefixes.expand(string_at(*pm, "to", "paramMap"));
      if (auto bb = pm->find("bbox"); bb != pm->end()) {
        b.params.lat = prefixes.expand(string_at(*bb, "lat", "paramMap.bbox"));
        b.params.lon = prefixes.expand(string_at(*bb, "lon", "paramMap.bbox"));
      }
    } catch (const Error& e) {
      if (e.code() != Errc::UnknownPrefix) throw;
      binding_error(e.what());
    }
    if (from && to && *from != *to) binding_error("paramMap: from and to must map to the same predicate");
    b.params.temporal = from ? from : to;
  }
  if (auto ttl = body.find("cacheTtlSeconds"); ttl != body.end()) {
    if (!ttl->is_number_unsigned()) binding_error("cacheTtlSeconds must be a non-negative integer");
    b.cache_ttl_seconds = ttl->get<std::uint64_t>();
  }
  return b;
}

struct Gateway::Impl {
  GatewayConfig cfg;
  std::unique_ptr<catalogue::Catalogue> cat;
  std::map<std::string, Actor> tokens;
  std::map<std::string, std::shared_ptr<const pipeline::CompiledPipeline>> pipelines;

  std::mutex variants_mu;
  std::map<std::string, std::shared_ptr<const pipeline::CompiledPipeline>> variants;

  mutable std::shared_mutex bindings_mu;
  std::map<std::string, SourceBinding> bindings;

  TtlCache<std::string, DataResponse> cache;
  std::atomic<std::size_t> fetches{0};
  FeedHub hub;

  httplib::Server server;
  std::thread thread;
  int bound_port = 0;
  std::atomic<bool> running{false};

  explicit Impl(GatewayConfig c) : cfg(std::move(c)) {
    for (const auto& t : cfg.tokens) tokens[t.token] = t.actor;
    auto vocab = catalogue::load_vocabularies(cfg.vocab_dir);
    cat = cfg.journal_path ? catalogue::Catalogue::open(std::move(vocab), *cfg.journal_path, cfg.snapshot_path)
                           : std::make_unique<catalogue::Catalogue>(std::move(vocab));
    if (cfg.seed_path && cat->size() == 0) seed();
    load_pipelines();
    if (cfg.bindings_path && std::filesystem::exists(*cfg.bindings_path)) {
      for (const auto& b : json::parse(pipeline::read_text(*cfg.bindings_path))) register_binding(b, false);
    }
    for (const auto& b : cfg.bindings) register_binding(b, false);
    persist_bindings();
  }

  void seed() {
    const Actor* publisher = nullptr;
    const Actor* tmb = nullptr;
    for (const auto& t : cfg.tokens) {
      if (!publisher && t.actor.role == Role::Publisher) publisher = &t.actor;
      if (!tmb && t.actor.role == Role::Tmb) tmb = &t.actor;
    }
    if (!publisher || !tmb) config_error("seeding needs a publisher and a tmb token");
    catalogue::apply_seed(*cat, json::parse(pipeline::read_text(*cfg.seed_path)), *publisher, *tmb);
  }

  void load_pipelines() {
    if (cfg.pipelines_dir.empty()) return;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(cfg.pipelines_dir)) {
      if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto p = std::make_shared<pipeline::CompiledPipeline>(
          pipeline::load_pipeline(f, {f.parent_path(), cfg.mappings_dir, cfg.templates_dir}));
      const auto id = p->id();
      if (!pipelines.emplace(id, std::move(p)).second) config_error("duplicate pipeline id '" + id + "'");
    }
  }

  SourceBinding register_binding(const json& body, bool persist) {
    auto b = parse_binding(body);
    const auto rec = cat->get(b.record_id);
    if (!rec) binding_error("no catalogue record '" + b.record_id + "'");
    if (rec->refresh_period_seconds && b.cache_ttl_seconds > *rec->refresh_period_seconds) {
      binding_error("cacheTtlSeconds exceeds the record's refreshPeriodSeconds");
    }
    if (b.fetch.auth_ref && !cfg.secrets.count(*b.fetch.auth_ref)) {
      binding_error("unknown secret '" + *b.fetch.auth_ref + "'");
    }
    if (b.fetch.kind == FetchSpec::Kind::File && b.fetch.path.is_relative()) b.fetch.path = cfg.base_dir / b.fetch.path;
    if (b.pipeline_ref) {
      auto it = pipelines.find(*b.pipeline_ref);
      if (it == pipelines.end()) binding_error("unknown pipeline '" + *b.pipeline_ref + "'");
      const auto dyn = it->second->dynamic_sources();
      if (b.source_name) {
        if (std::find(dyn.begin(), dyn.end(), *b.source_name) == dyn.end()) {
          binding_error("pipeline '" + *b.pipeline_ref + "' has no source '" + *b.source_name + "'");
        }
      } else if (dyn.size() != 1) {
        binding_error("pipeline '" + *b.pipeline_ref + "' needs sourceName");
      } else {
        b.source_name = dyn.front();
      }
    }
    {
      std::unique_lock lock(bindings_mu);
      bindings[b.record_id] = b;
    }
    cache.clear();
    if (persist) persist_bindings();
    return b;
  }

  void persist_bindings() {
    if (!cfg.bindings_path) return;
    json all = json::array();
    {
      std::shared_lock lock(bindings_mu);
      for (const auto& [_, b] : bindings) all.push_back(b.raw);
    }
    pipeline::write_text(*cfg.bindings_path, all.dump(2) + "\n");
  }

  std::pair<std::string, std::string> fetch(const SourceBinding& b) {
    ++fetches;
    switch (b.fetch.kind) {
      case FetchSpec::Kind::Inline: return {b.fetch.body, b.fetch.media_type};
      case FetchSpec::Kind::File:
        try {
          return {pipeline::read_text(b.fetch.path), b.fetch.media_type};
        } catch (const Error& e) {
          throw Error(Errc::UpstreamUnavailable, e.what());
        }
      case FetchSpec::Kind::Http: {
        const auto [origin, path] = split_url(b.fetch.url);
        httplib::Client client(origin);
        client.set_connection_timeout(5);
        client.set_read_timeout(10);
        httplib::Headers headers(b.fetch.headers.begin(), b.fetch.headers.end());
        if (b.fetch.auth_ref) {
          const auto& env = cfg.secrets.at(*b.fetch.auth_ref);
          const char* secret = std::getenv(env.c_str());
          if (!secret) throw Error(Errc::UpstreamUnavailable, "secret variable " + env + " is not set");
          headers.emplace("Authorization", std::string("Bearer ") + secret);
        }
        auto res = client.Get(path, headers);
        if (!res) throw Error(Errc::UpstreamUnavailable, b.fetch.url + ": " + httplib::to_string(res.error()));
        if (res->status != 200) {
          throw Error(Errc::UpstreamUnavailable, b.fetch.url + ": status " + std::to_string(res->status));
        }
        return {res->body, b.fetch.media_type.empty() ? res->get_header_value("Content-Type") : b.fetch.media_type};
      }
    }
    throw Error(Errc::UpstreamUnavailable, "unsupported fetch kind");
  }

  std::shared_ptr<const pipeline::CompiledPipeline> variant(const std::string& pipeline_id,
                                                            const std::string& template_id) {
    const auto key = pipeline_id + "\x1f" + template_id;
    std::lock_guard lock(variants_mu);
    if (auto it = variants.find(key); it != variants.end()) return it->second;
    const auto path = cfg.templates_dir / (template_id + ".lot");
    std::shared_ptr<const lower::Template> tpl;
    try {
      tpl = std::make_shared<lower::Template>(lower::parse_template(pipeline::read_text(path)));
    } catch (const Error& e) {
      throw Error(Errc::PipelineError, "template '" + template_id + "': " + e.what());
    }
    auto p = pipelines.at(pipeline_id)->with_template(std::move(tpl));
    variants.emplace(key, p);
    return p;
  }

  DataResponse data(const std::string& record_id, const DataQuery& q) {
    const auto rec = cat->get(record_id);
    if (!rec) throw Error(Errc::NotFound, "unknown record '" + record_id + "'");
    if (rec->status != "approved") throw Error(Errc::NotApproved, "record " + record_id + " is " + rec->status);
    std::optional<SourceBinding> b;
    {
      std::shared_lock lock(bindings_mu);
      if (auto it = bindings.find(record_id); it != bindings.end()) b = it->second;
    }
    if (!b) throw Error(Errc::NotFound, "no integration registered for " + record_id);

    const catalogue::Distribution* dist = nullptr;
    if (q.distribution) {
      dist = rec->find_distribution(*q.distribution);
      if (!dist) throw Error(Errc::UnknownDistribution, "record " + record_id + " has no distribution " + *q.distribution);
    }
    const bool raw = !dist || dist->semantics_tag == "raw";

    std::shared_ptr<const pipeline::CompiledPipeline> pipe;
    std::vector<pipeline::RuntimeFilter> filters;
    std::string source_name;
    if (!raw) {
      const auto& tag = dist->semantics_tag;
      if (tag.rfind("harmonised:", 0) == 0) {
        if (!b->pipeline_ref) throw Error(Errc::UnknownDistribution, "no pipeline bound to " + record_id);
        pipe = variant(*b->pipeline_ref, tag.substr(11));
        source_name = *b->source_name;
      } else {
        const auto id = tag.substr(6);
        auto it = pipelines.find(id);
        if (it == pipelines.end()) throw Error(Errc::UnknownDistribution, "unknown pipeline '" + id + "'");
        pipe = it->second;
        const auto dyn = pipe->dynamic_sources();
        if (b->source_name && std::find(dyn.begin(), dyn.end(), *b->source_name) != dyn.end()) {
          source_name = *b->source_name;
        } else if (dyn.size() == 1) {
          source_name = dyn.front();
        } else {
          throw Error(Errc::PipelineError, "pipeline '" + id + "' needs more than one source");
        }
      }
      if (q.from || q.to) {
        if (!b->params.temporal) throw Error(Errc::InvalidRange, "from/to are not supported for " + record_id);
        filters.emplace_back(pipeline::TemporalStep{*b->params.temporal, q.from.value_or(std::string(kOpenStart)),
                                                    q.to.value_or(std::string(kOpenEnd))});
      }
      if (q.bbox) {
        if (!b->params.lat || !b->params.lon) throw Error(Errc::InvalidRange, "bbox is not supported for " + record_id);
        filters.emplace_back(pipeline::BBoxStep{*b->params.lat, *b->params.lon, ops::parse_bbox(*q.bbox)});
      }
    }

    const auto key = record_id + "\x1f" + q.distribution.value_or("") + "\x1f" + q.from.value_or("") + "\x1f" +
                     q.to.value_or("") + "\x1f" + q.bbox.value_or("");
    const auto ttl = std::chrono::milliseconds(b->cache_ttl_seconds * 1000);
    auto compute = [&]() -> DataResponse {
      auto [bytes, media_type] = fetch(*b);
      if (raw) {
        if (media_type.empty()) media_type = dist ? dist->format : "application/octet-stream";
        return {std::move(bytes), std::move(media_type), std::nullopt, false};
      }
      auto result = pipe->run({{source_name, std::move(bytes)}}, filters);
      if (!result.output) throw Error(Errc::PipelineError, "pipeline for " + record_id + " has no lowering");
      hub.publish(channel_of(record_id), *result.output);
      return {std::move(*result.output), dist->format, result.millis, false};
    };
    try {
      auto hit = cache.get_or_compute(key, ttl, compute);
      hit.value.cache_hit = hit.hit;
      return hit.value;
    } catch (const Error& e) {
      if (e.code() != Errc::UpstreamUnavailable) throw;
      if (auto stale = cache.stale(key)) {
        spdlog::warn("serving stale {} after upstream failure: {}", record_id, e.what());
        stale->cache_hit = true;
        return *stale;
      }
      throw;
    }
  }

  Actor actor_of(const httplib::Request& req) const {
    const auto token = bearer_token(req);
    auto it = tokens.find(token);
    if (token.empty() || it == tokens.end()) throw Error(Errc::Unauthorized, "missing or unknown bearer token");
    return it->second;
  }

  template <typename F>
  httplib::Server::Handler guarded(F&& f) {
    return [this, f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        const int status = http_status(e.code());
        if (status >= 500) spdlog::warn("{} {} -> {}: {}", req.method, req.path, status, e.what());
        send_error(res, status, to_string(e.code()), e.what());
      } catch (const std::exception& e) {
        spdlog::error("{} {} -> 500: {}", req.method, req.path, e.what());
        send_error(res, 500, "InternalError", e.what());
      }
    };
  }

  int bind() {
    const int port = cfg.port == 0 ? server.bind_to_any_port(cfg.host)
                                   : (server.bind_to_port(cfg.host, cfg.port) ? cfg.port : -1);
    if (port < 0) throw Error(Errc::Io, "cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
    bound_port = port;
    running = true;
    spdlog::info("gateway listening on {}:{}", cfg.host, port);
    return port;
  }

  void routes() {
    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });

    server.Get("/catalogue/vocabularies", guarded([this](const httplib::Request&, httplib::Response& res) {
                 send_json(res, catalogue::vocabularies_to_json(cat->vocabularies()));
               }));

    server.Get("/catalogue/records", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 if (param(req, "format") == "ntriples") {
                   res.set_content(rdf::serialize_ntriples(cat->export_rdf()), "application/n-triples");
                   return;
                 }
                 catalogue::SearchFilters f;
                 f.text = param(req, "text");
                 f.status = param(req, "status");
                 f.data_requirement = param(req, "dataRequirement");
                 f.source_type = param(req, "sourceType");
                 f.case_study = param(req, "caseStudy");
                 f.format = param(req, "format");
                 json out = json::array();
                 for (const auto& r : cat->search(f)) out.push_back(catalogue::to_json(r));
                 send_json(res, out);
               }));

    server.Post("/catalogue/records", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto actor = actor_of(req);
                  send_json(res, catalogue::to_json(cat->create(actor, parse_body(req))), 201);
                }));

    server.Get(R"(/catalogue/records/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const std::string id = req.matches[1];
                 if (param(req, "format") == "ntriples") {
                   res.set_content(rdf::serialize_ntriples(cat->export_rdf(id)), "application/n-triples");
                   return;
                 }
                 const auto r = cat->get(id);
                 if (!r) throw Error(Errc::NotFound, "no record '" + id + "'");
                 send_json(res, catalogue::to_json(*r));
               }));

    server.Patch(R"(/catalogue/records/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                   const auto actor = actor_of(req);
                   send_json(res, catalogue::to_json(cat->update(actor, req.matches[1], parse_body(req))));
                 }));

    server.Post(R"(/catalogue/records/([^/]+)/transition)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto actor = actor_of(req);
                  const auto body = parse_body(req);
                  const auto name = body.is_object() ? body.value("action", std::string()) : std::string();
                  const auto action = catalogue::parse_action(name);
                  if (!action) throw Error(Errc::SchemaViolation, "unknown action '" + name + "'");
                  send_json(res, catalogue::to_json(cat->transition(actor, req.matches[1], *action)));
                }));

    server.Post("/catalogue/harvest", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto actor = actor_of(req);
                  const auto report = cat->harvest_import(rdf::parse_ntriples(req.body), actor);
                  json records = json::array();
                  for (const auto& r : report.records) records.push_back(catalogue::to_json(r));
                  send_json(res, {{"records", records}, {"warnings", report.warnings}});
                }));

    server.Post("/admin/integrations", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto actor = actor_of(req);
                  if (actor.role != Role::Tmb) throw Error(Errc::Forbidden, "integrations are managed by tmb");
                  send_json(res, register_binding(parse_body(req), true).raw);
                }));

    server.Get("/admin/integrations", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 if (actor_of(req).role != Role::Tmb) throw Error(Errc::Forbidden, "integrations are managed by tmb");
                 json all = json::array();
                 std::shared_lock lock(bindings_mu);
                 for (const auto& [_, b] : bindings) all.push_back(b.raw);
                 send_json(res, all);
               }));

    server.Get(R"(/data/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 actor_of(req);
                 DataQuery q{param(req, "distribution"), param(req, "from"), param(req, "to"), param(req, "bbox")};
                 auto out = data(req.matches[1], q);
                 if (out.pipeline_millis) {
                   char buf[32];
                   std::snprintf(buf, sizeof buf, "%.3f", *out.pipeline_millis);
                   res.set_header("X-Pipeline-Millis", buf);
                 }
                 res.set_header("X-Cache", out.cache_hit ? "hit" : "miss");
                 res.set_content(std::move(out.body), out.content_type);
               }));

    server.Get(R"(/feeds/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 actor_of(req);
                 const std::string id = req.matches[1];
                 const auto rec = cat->get(id);
                 if (!rec) throw Error(Errc::NotFound, "unknown record '" + id + "'");
                 if (rec->status != "approved") throw Error(Errc::NotApproved, "record " + id + " is " + rec->status);
                 const auto channel = channel_of(id);
                 auto sub = hub.subscribe(channel);
                 res.set_header("Cache-Control", "no-cache");
                 res.set_chunked_content_provider(
                     "text/event-stream",
                     [sub, greeted = false](std::size_t, httplib::DataSink& sink) mutable {
                       if (!greeted) {
                         greeted = true;
                         const std::string hello = ": subscribed\n\n";
                         return sink.write(hello.data(), hello.size());
                       }
                       std::deque<std::string> batch;
                       {
                         std::unique_lock lock(sub->mu);
                         sub->cv.wait_for(lock, std::chrono::seconds(5),
                                          [&] { return sub->closed || !sub->queue.empty(); });
                         if (sub->closed && sub->queue.empty()) {
                           sink.done();
                           return true;
                         }
                         batch.swap(sub->queue);
                       }
                       std::string frames;
                       for (const auto& m : batch) frames += "event: data\ndata: " + sse_escape(m) + "\n\n";
                       if (frames.empty()) frames = ": keepalive\n\n";
                       return sink.write(frames.data(), frames.size());
                     },
                     [this, channel, sub](bool) { hub.unsubscribe(channel, sub); });
               }));
  }
};

Gateway::Gateway(GatewayConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {
  const int threads = impl_->cfg.threads;
  impl_->server.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  impl_->server.set_keep_alive_max_count(1000);
  impl_->routes();
}

Gateway::~Gateway() { stop(); }

catalogue::Catalogue& Gateway::catalogue() { return *impl_->cat; }
const GatewayConfig& Gateway::config() const { return impl_->cfg; }

catalogue::Actor Gateway::authenticate(const std::string& token) const {
  auto it = impl_->tokens.find(token);
  if (token.empty() || it == impl_->tokens.end()) throw Error(Errc::Unauthorized, "unknown token");
  return it->second;
}

SourceBinding Gateway::register_binding(const catalogue::Actor& actor, const nlohmann::json& body) {
  if (actor.role != Role::Tmb) throw Error(Errc::Forbidden, "integrations are managed by tmb");
  return impl_->register_binding(body, true);
}

std::optional<SourceBinding> Gateway::binding(const std::string& record_id) const {
  std::shared_lock lock(impl_->bindings_mu);
  auto it = impl_->bindings.find(record_id);
  if (it == impl_->bindings.end()) return std::nullopt;
  return it->second;
}

std::string Gateway::fetch_upstream(const std::string& record_id) {
  auto b = binding(record_id);
  if (!b) throw Error(Errc::NotFound, "no integration registered for " + record_id);
  return impl_->fetch(*b).first;
}

std::shared_ptr<const pipeline::CompiledPipeline> Gateway::pipeline(const std::string& id) const {
  auto it = impl_->pipelines.find(id);
  if (it == impl_->pipelines.end()) return nullptr;
  return it->second;
}

DataResponse Gateway::data(const std::string& record_id, const DataQuery& query) {
  return impl_->data(record_id, query);
}

void Gateway::publish(const std::string& record_id, const std::string& payload) {
  impl_->hub.publish(channel_of(record_id), payload);
}

std::size_t Gateway::subscriber_count(const std::string& record_id) const {
  return impl_->hub.count(channel_of(record_id));
}

std::size_t Gateway::upstream_fetches() const { return impl_->fetches.load(); }

int Gateway::start() {
  const int port = impl_->bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Gateway::run() {
  impl_->bind();
  impl_->server.listen_after_bind();
}

void Gateway::stop() {
  if (!impl_ || !impl_->running.exchange(false)) return;
  impl_->hub.close_all();
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int Gateway::port() const { return impl_->bound_port; }

}  // namespace harmony::gateway
