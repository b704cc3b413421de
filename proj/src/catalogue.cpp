#include "harmony/catalogue.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>

namespace harmony::catalogue {

namespace {

using nlohmann::json;

constexpr std::string_view kDraft = "draft";
constexpr std::string_view kSubmitted = "submitted";
constexpr std::string_view kApproved = "approved";
constexpr std::string_view kRejected = "rejected";
constexpr std::string_view kDeprecated = "deprecated";

const std::set<std::string, std::less<>> kDraftFields = {
    "kind",      "title",           "description", "publisherOrg",         "caseStudy",
    "dataRequirement", "sourceType", "endpointUrl", "refreshPeriodSeconds", "distributions"};

const std::set<std::string, std::less<>> kReadOnlyFields = {"id", "status", "owner", "created", "modified"};

[[noreturn]] void schema_error(const std::string& msg) { throw Error(Errc::SchemaViolation, msg); }

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_term_list(const std::filesystem::path& p) {
  json doc;
  try {
    doc = json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw Error(Errc::InvalidConfig, p.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw Error(Errc::InvalidConfig, p.string() + ": expected a JSON list");
  std::vector<std::string> out;
  for (const auto& v : doc) {
    if (!v.is_string()) throw Error(Errc::InvalidConfig, p.string() + ": entries must be strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

bool contains(const std::vector<std::string>& list, std::string_view s) {
  return std::find(list.begin(), list.end(), s) != list.end();
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string string_field(const json& v, std::string_view name) {
  if (!v.is_string()) schema_error("'" + std::string(name) + "' must be a string");
  return v.get<std::string>();
}

bool valid_dist_id(std::string_view id) {
  return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

bool valid_semantics_tag(std::string_view tag) {
  if (tag == "raw") return true;
  for (std::string_view prefix : {"harmonised:", "fused:"}) {
    if (tag.substr(0, prefix.size()) == prefix && tag.size() > prefix.size()) return true;
  }
  return false;
}

Distribution parse_distribution(const json& j) {
  if (!j.is_object()) schema_error("distributions must be objects");
  Distribution d;
  for (const auto& [k, v] : j.items()) {
    if (k == "id") {
      d.id = string_field(v, "distributions[].id");
    } else if (k == "format") {
      d.format = string_field(v, "distributions[].format");
    } else if (k == "semanticsTag") {
      d.semantics_tag = string_field(v, "distributions[].semanticsTag");
    } else if (k == "accessUrl") {
      d.access_url = string_field(v, "distributions[].accessUrl");
    } else {
      schema_error("unknown distribution field '" + k + "'");
    }
  }
  if (d.semantics_tag.empty()) d.semantics_tag = "raw";
  return d;
}

// Applies the draft/patch fields of `j` onto `r`.
void apply_fields(Record& r, const json& j) {
  if (!j.is_object()) schema_error("record body must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (kReadOnlyFields.count(k)) schema_error("'" + k + "' cannot be set by clients");
    if (!kDraftFields.count(k)) schema_error("unknown field '" + k + "'");
    if (k == "kind") {
      const auto s = string_field(v, k);
      if (s == "dataset") {
        r.kind = Kind::Dataset;
      } else if (s == "dataService") {
        r.kind = Kind::DataService;
      } else {
        schema_error("kind must be dataset or dataService");
      }
    } else if (k == "title") {
      r.title = string_field(v, k);
    } else if (k == "description") {
      r.description = string_field(v, k);
    } else if (k == "publisherOrg") {
      r.publisher_org = string_field(v, k);
    } else if (k == "caseStudy") {
      r.case_study = string_field(v, k);
    } else if (k == "dataRequirement") {
      r.data_requirement = string_field(v, k);
    } else if (k == "sourceType") {
      r.source_type = string_field(v, k);
    } else if (k == "endpointUrl") {
      r.endpoint_url = string_field(v, k);
    } else if (k == "refreshPeriodSeconds") {
      if (v.is_null()) {
        r.refresh_period_seconds.reset();
      } else if (v.is_number_unsigned()) {
        r.refresh_period_seconds = v.get<std::uint64_t>();
      } else {
        schema_error("refreshPeriodSeconds must be a non-negative integer");
      }
    } else if (k == "distributions") {
      if (!v.is_array()) schema_error("distributions must be a list");
      r.distributions.clear();
      for (const auto& d : v) r.distributions.push_back(parse_distribution(d));
    }
  }
  // Unnamed distributions get the first free d<N>.
  std::set<std::string> used;
  for (const auto& d : r.distributions) used.insert(d.id);
  std::size_t n = 1;
  for (auto& d : r.distributions) {
    if (!d.id.empty()) continue;
    while (used.count("d" + std::to_string(n))) ++n;
    d.id = "d" + std::to_string(n);
    used.insert(d.id);
  }
}

std::string field_value(const Record& r, std::string_view field) {
  if (field == "title") return r.title;
  if (field == "description") return r.description;
  if (field == "publisherOrg") return r.publisher_org;
  if (field == "caseStudy") return r.case_study;
  if (field == "dataRequirement") return r.data_requirement;
  if (field == "sourceType") return r.source_type;
  if (field == "endpointUrl") return r.endpoint_url;
  if (field == "refreshPeriodSeconds") return r.refresh_period_seconds ? "set" : "";
  if (field == "distributions") return r.distributions.empty() ? "" : "set";
  if (field == "kind") return "set";
  return "";
}

void check_mandatory(const Record& r, const std::vector<std::string>& mandatory) {
  std::string missing;
  for (const auto& f : mandatory) {
    if (!field_value(r, f).empty()) continue;
    if (!missing.empty()) missing += ", ";
    missing += f;
  }
  if (!missing.empty()) schema_error("missing mandatory metadata: " + missing);
}

std::string record_iri(const std::string& id) { return std::string(ns::kRecordBase) + id; }

rdf::Term dcat(std::string_view local) { return rdf::Term::iri(std::string(ns::kDcat) + std::string(local)); }
rdf::Term dcterms(std::string_view local) { return rdf::Term::iri(std::string(ns::kDcterms) + std::string(local)); }
rdf::Term cat(std::string_view local) { return rdf::Term::iri(std::string(ns::kCat) + std::string(local)); }

void export_record(const Record& r, rdf::Graph& g) {
  const auto node = rdf::Term::iri(record_iri(r.id));
  const auto lit = [](const std::string& s) { return rdf::Term::literal(s); };
  g.insert(node, rdf::Term::iri(rdf::kRdfType), dcat(r.kind == Kind::Dataset ? "Dataset" : "DataService"));
  g.insert(node, dcterms("identifier"), lit(r.id));
  g.insert(node, dcterms("title"), lit(r.title));
  if (!r.description.empty()) g.insert(node, dcterms("description"), lit(r.description));
  if (!r.publisher_org.empty()) g.insert(node, dcterms("publisher"), lit(r.publisher_org));
  if (!r.case_study.empty()) g.insert(node, cat("caseStudy"), lit(r.case_study));
  g.insert(node, cat("status"), lit(r.status));
  g.insert(node, cat("dataRequirement"), lit(r.data_requirement));
  g.insert(node, cat("sourceType"), lit(r.source_type));
  if (r.refresh_period_seconds) {
    g.insert(node, cat("refreshPeriodSeconds"),
             rdf::Term::literal(std::to_string(*r.refresh_period_seconds), rdf::kXsdInteger));
  }
  g.insert(node, dcterms("created"), rdf::Term::literal(r.created, rdf::kXsdDateTime));
  g.insert(node, dcterms("modified"), rdf::Term::literal(r.modified, rdf::kXsdDateTime));
  if (!r.owner.empty()) g.insert(node, cat("owner"), lit(r.owner));
  if (!r.endpoint_url.empty()) g.insert(node, dcat("endpointURL"), rdf::Term::iri(r.endpoint_url));
  for (const auto& d : r.distributions) {
    const auto dn = rdf::Term::iri(record_iri(r.id) + "/distribution/" + d.id);
    g.insert(node, dcat("distribution"), dn);
    g.insert(dn, rdf::Term::iri(rdf::kRdfType), dcat("Distribution"));
    g.insert(dn, dcterms("identifier"), lit(d.id));
    g.insert(dn, dcat("mediaType"), lit(d.format));
    g.insert(dn, dcat("accessURL"), rdf::Term::iri(d.access_url));
    g.insert(dn, cat("semantics"), lit(d.semantics_tag));
  }
}

std::optional<std::string> first_value(const rdf::Graph& g, const rdf::Term& s, const rdf::Term& p) {
  const auto objs = g.objects(s, p);
  if (objs.empty()) return std::nullopt;
  return objs.front().value();
}

JournalEvent event_from_json(const json& j) {
  JournalEvent ev;
  ev.ts = j.at("ts").get<std::string>();
  ev.actor = j.at("actor").get<std::string>();
  ev.action = j.at("action").get<std::string>();
  ev.record_id = j.at("recordId").get<std::string>();
  ev.payload = j.at("payload");
  return ev;
}

json event_to_json(const JournalEvent& ev) {
  return {{"ts", ev.ts}, {"actor", ev.actor}, {"action", ev.action}, {"recordId", ev.record_id}, {"payload", ev.payload}};
}

}  // namespace

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Publisher: return "publisher";
    case Role::Tmb: return "tmb";
    case Role::User: return "user";
  }
  return "user";
}

std::string_view to_string(Action a) {
  switch (a) {
    case Action::Submit: return "submit";
    case Action::Approve: return "approve";
    case Action::Reject: return "reject";
    case Action::Revise: return "revise";
    case Action::Deprecate: return "deprecate";
  }
  return "submit";
}

std::string_view to_string(Kind k) { return k == Kind::Dataset ? "dataset" : "dataService"; }

std::optional<Role> parse_role(std::string_view s) {
  for (auto r : {Role::Publisher, Role::Tmb, Role::User}) {
    if (to_string(r) == s) return r;
  }
  return std::nullopt;
}

std::optional<Action> parse_action(std::string_view s) {
  for (auto a : {Action::Submit, Action::Approve, Action::Reject, Action::Revise, Action::Deprecate}) {
    if (to_string(a) == s) return a;
  }
  return std::nullopt;
}

bool Vocabularies::has_status(std::string_view s) const { return contains(statuses, s); }
bool Vocabularies::has_requirement(std::string_view s) const { return contains(data_requirements, s); }
bool Vocabularies::has_source_type(std::string_view s) const { return contains(source_types, s); }

Vocabularies load_vocabularies(const std::filesystem::path& dir) {
  Vocabularies v;
  v.statuses = read_term_list(dir / "status.json");
  v.data_requirements = read_term_list(dir / "data_requirements.json");
  v.source_types = read_term_list(dir / "source_types.json");
  v.mandatory_fields = read_term_list(dir / "mandatory_fields.json");
  for (const auto& t : transition_table()) {
    for (const auto& s : {t.from, t.to}) {
      if (!v.has_status(s)) throw Error(Errc::InvalidConfig, "status vocabulary lacks '" + s + "'");
    }
  }
  if (!v.has_requirement(kUnclassified) || !v.has_source_type(kUnclassified)) {
    throw Error(Errc::InvalidConfig, "requirement and source type vocabularies must contain 'unclassified'");
  }
  for (const auto& f : v.mandatory_fields) {
    if (!kDraftFields.count(f)) throw Error(Errc::InvalidConfig, "unknown mandatory field '" + f + "'");
  }
  return v;
}

json vocabularies_to_json(const Vocabularies& v) {
  return {{"statuses", v.statuses},
          {"dataRequirements", v.data_requirements},
          {"sourceTypes", v.source_types},
          {"mandatoryFields", v.mandatory_fields}};
}

const Distribution* Record::find_distribution(std::string_view dist_id) const {
  for (const auto& d : distributions) {
    if (d.id == dist_id) return &d;
  }
  return nullptr;
}

json to_json(const Record& r) {
  json dists = json::array();
  for (const auto& d : r.distributions) {
    dists.push_back({{"id", d.id}, {"format", d.format}, {"semanticsTag", d.semantics_tag}, {"accessUrl", d.access_url}});
  }
  json j = {{"id", r.id},
            {"kind", to_string(r.kind)},
            {"title", r.title},
            {"description", r.description},
            {"publisherOrg", r.publisher_org},
            {"caseStudy", r.case_study},
            {"dataRequirement", r.data_requirement},
            {"sourceType", r.source_type},
            {"status", r.status},
            {"distributions", std::move(dists)},
            {"created", r.created},
            {"modified", r.modified},
            {"owner", r.owner}};
  if (r.refresh_period_seconds) j["refreshPeriodSeconds"] = *r.refresh_period_seconds;
  if (!r.endpoint_url.empty()) j["endpointUrl"] = r.endpoint_url;
  return j;
}

Record record_from_json(const json& j) {
  Record r;
  json fields = json::object();
  for (const auto& [k, v] : j.items()) {
    if (k == "id") {
      r.id = v.get<std::string>();
    } else if (k == "status") {
      r.status = v.get<std::string>();
    } else if (k == "owner") {
      r.owner = v.get<std::string>();
    } else if (k == "created") {
      r.created = v.get<std::string>();
    } else if (k == "modified") {
      r.modified = v.get<std::string>();
    } else {
      fields[k] = v;
    }
  }
  apply_fields(r, fields);
  return r;
}

const std::vector<Transition>& transition_table() {
  static const std::vector<Transition> table = {
      {std::string(kDraft), Action::Submit, true, std::string(kSubmitted)},
      {std::string(kSubmitted), Action::Approve, false, std::string(kApproved)},
      {std::string(kSubmitted), Action::Reject, false, std::string(kRejected)},
      {std::string(kRejected), Action::Revise, true, std::string(kDraft)},
      {std::string(kApproved), Action::Deprecate, false, std::string(kDeprecated)},
  };
  return table;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto us = std::chrono::duration_cast<std::chrono::microseconds>(now.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(us / 1000000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%06lldZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<long long>(us % 1000000));
  return buf;
}

std::vector<JournalEvent> read_journal(const std::filesystem::path& path) {
  std::vector<JournalEvent> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    ++line_no;
    pos = nl == std::string::npos ? text.size() : nl + 1;
    if (line.empty()) continue;
    try {
      out.push_back(event_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      // A torn final line (crash mid-append) is dropped; anything else is corruption.
      if (nl == std::string::npos) break;
      throw Error(Errc::Io, path.string() + ":" + std::to_string(line_no) + ": bad journal entry: " + e.what());
    }
  }
  return out;
}

Catalogue::Catalogue(Vocabularies vocab, std::optional<std::filesystem::path> journal, Clock clock)
    : vocab_(std::move(vocab)), journal_(std::move(journal)), clock_(std::move(clock)) {
  if (journal_) {
    for (const auto& ev : read_journal(*journal_)) apply(ev);
  }
}

std::unique_ptr<Catalogue> Catalogue::open(Vocabularies vocab, const std::filesystem::path& journal,
                                           const std::optional<std::filesystem::path>& snapshot, Clock clock) {
  auto c = std::make_unique<Catalogue>(std::move(vocab), std::nullopt, std::move(clock));
  std::size_t skip = 0;
  if (snapshot && std::filesystem::exists(*snapshot)) {
    const auto doc = json::parse(read_file(*snapshot));
    skip = doc.at("events").get<std::size_t>();
    for (const auto& r : doc.at("records")) {
      auto rec = record_from_json(r);
      c->records_[rec.id] = std::move(rec);
    }
    c->events_ = skip;
    for (const auto& [id, _] : c->records_) {
      if (id.rfind("rec-", 0) == 0) c->next_seq_ = std::max<std::uint64_t>(c->next_seq_, std::stoull(id.substr(4)) + 1);
    }
  }
  const auto events = read_journal(journal);
  if (events.size() < skip) throw Error(Errc::Io, "snapshot is ahead of journal " + journal.string());
  for (std::size_t i = skip; i < events.size(); ++i) c->apply(events[i]);
  c->journal_ = journal;
  return c;
}

std::string Catalogue::next_id() {
  char buf[32];
  std::snprintf(buf, sizeof buf, "rec-%06llu", static_cast<unsigned long long>(next_seq_));
  return buf;
}

void Catalogue::append(JournalEvent ev) {
  if (journal_) {
    if (journal_->has_parent_path()) std::filesystem::create_directories(journal_->parent_path());
    std::ofstream out(*journal_, std::ios::binary | std::ios::app);
    out << event_to_json(ev).dump() << '\n';
    out.flush();
    if (!out) throw Error(Errc::Io, "cannot append to journal " + journal_->string());
  }
  apply(ev);
}

void Catalogue::apply(const JournalEvent& ev) {
  if (ev.action == "create" || ev.action == "harvest") {
    auto r = record_from_json(ev.payload);
    if (r.id.rfind("rec-", 0) == 0) next_seq_ = std::max<std::uint64_t>(next_seq_, std::stoull(r.id.substr(4)) + 1);
    records_[r.id] = std::move(r);
  } else if (ev.action == "update") {
    auto& r = records_.at(ev.record_id);
    apply_fields(r, ev.payload.at("patch"));
    r.modified = ev.ts;
    if (r.status == kApproved) r.status = kSubmitted;
  } else if (ev.action == "transition") {
    auto& r = records_.at(ev.record_id);
    r.status = ev.payload.at("to").get<std::string>();
    r.modified = ev.ts;
  } else {
    throw Error(Errc::Io, "unknown journal action '" + ev.action + "'");
  }
  ++events_;
}

void Catalogue::validate(const Record& r) const {
  check_mandatory(r, vocab_.mandatory_fields);
  if (r.title.empty()) schema_error("missing mandatory metadata: title");
  if (!vocab_.has_requirement(r.data_requirement)) {
    throw Error(Errc::UnknownVocabularyTerm, "dataRequirement '" + r.data_requirement + "' is not in the vocabulary");
  }
  if (!vocab_.has_source_type(r.source_type)) {
    throw Error(Errc::UnknownVocabularyTerm, "sourceType '" + r.source_type + "' is not in the vocabulary");
  }
  if (r.kind == Kind::DataService && r.endpoint_url.empty()) schema_error("a dataService needs an endpointUrl");
  if (!r.endpoint_url.empty() && !rdf::is_absolute_iri(r.endpoint_url)) {
    schema_error("endpointUrl must be an absolute IRI");
  }
  std::set<std::pair<std::string, std::string>> pairs;
  std::set<std::string> ids;
  for (const auto& d : r.distributions) {
    if (!valid_dist_id(d.id)) schema_error("distribution id '" + d.id + "' is not a simple token");
    if (!ids.insert(d.id).second) schema_error("duplicate distribution id '" + d.id + "'");
    if (d.format.empty()) schema_error("distribution " + d.id + " lacks a format");
    if (!rdf::is_absolute_iri(d.access_url)) schema_error("distribution " + d.id + " needs an absolute accessUrl");
    if (!valid_semantics_tag(d.semantics_tag)) {
      schema_error("distribution " + d.id + ": semanticsTag must be raw, harmonised:<id> or fused:<id>");
    }
    if (!pairs.emplace(d.format, d.semantics_tag).second) {
      schema_error("two distributions share format " + d.format + " and semantics " + d.semantics_tag);
    }
  }
}

Record Catalogue::create(const Actor& actor, const json& draft) {
  if (actor.role != Role::Publisher) throw Error(Errc::Forbidden, "only publishers create records");
  std::unique_lock lock(mu_);
  Record r;
  apply_fields(r, draft);
  validate(r);
  r.id = next_id();
  r.status = kDraft;
  r.owner = actor.user_id;
  r.created = r.modified = clock_();
  append({r.created, actor.user_id, "create", r.id, to_json(r)});
  return records_.at(r.id);
}

Record Catalogue::update(const Actor& actor, const std::string& id, const json& patch) {
  std::unique_lock lock(mu_);
  auto it = records_.find(id);
  if (it == records_.end()) throw Error(Errc::NotFound, "no record '" + id + "'");
  if (it->second.owner != actor.user_id) throw Error(Errc::Forbidden, "only the owner edits record " + id);
  if (it->second.status == kDeprecated) throw Error(Errc::IllegalTransition, "record " + id + " is deprecated");
  Record candidate = it->second;
  apply_fields(candidate, patch);
  validate(candidate);
  append({clock_(), actor.user_id, "update", id, {{"patch", patch}}});
  return records_.at(id);
}

Record Catalogue::transition(const Actor& actor, const std::string& id, Action action) {
  std::unique_lock lock(mu_);
  auto it = records_.find(id);
  if (it == records_.end()) throw Error(Errc::NotFound, "no record '" + id + "'");
  const auto& from = it->second.status;
  const Transition* row = nullptr;
  for (const auto& t : transition_table()) {
    if (t.from == from && t.action == action) row = &t;
  }
  if (!row) {
    throw Error(Errc::IllegalTransition, std::string(to_string(action)) + " is not allowed from " + from);
  }
  const bool allowed = row->by_owner ? actor.user_id == it->second.owner : actor.role == Role::Tmb;
  if (!allowed) {
    throw Error(Errc::Forbidden, std::string(to_string(action)) + " requires " + (row->by_owner ? "the owner" : "tmb"));
  }
  append({clock_(), actor.user_id, "transition", id,
          {{"action", to_string(action)}, {"from", from}, {"to", row->to}}});
  return records_.at(id);
}

HarvestReport Catalogue::harvest_import(const rdf::Graph& g, const Actor& actor) {
  if (actor.role != Role::Tmb) throw Error(Errc::Forbidden, "only tmb harvests");
  std::unique_lock lock(mu_);
  HarvestReport report;
  std::vector<std::pair<rdf::Term, Kind>> nodes;
  for (const auto& n : g.instances_of(dcat("Dataset"))) nodes.emplace_back(n, Kind::Dataset);
  for (const auto& n : g.instances_of(dcat("DataService"))) nodes.emplace_back(n, Kind::DataService);
  std::sort(nodes.begin(), nodes.end());

  for (const auto& [node, kind] : nodes) {
    const auto title = first_value(g, node, dcterms("title"));
    if (!title || title->empty()) {
      report.warnings.push_back("skipped " + node.value() + ": missing dcterms:title");
      continue;
    }
    Record r;
    r.kind = kind;
    r.title = *title;
    r.description = first_value(g, node, dcterms("description")).value_or("");
    r.publisher_org = first_value(g, node, dcterms("publisher")).value_or("");
    r.case_study = first_value(g, node, cat("caseStudy")).value_or("");
    r.endpoint_url = first_value(g, node, dcat("endpointURL")).value_or("");
    const auto req = first_value(g, node, cat("dataRequirement")).value_or("");
    r.data_requirement = vocab_.has_requirement(req) ? req : std::string(kUnclassified);
    const auto st = first_value(g, node, cat("sourceType")).value_or("");
    r.source_type = vocab_.has_source_type(st) ? st : std::string(kUnclassified);
    if (const auto p = first_value(g, node, cat("refreshPeriodSeconds"))) {
      try {
        std::size_t used = 0;
        const auto v = std::stoull(*p, &used);
        if (used != p->size()) throw std::invalid_argument(*p);
        r.refresh_period_seconds = v;
      } catch (const std::exception&) {
        report.warnings.push_back(node.value() + ": ignored refreshPeriodSeconds '" + *p + "'");
      }
    }
    if (kind == Kind::DataService && r.endpoint_url.empty()) {
      report.warnings.push_back("skipped " + node.value() + ": dataService without dcat:endpointURL");
      continue;
    }
    std::set<std::pair<std::string, std::string>> pairs;
    std::set<std::string> ids;
    for (const auto& dn : g.objects(node, dcat("distribution"))) {
      Distribution d;
      d.id = first_value(g, dn, dcterms("identifier")).value_or("");
      d.format = first_value(g, dn, dcat("mediaType")).value_or("");
      d.access_url = first_value(g, dn, dcat("accessURL")).value_or("");
      d.semantics_tag = first_value(g, dn, cat("semantics")).value_or("raw");
      if (!valid_semantics_tag(d.semantics_tag)) d.semantics_tag = "raw";
      if (d.format.empty() || !rdf::is_absolute_iri(d.access_url)) {
        report.warnings.push_back(node.value() + ": dropped distribution " + dn.value() +
                                  " without mediaType or accessURL");
        continue;
      }
      if (!pairs.emplace(d.format, d.semantics_tag).second) {
        report.warnings.push_back(node.value() + ": dropped duplicate distribution " + dn.value());
        continue;
      }
      if (!valid_dist_id(d.id) || ids.count(d.id)) d.id.clear();
      if (!d.id.empty()) ids.insert(d.id);
      r.distributions.push_back(std::move(d));
    }
    std::size_t n = 1;
    for (auto& d : r.distributions) {
      if (!d.id.empty()) continue;
      while (ids.count("d" + std::to_string(n))) ++n;
      d.id = "d" + std::to_string(n);
      ids.insert(d.id);
    }
    r.id = next_id();
    r.status = kSubmitted;
    r.owner = actor.user_id;
    r.created = r.modified = clock_();
    append({r.created, actor.user_id, "harvest", r.id, to_json(r)});
    report.records.push_back(records_.at(r.id));
  }
  return report;
}

std::optional<Record> Catalogue::get(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = records_.find(id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

std::vector<Record> Catalogue::search(const SearchFilters& f) const {
  if (f.status && !vocab_.has_status(*f.status)) {
    throw Error(Errc::UnknownVocabularyTerm, "status '" + *f.status + "' is not in the vocabulary");
  }
  if (f.data_requirement && !vocab_.has_requirement(*f.data_requirement)) {
    throw Error(Errc::UnknownVocabularyTerm, "dataRequirement '" + *f.data_requirement + "' is not in the vocabulary");
  }
  if (f.source_type && !vocab_.has_source_type(*f.source_type)) {
    throw Error(Errc::UnknownVocabularyTerm, "sourceType '" + *f.source_type + "' is not in the vocabulary");
  }
  const auto needle = f.text ? lower(*f.text) : std::string();
  std::vector<Record> out;
  std::shared_lock lock(mu_);
  for (const auto& [id, r] : records_) {
    if (f.status && r.status != *f.status) continue;
    if (f.data_requirement && r.data_requirement != *f.data_requirement) continue;
    if (f.source_type && r.source_type != *f.source_type) continue;
    if (f.case_study && r.case_study != *f.case_study) continue;
    if (f.format && std::none_of(r.distributions.begin(), r.distributions.end(),
                                 [&](const Distribution& d) { return d.format == *f.format; })) {
      continue;
    }
    if (f.text && lower(r.title).find(needle) == std::string::npos &&
        lower(r.description).find(needle) == std::string::npos) {
      continue;
    }
    out.push_back(r);
  }
  std::sort(out.begin(), out.end(), [](const Record& a, const Record& b) {
    if (a.modified != b.modified) return a.modified > b.modified;
    return a.id < b.id;
  });
  return out;
}

rdf::Graph Catalogue::export_rdf(const std::optional<std::string>& id) const {
  std::shared_lock lock(mu_);
  rdf::Graph g;
  if (id) {
    auto it = records_.find(*id);
    if (it == records_.end()) throw Error(Errc::NotFound, "no record '" + *id + "'");
    export_record(it->second, g);
    return g;
  }
  for (const auto& [_, r] : records_) export_record(r, g);
  return g;
}

std::size_t Catalogue::size() const {
  std::shared_lock lock(mu_);
  return records_.size();
}

std::size_t Catalogue::event_count() const {
  std::shared_lock lock(mu_);
  return events_;
}

std::string Catalogue::state_json() const {
  std::shared_lock lock(mu_);
  json all = json::array();
  for (const auto& [_, r] : records_) all.push_back(to_json(r));
  return all.dump(2);
}

void Catalogue::write_snapshot(const std::filesystem::path& path) const {
  json doc;
  {
    std::shared_lock lock(mu_);
    json all = json::array();
    for (const auto& [_, r] : records_) all.push_back(to_json(r));
    doc = {{"events", events_}, {"records", std::move(all)}};
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << doc.dump(2) << '\n';
    if (!out) throw Error(Errc::Io, "cannot write snapshot " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<Record> apply_seed(Catalogue& c, const json& seed, const Actor& publisher, const Actor& tmb) {
  if (!seed.is_array()) throw Error(Errc::InvalidConfig, "seed must be a JSON list");
  std::vector<Record> out;
  for (const auto& entry : seed) {
    const auto target = entry.value("targetStatus", std::string(kDraft));
    std::vector<std::pair<const Actor*, Action>> path;
    if (target == kSubmitted) {
      path = {{&publisher, Action::Submit}};
    } else if (target == kApproved) {
      path = {{&publisher, Action::Submit}, {&tmb, Action::Approve}};
    } else if (target == kRejected) {
      path = {{&publisher, Action::Submit}, {&tmb, Action::Reject}};
    } else if (target == kDeprecated) {
      path = {{&publisher, Action::Submit}, {&tmb, Action::Approve}, {&tmb, Action::Deprecate}};
    } else if (target != kDraft) {
      throw Error(Errc::InvalidConfig, "seed targetStatus '" + target + "' is unknown");
    }
    auto r = c.create(publisher, entry.at("record"));
    for (const auto& [who, action] : path) r = c.transition(*who, r.id, action);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace harmony::catalogue
