#include "transpref/annotate.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>

#include <httplib.h>

#include "transpref/random.hpp"

namespace transpref::annotate {

const std::vector<TickMark>& tick_marks() {
  static const std::vector<TickMark> ticks = [] {
    std::vector<TickMark> t;
    for (int level = 0; level <= 6; ++level) {
      std::string label;
      switch (level) {
        case 0: label = "Nonsense/No meaning preserved"; break;
        case 2: label = "Some Meaning Preserved"; break;
        case 4: label = "Most Meaning Preserved and Few Grammar Mistakes"; break;
        case 6: label = "Perfect Meaning and Grammar"; break;
        default: break;
      }
      t.push_back({level == 6 ? 100.0 : 100.0 * level / 6.0, level, std::move(label)});
    }
    return t;
  }();
  return ticks;
}

std::string utc_now_iso8601() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

bool AnnotationSession::item_complete(std::size_t index) const {
  const auto& item = items.at(index);
  return std::all_of(item.hypotheses.begin(), item.hypotheses.end(),
                     [&](const BlindHypothesis& h) { return ratings.count({index, h.label}) > 0; });
}

json to_json(const AnnotationItem& item) {
  json hyps = json::array();
  for (const auto& [label, text] : item.hypotheses) {
    json h = {{"label", label}, {"text", text}};
    if (auto it = item.committed.find(label); it != item.committed.end()) h["score"] = it->second;
    hyps.push_back(std::move(h));
  }
  json ticks = json::array();
  for (const auto& t : tick_marks()) {
    json tj = {{"position", t.position}, {"level", t.level}};
    if (!t.label.empty()) tj["label"] = t.label;
    ticks.push_back(std::move(tj));
  }
  return {{"session_id", item.session_id}, {"source_id", item.source_id}, {"index", item.index},
          {"total", item.total},           {"source", item.source_text},  {"hypotheses", hyps},
          {"ticks", ticks}};
}

json session_summary(const AnnotationSession& s) {
  return {{"session_id", s.session_id}, {"annotator_id", s.annotator_id},
          {"language_pair", s.language_pair}, {"created_at", s.created_at},
          {"total", s.items.size()}, {"cursor", s.cursor}};
}

CreateRequest create_request_from_json(const json& j) {
  CreateRequest r;
  try {
    r.annotator_id = j.at("annotator_id").get<std::string>();
    r.language_pair = j.at("language_pair").get<std::string>();
    r.seed = j.value("seed", std::uint64_t{0});
    for (const auto& s : j.at("sources")) {
      SourceInput in{s.at("source_id").get<std::string>(), s.at("source").get<std::string>(), {}};
      for (const auto& h : s.at("hypotheses"))
        in.hypotheses.push_back({h.at("system_id").get<std::string>(), h.at("text").get<std::string>()});
      r.sources.push_back(std::move(in));
    }
  } catch (const json::exception& e) {
    throw ValidationError("bad_request", std::string("malformed session request: ") + e.what());
  }
  return r;
}

namespace {

json session_to_json(const AnnotationSession& s) {
  json items = json::array();
  for (const auto& it : s.items) {
    json hyps = json::array();
    for (const auto& h : it.hypotheses)
      hyps.push_back({{"label", h.label}, {"system_id", h.system_id}, {"text", h.text}});
    items.push_back({{"source_id", it.source_id}, {"source", it.source_text}, {"hypotheses", hyps}});
  }
  return {{"session_id", s.session_id}, {"annotator_id", s.annotator_id},
          {"language_pair", s.language_pair}, {"seed", s.seed},
          {"created_at", s.created_at}, {"items", items}};
}

AnnotationSession session_from_json(const json& j) {
  AnnotationSession s;
  s.session_id = j.at("session_id").get<std::string>();
  s.annotator_id = j.at("annotator_id").get<std::string>();
  s.language_pair = j.at("language_pair").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.created_at = j.at("created_at").get<std::string>();
  for (const auto& it : j.at("items")) {
    SessionItem item{it.at("source_id").get<std::string>(), it.at("source").get<std::string>(), {}};
    for (const auto& h : it.at("hypotheses"))
      item.hypotheses.push_back({h.at("label").get<std::string>(), h.at("system_id").get<std::string>(),
                                 h.at("text").get<std::string>()});
    s.items.push_back(std::move(item));
  }
  return s;
}

void advance_cursor(AnnotationSession& s) {
  while (s.cursor < s.items.size() && s.item_complete(s.cursor)) ++s.cursor;
}

std::size_t find_item(const AnnotationSession& s, const std::string& source_id) {
  for (std::size_t i = 0; i < s.items.size(); ++i)
    if (s.items[i].source_id == source_id) return i;
  throw ValidationError("unknown_source", "source '" + source_id + "' is not part of session '" +
                                              s.session_id + "'");
}

AnnotationItem view_of(const AnnotationSession& s, std::size_t index) {
  const auto& it = s.items[index];
  AnnotationItem v{s.session_id, it.source_id, index, s.items.size(), it.source_text, {}, {}};
  for (const auto& h : it.hypotheses) {
    v.hypotheses.emplace_back(h.label, h.text);
    if (auto r = s.ratings.find({index, h.label}); r != s.ratings.end()) v.committed[h.label] = r->second.score;
  }
  return v;
}

void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    auto w = ::write(fd, data.data(), data.size());
    if (w < 0) {
      if (errno == EINTR) continue;
      throw IoError("append to session log failed");
    }
    data.remove_prefix(static_cast<std::size_t>(w));
  }
}

int open_log(const std::filesystem::path& p) {
  int fd = ::open(p.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open session log " + p.string());
  return fd;
}

}  // namespace

struct SessionStore::Entry {
  AnnotationSession session;
  std::filesystem::path log_path;
  int fd = -1;
  std::vector<json> audits;
  std::size_t events_since_compact = 0;
  mutable std::mutex mu;  // serializes writes to this session

  ~Entry() {
    if (fd >= 0) ::close(fd);
  }
};

SessionStore::SessionStore(std::filesystem::path dir, Clock clock, std::size_t compact_every)
    : dir_(std::move(dir)), clock_(std::move(clock)), compact_every_(compact_every) {
  std::filesystem::create_directories(dir_);
  std::vector<std::filesystem::path> logs;
  for (const auto& de : std::filesystem::directory_iterator(dir_))
    if (de.path().extension() == ".log") logs.push_back(de.path());
  std::sort(logs.begin(), logs.end());
  for (const auto& p : logs) replay(p);
}

SessionStore::~SessionStore() = default;

void SessionStore::replay(const std::filesystem::path& log) {
  auto e = std::make_unique<Entry>();
  e->log_path = log;
  std::ifstream in(log);
  std::string line;
  bool created = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json ev = json::parse(line, nullptr, false);
    // A torn final line (crash mid-write) was never acknowledged.
    if (ev.is_discarded()) break;
    auto type = ev.value("event", std::string{});
    if (type == "create") {
      e->session = session_from_json(ev.at("session"));
      created = true;
    } else if (created && type == "rating") {
      auto idx = find_item(e->session, ev.at("source_id").get<std::string>());
      auto label = ev.at("label").get<std::string>();
      e->session.ratings[{idx, label}] = {ev.at("score").get<double>(), ev.value("timestamp", std::string{})};
      if (ev.contains("previous")) {
        e->audits.push_back(ev);
        ++e->session.audit_records;
      }
      ++e->events_since_compact;
    } else if (created && type == "audit") {
      e->audits.push_back(ev);
      ++e->session.audit_records;
    }
  }
  if (!created) return;
  advance_cursor(e->session);
  e->fd = open_log(log);
  auto id = e->session.session_id;
  sessions_[id] = std::move(e);
}

SessionStore::Entry& SessionStore::entry(const std::string& session_id) const {
  std::lock_guard lk(mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw ValidationError("not_found", "unknown session '" + session_id + "'");
  return *it->second;
}

void SessionStore::append(Entry& e, const json& event) {
  std::string line = event.dump() + "\n";
  write_all(e.fd, line);
  if (::fsync(e.fd) != 0) throw IoError("fsync of session log failed");
  ++e.events_since_compact;
}

AnnotationSession SessionStore::create_session(const CreateRequest& req) {
  if (req.annotator_id.empty()) throw ValidationError("bad_request", "annotator_id must not be empty");
  if (req.language_pair.empty()) throw ValidationError("bad_request", "language_pair must not be empty");
  if (req.sources.empty()) throw ValidationError("bad_request", "a session needs at least one source");
  std::set<std::string> ids;
  for (const auto& s : req.sources) {
    if (!ids.insert(s.source_id).second)
      throw ValidationError("bad_request", "duplicate source '" + s.source_id + "'");
    if (s.hypotheses.size() < 2 || s.hypotheses.size() > 6)
      throw ValidationError("bad_request", "source '" + s.source_id + "' needs 2 to 6 hypotheses, has " +
                                               std::to_string(s.hypotheses.size()));
    std::set<std::string> systems;
    for (const auto& h : s.hypotheses)
      if (!systems.insert(h.system_id).second)
        throw ValidationError("bad_request", "source '" + s.source_id + "' lists system '" + h.system_id + "' twice");
  }

  AnnotationSession s;
  s.annotator_id = req.annotator_id;
  s.language_pair = req.language_pair;
  s.seed = req.seed;
  s.created_at = clock_();

  Rng rng(req.seed);
  std::vector<std::size_t> order(req.sources.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  for (auto oi : order) {
    const auto& src = req.sources[oi];
    std::vector<std::size_t> perm(src.hypotheses.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    SessionItem item{src.source_id, src.source_text, {}};
    for (std::size_t k = 0; k < perm.size(); ++k) {
      const auto& h = src.hypotheses[perm[k]];
      item.hypotheses.push_back({std::string(1, static_cast<char>('A' + k)), h.system_id, h.text});
    }
    s.items.push_back(std::move(item));
  }

  std::lock_guard lk(mu_);
  for (const auto& [id, e] : sessions_) {
    const auto& o = e->session;
    if (o.annotator_id == s.annotator_id && o.language_pair == s.language_pair && !o.finished())
      throw ValidationError("duplicate_session", "annotator '" + s.annotator_id +
                                                     "' already has an active session for " + s.language_pair);
  }
  std::uint64_t h = fnv1a64(s.annotator_id);
  h = fnv1a64(s.language_pair, h ^ 0x9e3779b97f4a7c15ULL);
  h = fnv1a64(std::to_string(req.seed) + "/" + s.created_at + "/" + std::to_string(sessions_.size()), h);
  s.session_id = "s" + hex64(h).substr(0, 12);
  while (sessions_.count(s.session_id)) s.session_id += "x";

  auto e = std::make_unique<Entry>();
  e->session = s;
  e->log_path = dir_ / (s.session_id + ".log");
  e->fd = open_log(e->log_path);
  append(*e, {{"event", "create"}, {"session", session_to_json(s)}});
  sessions_[s.session_id] = std::move(e);
  return s;
}

std::optional<AnnotationItem> SessionStore::next_item(const std::string& session_id) const {
  auto& e = entry(session_id);
  std::lock_guard lk(e.mu);
  if (e.session.finished()) return std::nullopt;
  return view_of(e.session, e.session.cursor);
}

AnnotationItem SessionStore::item(const std::string& session_id, const std::string& source_id) const {
  auto& e = entry(session_id);
  std::lock_guard lk(e.mu);
  return view_of(e.session, find_item(e.session, source_id));
}

Ack SessionStore::submit_rating(const std::string& session_id, const std::string& source_id,
                                const std::string& label, double score) {
  auto& e = entry(session_id);
  std::lock_guard lk(e.mu);
  auto& s = e.session;
  auto idx = find_item(s, source_id);
  if (idx > s.cursor)
    throw ValidationError("out_of_order", "source '" + source_id + "' is ahead of the session cursor");
  const auto& hyps = s.items[idx].hypotheses;
  auto h = std::find_if(hyps.begin(), hyps.end(), [&](const BlindHypothesis& b) { return b.label == label; });
  if (h == hyps.end())
    throw ValidationError("unknown_label", "label '" + label + "' does not exist for source '" + source_id + "'");
  if (!std::isfinite(score) || score < 0.0 || score > 100.0)
    throw ValidationError("out_of_range", "score must be within [0, 100]");

  auto ts = clock_();
  json ev = {{"event", "rating"}, {"source_id", source_id}, {"label", label},
             {"system_id", h->system_id}, {"score", score}, {"timestamp", ts}};
  Ack ack;
  if (auto prev = s.ratings.find({idx, label}); prev != s.ratings.end()) {
    ev["previous"] = prev->second.score;
    ack.overwrote = true;
  }
  append(e, ev);
  s.ratings[{idx, label}] = {score, ts};
  if (ack.overwrote) {
    e.audits.push_back(ev);
    ++s.audit_records;
  }
  advance_cursor(s);
  ack.cursor = s.cursor;
  ack.total = s.items.size();
  ack.item_complete = s.item_complete(idx);
  if (compact_every_ && e.events_since_compact >= compact_every_) {
    e.mu.unlock();
    try {
      compact(session_id);
    } catch (...) {
      e.mu.lock();
      throw;
    }
    e.mu.lock();
  }
  return ack;
}

void SessionStore::compact(const std::string& session_id) {
  auto& e = entry(session_id);
  std::lock_guard lk(e.mu);
  std::string out = json{{"event", "create"}, {"session", session_to_json(e.session)}}.dump() + "\n";
  for (const auto& a : e.audits) {
    json audit = a;
    audit["event"] = "audit";
    out += audit.dump() + "\n";
  }
  for (const auto& [key, r] : e.session.ratings) {
    const auto& item = e.session.items[key.first];
    auto h = std::find_if(item.hypotheses.begin(), item.hypotheses.end(),
                          [&](const BlindHypothesis& b) { return b.label == key.second; });
    out += json{{"event", "rating"}, {"source_id", item.source_id}, {"label", key.second},
                {"system_id", h->system_id}, {"score", r.score}, {"timestamp", r.timestamp}}
               .dump() +
           "\n";
  }
  auto tmp = e.log_path;
  tmp += ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_TRUNC | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot write " + tmp.string());
  write_all(fd, out);
  ::fsync(fd);
  ::close(fd);
  std::filesystem::rename(tmp, e.log_path);
  ::close(e.fd);
  e.fd = open_log(e.log_path);
  e.events_since_compact = 0;
}

std::vector<metaeval::HumanRating> SessionStore::export_ratings(const std::string& session_id) const {
  std::vector<const Entry*> entries;
  if (session_id.empty()) {
    std::lock_guard lk(mu_);
    for (const auto& [id, e] : sessions_) entries.push_back(e.get());
  } else {
    entries.push_back(&entry(session_id));
  }
  std::vector<metaeval::HumanRating> out;
  for (const auto* e : entries) {
    std::lock_guard lk(e->mu);
    const auto& s = e->session;
    for (std::size_t i = 0; i < s.items.size(); ++i) {
      if (!s.item_complete(i)) continue;
      for (const auto& h : s.items[i].hypotheses) {
        const auto& r = s.ratings.at({i, h.label});
        out.push_back({s.annotator_id, s.items[i].source_id, h.system_id, r.score, r.timestamp, s.language_pair});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.source_id, a.system_id, a.annotator_id) < std::tie(b.source_id, b.system_id, b.annotator_id);
  });
  return out;
}

AnnotationSession SessionStore::session(const std::string& session_id) const {
  auto& e = entry(session_id);
  std::lock_guard lk(e.mu);
  return e.session;
}

std::vector<std::string> SessionStore::session_ids() const {
  std::lock_guard lk(mu_);
  std::vector<std::string> ids;
  for (const auto& [id, e] : sessions_) ids.push_back(id);
  return ids;
}

// ---- HTTP -----------------------------------------------------------------

namespace {

int status_for(const std::string& code) {
  if (code == "not_found" || code == "unknown_source") return 404;
  if (code == "duplicate_session" || code == "out_of_order") return 409;
  if (code == "io") return 500;
  return 400;
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& msg) {
  res.status = status;
  res.set_content(json{{"code", code}, {"message", msg}}.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, status_for(e.code()), e.code(), e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

json parse_body(const httplib::Request& req) {
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ValidationError("bad_request", "body must be a JSON object");
  return j;
}

std::string ratings_jsonl(const std::vector<metaeval::HumanRating>& rs) {
  std::string out;
  for (const auto& r : rs) out += metaeval::to_json(r).dump() + "\n";
  return out;
}

}  // namespace

AnnotationServer::AnnotationServer(SessionStore& store)
    : store_(store), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;
  srv.Post("/api/session", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto s = store_.create_session(create_request_from_json(parse_body(req)));
      res.status = 201;
      res.set_content(session_summary(s).dump(), "application/json");
    });
  });
  srv.Get(R"(/api/session/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto item = store_.next_item(req.matches[1]);
      if (!item) {
        auto s = store_.session(req.matches[1]);
        res.set_content(json{{"done", true}, {"session_id", s.session_id}, {"total", s.items.size()}}.dump(),
                        "application/json");
        return;
      }
      res.set_content(to_json(*item).dump(), "application/json");
    });
  });
  srv.Get(R"(/api/session/([^/]+)/item/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(to_json(store_.item(req.matches[1], req.matches[2])).dump(), "application/json"); });
  });
  srv.Post(R"(/api/session/([^/]+)/rating)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto body = parse_body(req);
      if (!body.contains("score") || !body["score"].is_number())
        throw ValidationError("out_of_range", "score must be a number within [0, 100]");
      auto ack = store_.submit_rating(req.matches[1], body.at("source_id").get<std::string>(),
                                      body.at("label").get<std::string>(), body["score"].get<double>());
      res.set_content(json{{"ok", true}, {"cursor", ack.cursor}, {"total", ack.total},
                           {"item_complete", ack.item_complete}, {"overwrote", ack.overwrote}}
                          .dump(),
                      "application/json");
    });
  });
  srv.Get(R"(/api/session/([^/]+)/export)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(ratings_jsonl(store_.export_ratings(req.matches[1])), "application/x-ndjson"); });
  });
  srv.Get("/api/export", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { res.set_content(ratings_jsonl(store_.export_ratings()), "application/x-ndjson"); });
  });
  srv.Get("/api/ticks", [](const httplib::Request&, httplib::Response& res) {
    json ticks = json::array();
    for (const auto& t : tick_marks()) {
      json tj = {{"position", t.position}, {"level", t.level}};
      if (!t.label.empty()) tj["label"] = t.label;
      ticks.push_back(std::move(tj));
    }
    res.set_content(ticks.dump(), "application/json");
  });
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::start(const std::string& host, int port) {
  int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

bool AnnotationServer::listen(const std::string& host, int port) { return server_->listen(host, port); }

void AnnotationServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace transpref::annotate
