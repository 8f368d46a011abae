#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "transpref/common.hpp"
#include "transpref/metaeval.hpp"

namespace httplib {
class Server;
}

namespace transpref::annotate {

struct TickMark {
  double position = 0.0;  // on the 0-100 scale
  int level = 0;          // 0..6
  std::string label;      // empty for unlabeled ticks
};

// Seven ticks at 0, 100/6, ..., 100; levels 0, 2, 4 and 6 carry quality labels.
const std::vector<TickMark>& tick_marks();

struct CandidateInput {
  std::string system_id;
  std::string text;
};

struct SourceInput {
  std::string source_id;
  std::string source_text;
  std::vector<CandidateInput> hypotheses;  // 2..6
};

struct CreateRequest {
  std::string annotator_id;
  std::string language_pair;
  std::vector<SourceInput> sources;
  std::uint64_t seed = 0;
};

struct BlindHypothesis {
  std::string label;  // "A", "B", ...
  std::string system_id;  // never sent to clients
  std::string text;
};

struct SessionItem {
  std::string source_id;
  std::string source_text;
  std::vector<BlindHypothesis> hypotheses;  // in label order
};

struct StoredRating {
  double score = 0.0;
  std::string timestamp;
};

struct AnnotationSession {
  std::string session_id;
  std::string annotator_id;
  std::string language_pair;
  std::uint64_t seed = 0;
  std::string created_at;
  std::vector<SessionItem> items;  // shuffled source order
  // (item index, label) -> latest rating
  std::map<std::pair<std::size_t, std::string>, StoredRating> ratings;
  std::size_t cursor = 0;  // first item not fully rated
  std::size_t audit_records = 0;

  bool item_complete(std::size_t index) const;
  bool finished() const { return cursor >= items.size(); }
};

// Client-facing view of one item; carries no system identities.
struct AnnotationItem {
  std::string session_id;
  std::string source_id;
  std::size_t index = 0;
  std::size_t total = 0;
  std::string source_text;
  std::vector<std::pair<std::string, std::string>> hypotheses;  // (label, text)
  std::map<std::string, double> committed;                       // label -> score
};

json to_json(const AnnotationItem& item);

struct Ack {
  std::size_t cursor = 0;
  std::size_t total = 0;
  bool item_complete = false;
  bool overwrote = false;
};

using Clock = std::function<std::string()>;

// ISO-8601 UTC with second precision.
std::string utc_now_iso8601();

// Sessions persisted as one append-only log per session under `dir`. Every
// write is flushed and fsync'd before the call returns. Logs are replayed on
// construction, so a new store over the same directory sees every
// acknowledged rating.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path dir, Clock clock = utc_now_iso8601,
                        std::size_t compact_every = 1024);
  ~SessionStore();
  SessionStore(const SessionStore&) = delete;
  SessionStore& operator=(const SessionStore&) = delete;

  // Throws ValidationError for sources with fewer than 2 or more than 6
  // hypotheses, duplicate ids, or an unfinished session for the same
  // (annotator, language pair).
  AnnotationSession create_session(const CreateRequest& req);

  // nullopt once every item is rated.
  std::optional<AnnotationItem> next_item(const std::string& session_id) const;
  AnnotationItem item(const std::string& session_id, const std::string& source_id) const;

  // Accepts ratings for the cursor item or any earlier item; a repeated
  // rating overwrites the previous one and leaves an audit record.
  Ack submit_rating(const std::string& session_id, const std::string& source_id,
                    const std::string& label, double score);

  // De-blinded ratings of completed items, sorted by (source_id, system_id,
  // annotator_id). An empty id exports every session.
  std::vector<metaeval::HumanRating> export_ratings(const std::string& session_id = {}) const;

  AnnotationSession session(const std::string& session_id) const;
  std::vector<std::string> session_ids() const;

  // Rewrites a session log as create + latest ratings + audit trail.
  void compact(const std::string& session_id);

 private:
  struct Entry;
  Entry& entry(const std::string& session_id) const;
  void append(Entry& e, const json& event);
  void replay(const std::filesystem::path& log);

  std::filesystem::path dir_;
  Clock clock_;
  std::size_t compact_every_;
  mutable std::mutex mu_;  // guards sessions_
  std::map<std::string, std::unique_ptr<Entry>> sessions_;
};

json session_summary(const AnnotationSession& s);
CreateRequest create_request_from_json(const json& j);

// HTTP front end for the store:
//   POST /api/session                  create
//   GET  /api/session/{id}/next        next AnnotationItem or {"done": true}
//   GET  /api/session/{id}/item/{src}  a specific item (revisits)
//   POST /api/session/{id}/rating      {source_id, label, score}
//   GET  /api/session/{id}/export      line-delimited HumanRating records
//   GET  /api/export                   all sessions
//   GET  /api/ticks                    tick marks
// Errors are {"code", "message"} with a 4xx status.
class AnnotationServer {
 public:
  explicit AnnotationServer(SessionStore& store);
  ~AnnotationServer();

  // Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Blocks serving on the calling thread.
  bool listen(const std::string& host, int port);
  void stop();

 private:
  SessionStore& store_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace transpref::annotate
