#include "transpref/systems.hpp"

#include <algorithm>
#include <map>
#include <variant>
#include <sstream>

namespace transpref::systems {

SystemKind parse_system_kind(std::string_view s) {
  if (s == "subprocess") return SystemKind::subprocess;
  if (s == "http") return SystemKind::http;
  if (s == "fixture") return SystemKind::fixture;
  throw ConfigError("unknown system kind '" + std::string(s) + "'");
}

bool SystemSpec::supports(const std::string& src_lang, const std::string& tgt_lang) const {
  if (allowed_pairs.empty()) return true;
  auto pair = src_lang + "-" + tgt_lang;
  return std::find(allowed_pairs.begin(), allowed_pairs.end(), pair) != allowed_pairs.end();
}

void SystemSpec::validate() const {
  if (system_id.empty()) throw ConfigError("system_id must not be empty");
  if (endpoint.empty()) throw ConfigError("system '" + system_id + "' has an empty endpoint");
}

SystemSpec system_spec_from_json(const json& j) {
  SystemSpec s;
  s.system_id = j.at("id").get<std::string>();
  s.kind = parse_system_kind(j.at("kind").get<std::string>());
  s.endpoint = j.at("endpoint").get<std::string>();
  if (j.contains("prompt_template")) s.prompt_template = j["prompt_template"].get<std::string>();
  if (j.contains("allowed_pairs"))
    s.allowed_pairs = j["allowed_pairs"].get<std::vector<std::string>>();
  s.fanout = j.value("fanout", std::size_t{1});
  if (j.contains("retry_attempts")) s.retry.attempts = j["retry_attempts"].get<int>();
  if (j.contains("retry_backoff_ms"))
    s.retry.initial_backoff = std::chrono::milliseconds(j["retry_backoff_ms"].get<int>());
  s.validate();
  return s;
}

json to_json(const Hypothesis& h) {
  return {{"source_id", h.source_id}, {"system_id", h.system_id}, {"text", h.text},
          {"src_lang", h.src_lang},   {"tgt_lang", h.tgt_lang}};
}

Hypothesis hypothesis_from_json(const json& j) {
  return {j.at("source_id").get<std::string>(), j.at("system_id").get<std::string>(),
          j.at("text").get<std::string>(), j.value("src_lang", std::string{}),
          j.value("tgt_lang", std::string{})};
}

json to_json(const TranslationError& e) {
  return {{"source_id", e.source_id}, {"system_id", e.system_id}, {"error", e.message}};
}

std::string apply_prompt(const std::string& tmpl, const std::string& src_lang,
                         const std::string& tgt_lang, const std::string& src) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      auto close = tmpl.find('}', i);
      if (close != std::string::npos) {
        auto key = std::string_view(tmpl).substr(i + 1, close - i - 1);
        const std::string* val = nullptr;
        if (key == "src_lang") val = &src_lang;
        else if (key == "tgt_lang") val = &tgt_lang;
        else if (key == "src") val = &src;
        if (val) {
          out += *val;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

namespace {

using Slot = std::variant<Hypothesis, TranslationError>;
using Segments = std::vector<corpus::SourceSegment>;

std::string payload_text(const SystemSpec& spec, const corpus::SourceSegment& s,
                         const std::string& tgt) {
  return spec.prompt_template ? apply_prompt(*spec.prompt_template, s.language, tgt, s.text)
                              : s.text;
}

std::vector<Slot> fail_all(const SystemSpec& spec, const Segments& segs, std::size_t b,
                           std::size_t e, const std::string& msg) {
  std::vector<Slot> out;
  for (auto i = b; i < e; ++i) out.emplace_back(TranslationError{segs[i].id, spec.system_id, msg});
  return out;
}

// Checks that `rows` answers segments [b, e) one-for-one and in order.
std::vector<Slot> collect(const SystemSpec& spec, const Segments& segs, std::size_t b,
                          std::size_t e, const std::string& tgt, const std::vector<json>& rows) {
  if (rows.size() != e - b)
    throw ProtocolError("system '" + spec.system_id + "' returned " + std::to_string(rows.size()) +
                        " translations for " + std::to_string(e - b) + " segments");
  std::vector<Slot> out;
  for (auto i = b; i < e; ++i) {
    const auto& r = rows[i - b];
    if (!r.is_object() || !r.contains("text") || !r["text"].is_string())
      throw ProtocolError("system '" + spec.system_id + "' returned a record without 'text'");
    if (r.contains("id") && r["id"] != json(segs[i].id))
      throw ProtocolError("system '" + spec.system_id + "' answered id " + r["id"].dump() +
                          " where '" + segs[i].id + "' was expected");
    out.emplace_back(Hypothesis{segs[i].id, spec.system_id, r["text"].get<std::string>(),
                                segs[i].language, tgt});
  }
  return out;
}

std::vector<Slot> via_subprocess(const SystemSpec& spec, const Segments& segs, std::size_t b,
                                 std::size_t e, const std::string& tgt) {
  std::string input;
  for (auto i = b; i < e; ++i) {
    json req = {{"id", segs[i].id},
                {"src_lang", segs[i].language},
                {"tgt_lang", tgt},
                {"text", payload_text(spec, segs[i], tgt)}};
    input += req.dump();
    input += '\n';
  }
  std::string output;
  try {
    output = transport::with_retry(spec.retry,
                                   [&] { return transport::run_subprocess(spec.endpoint, input); });
  } catch (const transport::TransportError& err) {
    return fail_all(spec, segs, b, e, err.what());
  }
  std::vector<json> rows;
  std::istringstream ss(output);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw ProtocolError("system '" + spec.system_id + "' emitted a non-JSON line");
    rows.push_back(std::move(j));
  }
  return collect(spec, segs, b, e, tgt, rows);
}

std::vector<Slot> via_http(const SystemSpec& spec, const Segments& segs, std::size_t b,
                           std::size_t e, const std::string& tgt) {
  // One request per (src_lang) run; a batch normally has a single source language.
  std::vector<Slot> out;
  std::size_t run_start = b;
  while (run_start < e) {
    auto run_end = run_start;
    while (run_end < e && segs[run_end].language == segs[run_start].language) ++run_end;
    json body = {{"src_lang", segs[run_start].language}, {"tgt_lang", tgt},
                 {"segments", json::array()}};
    for (auto i = run_start; i < run_end; ++i)
      body["segments"].push_back({{"id", segs[i].id}, {"text", payload_text(spec, segs[i], tgt)}});
    json resp;
    try {
      resp = transport::with_retry(spec.retry,
                                   [&] { return transport::http_post_json(spec.endpoint, body); });
    } catch (const transport::TransportError& err) {
      auto failed = fail_all(spec, segs, run_start, run_end, err.what());
      out.insert(out.end(), failed.begin(), failed.end());
      run_start = run_end;
      continue;
    }
    if (!resp.is_object() || !resp.contains("translations") || !resp["translations"].is_array())
      throw ProtocolError("system '" + spec.system_id + "' response lacks 'translations'");
    auto rows = resp["translations"].get<std::vector<json>>();
    auto got = collect(spec, segs, run_start, run_end, tgt, rows);
    out.insert(out.end(), got.begin(), got.end());
    run_start = run_end;
  }
  return out;
}

using FixtureTable = std::map<std::pair<std::string, std::string>, std::string>;

FixtureTable load_fixture(const std::string& path) {
  FixtureTable table;
  for (const auto& r : read_jsonl(path)) {
    auto key = std::pair{r.at("source_id").get<std::string>(), r.at("system_id").get<std::string>()};
    table[key] = r.at("text").get<std::string>();
  }
  return table;
}

}  // namespace

TranslateResult translate_batch(const SystemSpec& spec, const Segments& segments,
                                const std::string& tgt_lang) {
  spec.validate();
  for (const auto& s : segments)
    if (!spec.supports(s.language, tgt_lang))
      throw ConfigError("system '" + spec.system_id + "' does not support " + s.language + "-" +
                        tgt_lang);

  std::vector<Slot> slots;
  if (spec.kind == SystemKind::fixture) {
    auto table = load_fixture(spec.endpoint);
    for (const auto& s : segments) {
      auto it = table.find({s.id, spec.system_id});
      if (it == table.end())
        slots.emplace_back(TranslationError{s.id, spec.system_id, "no fixture row"});
      else
        slots.emplace_back(Hypothesis{s.id, spec.system_id, it->second, s.language, tgt_lang});
    }
  } else {
    auto chunks = transport::run_chunked(segments.size(), spec.fanout, [&](std::size_t b, std::size_t e) {
      if (b == e) return std::vector<Slot>{};
      return spec.kind == SystemKind::subprocess ? via_subprocess(spec, segments, b, e, tgt_lang)
                                                 : via_http(spec, segments, b, e, tgt_lang);
    });
    for (auto& c : chunks) slots.insert(slots.end(), c.begin(), c.end());
  }

  TranslateResult res;
  for (auto& s : slots) {
    if (auto* h = std::get_if<Hypothesis>(&s))
      res.hypotheses.push_back(std::move(*h));
    else
      res.errors.push_back(std::get<TranslationError>(std::move(s)));
  }
  return res;
}

}  // namespace transpref::systems
