#pragma once

#include <optional>
#include <string>
#include <vector>

#include "transpref/corpus.hpp"
#include "transpref/transport.hpp"

namespace transpref::systems {

enum class SystemKind { subprocess, http, fixture };

SystemKind parse_system_kind(std::string_view s);

struct SystemSpec {
  std::string system_id;
  SystemKind kind = SystemKind::fixture;
  std::string endpoint;  // shell command, URL or fixture path
  // Placeholders: {src_lang}, {tgt_lang}, {src}. Applied for subprocess/http.
  std::optional<std::string> prompt_template;
  // "src-tgt" pairs this system may translate; empty means all.
  std::vector<std::string> allowed_pairs;
  std::size_t fanout = 1;
  transport::RetryPolicy retry;

  bool supports(const std::string& src_lang, const std::string& tgt_lang) const;
  void validate() const;
};

SystemSpec system_spec_from_json(const json& j);

struct Hypothesis {
  std::string source_id;
  std::string system_id;
  std::string text;
  std::string src_lang;
  std::string tgt_lang;

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

json to_json(const Hypothesis& h);
Hypothesis hypothesis_from_json(const json& j);

struct TranslationError {
  std::string source_id;
  std::string system_id;
  std::string message;
};

json to_json(const TranslationError& e);

// One slot per input segment, in input order: a hypothesis or an error record.
struct TranslateResult {
  std::vector<Hypothesis> hypotheses;
  std::vector<TranslationError> errors;
};

std::string apply_prompt(const std::string& tmpl, const std::string& src_lang,
                         const std::string& tgt_lang, const std::string& src);

// Throws ConfigError for an invalid spec or a language pair outside
// `allowed_pairs`, and ProtocolError when a system answers with the wrong
// number of records or mismatched ids.
TranslateResult translate_batch(const SystemSpec& spec,
                                const std::vector<corpus::SourceSegment>& segments,
                                const std::string& tgt_lang);

}  // namespace transpref::systems
