#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace transpref {

using json = nlohmann::json;

// Base of every error thrown by the library. `code` is a short machine-readable
// tag (used verbatim in annotate's {code, message} error payloads).
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io", msg) {}
};

class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& msg) : Error("protocol", msg) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error("validation", msg) {}
  ValidationError(std::string code, const std::string& msg)
      : Error(std::move(code), msg) {}
};

enum class Orientation { higher_better, lower_better };

Orientation parse_orientation(std::string_view s);
std::string_view to_string(Orientation o);

// True when `a` is strictly better than `b` under `o`.
inline bool better(double a, double b, Orientation o) {
  return o == Orientation::higher_better ? a > b : a < b;
}

// One line of a line-delimited JSON file that failed to parse or validate.
struct LineError {
  std::size_t line_no = 0;
  std::string raw;
  std::string error;
};

// Reads every non-blank line of `path` as a JSON object. Lines that are not
// valid JSON objects are reported in `errors`. Throws IoError if unreadable.
std::vector<json> read_jsonl(const std::filesystem::path& path,
                             std::vector<LineError>* errors = nullptr);

void write_jsonl(const std::filesystem::path& path, std::span<const json> rows);
std::string to_jsonl(std::span<const json> rows);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

// UTF-8 <-> code points. Invalid bytes decode to U+FFFD.
std::u32string utf8_decode(std::string_view s);
std::string utf8_encode(std::u32string_view s);
bool is_unicode_space(char32_t c);

std::string trim(std::string_view s);

// 64-bit FNV-1a; stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// Sum with a fixed pairwise reduction tree so results are independent of how
// callers partition the work.
double pairwise_sum(std::span<const double> xs);

}  // namespace transpref
