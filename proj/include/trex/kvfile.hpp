#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace trex {

// Versioned key-value text document shared by gridworld specs and run configs.
//
// Grammar (one entry per line):
//   document := { blank | comment | entry }
//   comment  := '#' any*
//   entry    := key ws* '=' ws* value
//   key      := [A-Za-z0-9_.-]+
// The first entry must be `format = <schema>/<version>`. Keys are unique;
// order is preserved on output.
class KeyValueDoc {
 public:
  KeyValueDoc() = default;
  explicit KeyValueDoc(std::string format);

  // Throws ValidationError on grammar errors or when the schema name differs
  // from `expected_schema` (the part before '/'), or its version is unsupported.
  static KeyValueDoc parse(std::string_view text, std::string_view expected_schema,
                           int max_version = 1);
  static KeyValueDoc load(const std::filesystem::path& path, std::string_view expected_schema,
                          int max_version = 1);

  const std::string& format() const { return format_; }
  bool has(std::string_view key) const;
  const std::string& get(std::string_view key) const;
  std::string get_or(std::string_view key, std::string fallback) const;

  double get_double(std::string_view key) const;
  long get_long(std::string_view key) const;
  bool get_bool(std::string_view key) const;
  std::vector<double> get_doubles(std::string_view key) const;

  void set(std::string_view key, std::string value);
  void erase(std::string_view key);

  // Keys other than `format`, in document order.
  std::vector<std::string> keys() const;

  std::string dump() const;

 private:
  std::string format_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Shortest round-trip decimal representation of a double.
std::string format_double(double value);
double parse_double(std::string_view text, std::string_view context);
long parse_long(std::string_view text, std::string_view context);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

// 64-bit FNV-1a over raw bytes; used for content fingerprints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace trex
