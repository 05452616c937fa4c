#include "trex/kvfile.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "trex/errors.hpp"

namespace trex {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool valid_key(std::string_view key) {
  if (key.empty()) return false;
  return std::all_of(key.begin(), key.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '.' || c == '-';
  });
}

}  // namespace

KeyValueDoc::KeyValueDoc(std::string format) : format_(std::move(format)) {}

KeyValueDoc KeyValueDoc::parse(std::string_view text, std::string_view expected_schema,
                               int max_version) {
  KeyValueDoc doc;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    const auto line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!valid_key(key)) {
      throw ValidationError("line " + std::to_string(line_no) + ": invalid key '" +
                            std::string(key) + "'");
    }
    if (doc.format_.empty()) {
      if (key != "format") {
        throw ValidationError("line " + std::to_string(line_no) +
                              ": first entry must be 'format = " + std::string(expected_schema) +
                              "/<version>'");
      }
      doc.format_ = std::string(value);
    } else {
      if (key == "format" || doc.has(key)) {
        throw ValidationError("line " + std::to_string(line_no) + ": duplicate key '" +
                              std::string(key) + "'");
      }
      doc.entries_.emplace_back(std::string(key), std::string(value));
    }
    if (end == text.size()) break;
  }
  if (doc.format_.empty()) {
    throw ValidationError("missing 'format' entry (expected " + std::string(expected_schema) + ")");
  }
  const auto slash = doc.format_.find('/');
  const std::string schema = doc.format_.substr(0, slash);
  if (schema != expected_schema) {
    throw ValidationError("schema mismatch: expected '" + std::string(expected_schema) +
                          "', found '" + schema + "'");
  }
  const long version =
      slash == std::string::npos ? 0 : parse_long(doc.format_.substr(slash + 1), "format version");
  if (version < 1 || version > max_version) {
    throw ValidationError("unsupported " + schema + " version " + std::to_string(version) +
                          " (this build reads up to " + std::to_string(max_version) + ")");
  }
  return doc;
}

KeyValueDoc KeyValueDoc::load(const std::filesystem::path& path, std::string_view expected_schema,
                              int max_version) {
  try {
    return parse(read_file(path), expected_schema, max_version);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

bool KeyValueDoc::has(std::string_view key) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& kv) { return kv.first == key; });
}

const std::string& KeyValueDoc::get(std::string_view key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return v;
  }
  throw ValidationError("missing key '" + std::string(key) + "'");
}

std::string KeyValueDoc::get_or(std::string_view key, std::string fallback) const {
  return has(key) ? get(key) : fallback;
}

double KeyValueDoc::get_double(std::string_view key) const { return parse_double(get(key), key); }

long KeyValueDoc::get_long(std::string_view key) const { return parse_long(get(key), key); }

bool KeyValueDoc::get_bool(std::string_view key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("key '" + std::string(key) + "': expected true/false, got '" + v + "'");
}

std::vector<double> KeyValueDoc::get_doubles(std::string_view key) const {
  std::vector<double> out;
  std::istringstream in(get(key));
  std::string token;
  while (in >> token) {
    if (token.back() == ',') token.pop_back();
    if (!token.empty()) out.push_back(parse_double(token, key));
  }
  return out;
}

void KeyValueDoc::set(std::string_view key, std::string value) {
  if (!valid_key(key) || key == "format") {
    throw ValidationError("invalid key '" + std::string(key) + "'");
  }
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(std::string(key), std::move(value));
}

void KeyValueDoc::erase(std::string_view key) {
  std::erase_if(entries_, [&](const auto& kv) { return kv.first == key; });
}

std::vector<std::string> KeyValueDoc::keys() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& kv : entries_) out.push_back(kv.first);
  return out;
}

std::string KeyValueDoc::dump() const {
  std::string out = "format = " + format_ + "\n";
  for (const auto& [k, v] : entries_) {
    out += k;
    out += v.empty() ? " =" : " = ";
    out += v;
    out += '\n';
  }
  return out;
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, std::string_view context) {
  double value = 0.0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last) {
    throw ValidationError(std::string(context) + ": expected a number, got '" + std::string(text) +
                          "'");
  }
  return value;
}

long parse_long(std::string_view text, std::string_view context) {
  long value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ValidationError(std::string(context) + ": expected an integer, got '" +
                          std::string(text) + "'");
  }
  return value;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

}  // namespace trex
