#include "shades/key_value.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "shades/error.hpp"

namespace shades {
namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error(ErrorKind::InvalidConfig, "cannot parse value '" + value + "' for key '" + key + "'");
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text) {
  KeyValueFile file;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::InvalidConfig, "line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    if (key.empty()) {
      throw Error(ErrorKind::InvalidConfig, "line " + std::to_string(line_no) + ": empty key");
    }
    if (file.contains(key)) {
      throw Error(ErrorKind::InvalidConfig, "duplicate key '" + key + "'");
    }
    file.entries_[key] = trim(stripped.substr(eq + 1));
  }
  return file;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

void KeyValueFile::set(const std::string& key, const std::string& value) { entries_[key] = value; }

bool KeyValueFile::contains(const std::string& key) const { return entries_.count(key) > 0; }

std::optional<std::string> KeyValueFile::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
  const auto value = get(key);
  if (!value) return fallback;
  try {
    std::size_t used = 0;
    const double parsed = std::stod(*value, &used);
    if (used != value->size()) bad_value(key, *value);
    return parsed;
  } catch (const std::logic_error&) {
    bad_value(key, *value);
  }
}

uint64_t KeyValueFile::get_u64(const std::string& key, uint64_t fallback) const {
  const auto value = get(key);
  if (!value) return fallback;
  uint64_t parsed = 0;
  const auto* first = value->data();
  const auto* last = value->data() + value->size();
  const auto [ptr, ec] = std::from_chars(first, last, parsed);
  if (ec != std::errc() || ptr != last) bad_value(key, *value);
  return parsed;
}

int KeyValueFile::get_int(const std::string& key, int fallback) const {
  const auto value = get(key);
  if (!value) return fallback;
  int parsed = 0;
  const auto* first = value->data();
  const auto* last = value->data() + value->size();
  const auto [ptr, ec] = std::from_chars(first, last, parsed);
  if (ec != std::errc() || ptr != last) bad_value(key, *value);
  return parsed;
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
  const auto value = get(key);
  if (!value) return fallback;
  std::string v = *value;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  bad_value(key, *value);
}

std::vector<int> KeyValueFile::get_int_list(const std::string& key, std::vector<int> fallback) const {
  const auto value = get(key);
  if (!value) return fallback;
  std::vector<int> out;
  std::stringstream ss(*value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    int parsed = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), parsed);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) bad_value(key, *value);
    out.push_back(parsed);
  }
  if (out.empty()) bad_value(key, *value);
  return out;
}

std::vector<std::string> KeyValueFile::unknown_keys(const std::vector<std::string>& known) const {
  std::vector<std::string> unknown;
  for (const auto& [key, value] : entries_) {
    if (std::find(known.begin(), known.end(), key) == known.end()) unknown.push_back(key);
  }
  return unknown;
}

std::string KeyValueFile::to_string() const {
  std::string out;
  for (const auto& [key, value] : entries_) out += key + "=" + value + "\n";
  return out;
}

std::string format_number(double value) {
  char buf[40];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, value);
    if (std::strtod(buf, nullptr) == value) break;
  }
  return buf;
}

}  // namespace shades
