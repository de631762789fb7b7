#include "srma/keyvalue.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace srma {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw std::invalid_argument("config key '" + key + "': cannot parse '" + value + "' as " + what);
}

}  // namespace

KeyValue KeyValue::parse(const std::string& text) {
  KeyValue kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    kv.entries_[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValue KeyValue::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string* KeyValue::find(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  touched_[key] = true;
  return &it->second;
}

std::string KeyValue::get_string(const std::string& key, const std::string& fallback) const {
  const auto* v = find(key);
  return v ? *v : fallback;
}

double KeyValue::get_double(const std::string& key, double fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    double d = std::stod(*v, &pos);
    if (pos != v->size()) bad_value(key, *v, "number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, *v, "number");
  }
}

std::int64_t KeyValue::get_int(const std::string& key, std::int64_t fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    auto i = std::stoll(*v, &pos);
    if (pos != v->size()) bad_value(key, *v, "integer");
    return i;
  } catch (const std::logic_error&) {
    bad_value(key, *v, "integer");
  }
}

std::uint64_t KeyValue::get_uint(const std::string& key, std::uint64_t fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  try {
    if (!v->empty() && (*v)[0] == '-') bad_value(key, *v, "unsigned integer");
    std::size_t pos = 0;
    auto i = std::stoull(*v, &pos);
    if (pos != v->size()) bad_value(key, *v, "unsigned integer");
    return i;
  } catch (const std::logic_error&) {
    bad_value(key, *v, "unsigned integer");
  }
}

bool KeyValue::get_bool(const std::string& key, bool fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  bad_value(key, *v, "boolean");
}

std::vector<double> KeyValue::get_doubles(const std::string& key,
                                          const std::vector<double>& fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  std::vector<double> out;
  std::stringstream ss(*v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) bad_value(key, *v, "number list");
    } catch (const std::logic_error&) {
      bad_value(key, *v, "number list");
    }
  }
  return out;
}

std::vector<std::string> KeyValue::unused() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) {
    if (!touched_.count(k)) out.push_back(k);
  }
  return out;
}

std::string KeyValue::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : entries_) os << k << " = " << v << '\n';
  return os.str();
}

std::string number_text(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return {buf.data(), res.ptr};
}

std::string join_numbers(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += number_text(values[i]);
  }
  return out;
}

}  // namespace srma
