#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace srma {

/// Ordered `key = value` text with `#` comments. Unknown keys are detected by `unused()`.
class KeyValue {
 public:
  static KeyValue parse(const std::string& text);
  static KeyValue load(const std::string& path);

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

  /// Keys never read through a getter.
  std::vector<std::string> unused() const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

  std::string to_text() const;

 private:
  const std::string* find(const std::string& key) const;

  std::map<std::string, std::string> entries_;
  mutable std::map<std::string, bool> touched_;
};

/// Shortest text that parses back to the same double.
std::string number_text(double v);
std::string join_numbers(const std::vector<double>& values);

}  // namespace srma
