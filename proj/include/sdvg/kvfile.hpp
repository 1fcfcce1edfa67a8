#pragma once

#include <map>
#include <string>
#include <vector>

namespace sdvg {

// Flat `key = value` text format used for config and calibration files.
// Blank lines and lines starting with '#' are ignored.
class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool contains(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;

  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  unsigned long long get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  const std::vector<std::string>& keys() const { return order_; }

  // Keys in insertion order, one per line.
  std::string dump(const std::string& header = {}) const;

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

std::string join_doubles(const std::vector<double>& values);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace sdvg
