#include "sdvg/kvfile.hpp"

#include "sdvg/core.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace sdvg {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename Int>
Int parse_integer(const std::string& key, const std::string& text) {
  Int value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorKind::Parse, "key '" + key + "': not an integer: '" + text + "'");
  }
  return value;
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text) {
  KeyValueFile file;
  std::istringstream in(text);
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const std::string content = trim(line);
    if (content.empty() || content.front() == '#') continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::Parse,
                  "line " + std::to_string(line_number) + ": expected 'key = value'");
    }
    const std::string key = trim(content.substr(0, eq));
    if (key.empty()) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_number) + ": empty key");
    }
    if (file.contains(key)) {
      throw Error(ErrorKind::Parse,
                  "line " + std::to_string(line_number) + ": duplicate key '" + key + "'");
    }
    file.set(key, trim(content.substr(eq + 1)));
  }
  return file;
}

void KeyValueFile::set(const std::string& key, const std::string& value) {
  if (!values_.contains(key)) order_.push_back(key);
  values_[key] = value;
}

bool KeyValueFile::contains(const std::string& key) const { return values_.contains(key); }

const std::string& KeyValueFile::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorKind::Parse, "missing key '" + key + "'");
  return it->second;
}

std::string KeyValueFile::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueFile::get_double(const std::string& key) const {
  try {
    return parse_double(get(key));
  } catch (const Error& e) {
    throw Error(ErrorKind::Parse, "key '" + key + "': " + e.what());
  }
}

long long KeyValueFile::get_int(const std::string& key) const {
  return parse_integer<long long>(key, get(key));
}

unsigned long long KeyValueFile::get_uint(const std::string& key) const {
  return parse_integer<unsigned long long>(key, get(key));
}

bool KeyValueFile::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true") return true;
  if (v == "false") return false;
  throw Error(ErrorKind::Parse, "key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<double> KeyValueFile::get_doubles(const std::string& key) const {
  std::vector<double> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(parse_double(item));
    } catch (const Error& e) {
      throw Error(ErrorKind::Parse, "key '" + key + "': " + e.what());
    }
  }
  return out;
}

std::string KeyValueFile::dump(const std::string& header) const {
  std::ostringstream out;
  if (!header.empty()) out << header;
  for (const auto& key : order_) out << key << " = " << values_.at(key) << '\n';
  return out.str();
}

std::string join_doubles(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += format_double(values[i]);
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "' for reading");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path + "' for writing");
  out << contents;
  if (!out) throw Error(ErrorKind::Io, "failed writing '" + path + "'");
}

}  // namespace sdvg
