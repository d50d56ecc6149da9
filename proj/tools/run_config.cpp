#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace nvcli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string suggest(const std::string& key, const std::vector<std::string>& known) {
  std::string best;
  std::size_t best_dist = 4;  // suggest only reasonably close names
  for (const std::string& k : known) {
    const std::size_t d = edit_distance(key, k);
    if (d < best_dist) {
      best_dist = d;
      best = k;
    }
  }
  return best;
}

}  // namespace

RunConfig RunConfig::load(const std::string& path,
                          const std::vector<std::string>& known_keys) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);

  RunConfig out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      std::ostringstream msg;
      msg << path << ":" << line_no << ": expected 'key = value'";
      throw ConfigError(msg.str());
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      std::ostringstream msg;
      msg << path << ":" << line_no << ": empty key";
      throw ConfigError(msg.str());
    }
    if (std::find(known_keys.begin(), known_keys.end(), key) == known_keys.end()) {
      std::ostringstream msg;
      msg << path << ":" << line_no << ": unknown config key '" << key << "'";
      const std::string near = suggest(key, known_keys);
      if (!near.empty()) msg << " (did you mean '" << near << "'?)";
      throw ConfigError(msg.str());
    }
    out.values_[key] = value;
  }
  return out;
}

double parse_number(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc{} || res.ptr != value.data() + value.size())
    throw ConfigError("config key '" + key + "': not a number: '" + value + "'");
  return out;
}

long long parse_integer(const std::string& key, const std::string& value) {
  long long out = 0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc{} || res.ptr != value.data() + value.size())
    throw ConfigError("config key '" + key + "': not an integer: '" + value + "'");
  return out;
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("config key '" + key + "': not a boolean: '" + value + "'");
}

Eigen::Vector3d parse_vector3(const std::string& key, const std::string& value) {
  std::vector<double> parts;
  std::stringstream ss(value);
  std::string cell;
  while (std::getline(ss, cell, ',')) parts.push_back(parse_number(key, trim(cell)));
  if (parts.size() != 3)
    throw ConfigError("config key '" + key + "': expected three comma-separated numbers");
  return {parts[0], parts[1], parts[2]};
}

void ConfigBinder::add(std::string key, std::function<void(const std::string&)> parse) {
  keys_.push_back(key);
  entries_.emplace_back(std::move(key), std::move(parse));
}

void ConfigBinder::bind_number(std::string key, double* target) {
  const std::string k = key;
  add(std::move(key), [k, target](const std::string& v) { *target = parse_number(k, v); });
}

void ConfigBinder::bind_integer(std::string key, long long* target) {
  const std::string k = key;
  add(std::move(key), [k, target](const std::string& v) { *target = parse_integer(k, v); });
}

void ConfigBinder::bind_unsigned(std::string key, std::uint64_t* target) {
  const std::string k = key;
  add(std::move(key), [k, target](const std::string& v) {
    const long long parsed = parse_integer(k, v);
    if (parsed < 0) throw ConfigError("config key '" + k + "': must be non-negative");
    *target = static_cast<std::uint64_t>(parsed);
  });
}

void ConfigBinder::bind_int(std::string key, int* target) {
  const std::string k = key;
  add(std::move(key), [k, target](const std::string& v) {
    *target = static_cast<int>(parse_integer(k, v));
  });
}

void ConfigBinder::bind_flag(std::string key, bool* target) {
  const std::string k = key;
  add(std::move(key), [k, target](const std::string& v) { *target = parse_flag(k, v); });
}

void ConfigBinder::bind_text(std::string key, std::string* target) {
  add(std::move(key), [target](const std::string& v) { *target = v; });
}

void ConfigBinder::apply(const RunConfig& config,
                         const std::function<bool(const std::string&)>& flag_given) const {
  for (const auto& [key, parse] : entries_) {
    if (!config.has(key)) continue;
    if (flag_given(key)) continue;  // command line wins
    parse(config.raw(key));
  }
}

}  // namespace nvcli
