#ifndef NVLAB_TOOLS_RUN_CONFIG_HPP
#define NVLAB_TOOLS_RUN_CONFIG_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

// Flat key = value run configuration. '#' starts a comment, blank lines are
// ignored, later duplicates win. Unknown keys are rejected with a
// nearest-key suggestion. Command-line flags take precedence over config
// values, which take precedence over built-in defaults.
namespace nvcli {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class RunConfig {
 public:
  RunConfig() = default;

  // Parses `path` and validates every key against `known_keys`.
  static RunConfig load(const std::string& path,
                        const std::vector<std::string>& known_keys);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& raw(const std::string& key) const { return values_.at(key); }

 private:
  std::map<std::string, std::string> values_;
};

// Typed parsers for config values and flag-style strings.
double parse_number(const std::string& key, const std::string& value);
long long parse_integer(const std::string& key, const std::string& value);
bool parse_flag(const std::string& key, const std::string& value);
Eigen::Vector3d parse_vector3(const std::string& key, const std::string& value);

// One config binding per option: applies the config value to the target
// unless the matching command-line flag was given.
class ConfigBinder {
 public:
  void bind_number(std::string key, double* target);
  void bind_integer(std::string key, long long* target);
  void bind_unsigned(std::string key, std::uint64_t* target);
  void bind_int(std::string key, int* target);
  void bind_flag(std::string key, bool* target);
  void bind_text(std::string key, std::string* target);

  const std::vector<std::string>& keys() const { return keys_; }

  // `flag_given(key)` reports whether the CLI flag for this key was passed.
  void apply(const RunConfig& config,
             const std::function<bool(const std::string&)>& flag_given) const;

 private:
  void add(std::string key, std::function<void(const std::string&)> parse);
  std::vector<std::string> keys_;
  std::vector<std::pair<std::string, std::function<void(const std::string&)>>> entries_;
};

}  // namespace nvcli

#endif
