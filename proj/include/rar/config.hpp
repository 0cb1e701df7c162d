#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rar {

/// Flat dotted-key configuration ("train.beta = 0.05"), one key per line,
/// '#' starts a comment. Every known key has a default; unknown keys are
/// rejected so typos surface early.
class RunConfig {
 public:
  RunConfig();

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  /// Sorted "key = value" lines. parse(serialize()) reproduces the config.
  std::string serialize() const;
  /// Hex hash of serialize().
  std::string hash() const;

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& str(const std::string& key) const;
  double real(const std::string& key) const;
  long integer(const std::string& key) const;
  std::size_t size(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;
  std::vector<std::size_t> size_list(const std::string& key) const;

  /// paths.<name>, resolved against paths.workdir when relative.
  std::filesystem::path path(const std::string& name) const;

  static const std::map<std::string, std::string>& defaults();

  bool operator==(const RunConfig& o) const { return values_ == o.values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace rar
