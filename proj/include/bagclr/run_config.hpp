#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bagclr/finetune.hpp"
#include "bagclr/trainer.hpp"

namespace bagclr {

/// Layered run settings under flat dotted keys (`stage1.epochs = 50`).
/// Defaults come first, then a config file, then command-line overrides.
/// Every key is typed by its default; unknown keys and malformed values
/// throw ConfigError.
class RunConfig {
 public:
  enum class Kind { kInt, kUnsigned, kReal, kBool, kString, kIntList, kRealList };

  static RunConfig defaults();

  /// `key = value` lines; blank lines and `#` comments are skipped.
  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  /// "key=value".
  void set_assignment(const std::string& assignment);

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  const std::string& raw(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_unsigned(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;
  std::vector<double> get_reals(const std::string& key) const;

  /// Sorted `key = value` lines, loadable by load_file.
  std::string to_text() const;
  json to_json() const;
  /// Writes config.resolved into `dir` (created if needed).
  void write_resolved(const std::filesystem::path& dir) const;

  SyntheticConfig synthetic() const;
  PretrainConfig pretrain() const;
  FinetuneConfig finetune() const;
  ProbeConfig probe() const;
  int split_folds() const { return get_int("split.folds"); }
  std::uint64_t split_seed() const { return get_unsigned("split.seed"); }

  /// Builds every typed view once so that errors surface before any work.
  void validate() const;

 private:
  struct Entry {
    Kind kind;
    std::string value;
  };
  void define(const std::string& key, Kind kind, const std::string& value);
  const Entry& entry(const std::string& key) const;

  std::map<std::string, Entry> entries_;
};

}  // namespace bagclr
