#pragma once

#include "wcell/losses.hpp"
#include "wcell/model.hpp"
#include "wcell/training.hpp"

#include <filesystem>
#include <istream>
#include <set>
#include <string>
#include <vector>

namespace wcell {

/// Everything a `train` run needs, loadable from a flat key=value file.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  std::string data;
  std::uint64_t split_seed = 0;
  std::string out_dir = "run";
  int workers = 1;
  /// Keys assigned through set(), from a file or flags.
  std::set<std::string> assigned;

  /// Sets one key. Throws std::invalid_argument for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);

  void validate() const;

  /// Every accepted key, in file order.
  static const std::vector<std::string>& keys();
};

/// Parses `key = value` lines; blank lines and lines starting with '#' are ignored.
/// Later assignments override earlier ones. Errors carry the 1-based line number.
void parse_run_config(std::istream& in, RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace wcell
