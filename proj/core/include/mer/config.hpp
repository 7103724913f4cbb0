#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mer/dataset.hpp"
#include "mer/model.hpp"
#include "mer/train.hpp"

namespace mer {

/// Every tunable of a run. Serialised as flat `key = value` lines.
struct RunConfig {
  ModelConfig model;
  TrainSchedule schedule;
  PrepOptions prep;
  std::uint64_t seed = 1;
  bool uf1_literal = false;
  std::size_t warm_start_steps = 1000;

  /// Assigns one key; throws ParseError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Resolved `key = value` text in a fixed key order.
  std::string to_text() const;
  static std::vector<std::string> keys();
};

/// Applies every assignment in `text`. Blank lines and `#` comments are
/// ignored; the error offset is the byte offset of the offending line.
void apply_config_text(RunConfig& cfg, const std::string& text);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
/// Applies one `key=value` override.
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace mer
