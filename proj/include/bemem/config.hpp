#pragma once

// Flat key=value run configuration. Blank lines and '#' comments are ignored;
// unknown keys are errors.

#include "bemem/dataset.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace bemem {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int steps = 40000;
  int batch = 64;
  double lr = 1e-3;
  double min_lr_fraction = 0.0;  // cosine decay floor
  int warmup = 200;
  double drop_prob = 0.1;
  int checkpoint_every = 0;  // 0 = only the final checkpoint
};

struct ScheduleConfig {
  int steps = 100;
  double beta_start = 1e-3;
  double beta_end = 0.2;
};

struct EvalConfig {
  int generations = 16;
  int nonmem_prompts = 100;  // leading NON_MEM prompts evaluated
  double guidance = 5.0;
  int sampler_steps = 100;
  std::vector<int> budgets = {1, 10, 0};  // 0 = all steps
  std::vector<int> be_layers = {0, 1};
};

struct MitigateConfig {
  int levels = 5;
  int max_iters = 100;
  double lr = 0.05;
  int noise_samples = 1;
  int prompts_per_stratum = 5;
  int generations = 4;  // triggered generations optimised per prompt
};

struct RunConfig {
  CorpusSpec corpus;
  TrainConfig train;
  ScheduleConfig schedule;
  EvalConfig eval;
  MitigateConfig mitigate;
  std::uint64_t seed = 0;

  void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its resolved value, sorted, one "key=value" per line.
std::string canonical_config(const RunConfig& c);

/// SHA-256 of canonical_config.
std::string config_hash(const RunConfig& c);

}  // namespace bemem
