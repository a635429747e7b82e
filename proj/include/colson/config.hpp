#pragma once

#include <cstdint>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

#include "colson/eval.hpp"
#include "colson/trainer.hpp"

namespace colson {

// Everything a command needs to reproduce a run. The text form is
//
//   # comment
//   [section]
//   key = value
//
// with sections scenario, controller, model, trainer, guidance, eval, io.
// Keys missing from a file keep their defaults; unknown sections or keys
// are errors.
struct RunConfig {
  TrainConfig trainer;  // also holds scenario, controller and model settings
  std::uint64_t seed = 0;
  GuidanceConfig guidance;
  SamplingMode mode = SamplingMode::Plain;
  int smoothing_depth = 0;
  int eval_episodes = 500;
  std::uint64_t eval_seed = 1000000;
  int jobs = 1;
  std::string run_dir = "runs/default";

  ScenarioConfig& scenario() { return trainer.scenario; }
  const ScenarioConfig& scenario() const { return trainer.scenario; }
  DiffusionPolicyConfig policy_config() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// `source` names the input in messages ("<source>:<line>: ...").
RunConfig parse_config(std::istream& in, const std::string& source, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

// Applies "section.key=value".
void apply_override(RunConfig& config, const std::string& assignment);
void set_value(RunConfig& config, const std::string& section, const std::string& key, const std::string& value);

// Every key with its resolved value, in a form parse_config reads back.
std::string to_text(const RunConfig& config);

// Documented key list: "section.key  default  description" per line.
std::string describe_keys();

// Cross-field checks (positive sizes, probability ranges, ...). Throws
// ConfigError.
void validate(const RunConfig& config);

}  // namespace colson
