#pragma once

#include <map>
#include <string>
#include <vector>

#include "rssm/training.hpp"

namespace rssm::config {

// Flat key=value files with one [section] per command, schema-validated
// before any work: unknown keys are rejected by name, required keys must be
// present, and every value must parse as its declared type.

struct KeySpec {
  enum class Type { Int, Real, String };
  std::string name;
  Type type = Type::String;
  bool required = false;
  std::string default_value;
  std::vector<std::string> allowed;  // enum constraint when non-empty
};

const std::vector<KeySpec>& schema_for(const std::string& command);

struct RunConfig {
  std::string command;
  std::map<std::string, std::string> values;  // fully resolved incl. defaults

  bool has(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  uint64_t get_seed(const std::string& key) const;
  const std::string& get(const std::string& key) const;
};

RunConfig parse_config_text(const std::string& text, const std::string& command);
RunConfig parse_config_file(const std::string& path, const std::string& command);

// Deterministic echo of the resolved configuration (sorted keys).
std::string print_config(const RunConfig& cfg);

// Slow-scale discretization defaults: window length with H * dt ~= 0.3 s.
int default_window_steps(double dt);

// Rule of thumb for an N-level hierarchy: H_i = round(T^(i/N)).
int rule_of_thumb_window(int horizon_steps, int levels, int level);

train::ModelSpec model_spec_from(const RunConfig& cfg, int obs_dim, int act_dim, double dt);
train::LossSpec loss_spec_from(const RunConfig& cfg);
train::MaskSpec mask_spec_from(const RunConfig& cfg);
train::OptimSpec optim_spec_from(const RunConfig& cfg);

}  // namespace rssm::config

namespace rssm::cli {

// Batch entry points behind the command line front end. Return process exit
// codes: 0 ok, 2 invalid config, 3 training diverged, 4 checkpoint mismatch.
int cmd_generate(const config::RunConfig& cfg);
int cmd_train(const config::RunConfig& cfg);
int cmd_eval(const config::RunConfig& cfg);

int run_command(const std::string& command, const std::string& config_path,
                const std::string& seed_override, const std::string& out_override,
                bool print_config_only);

}  // namespace rssm::cli
