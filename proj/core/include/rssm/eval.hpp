#pragma once

#include <string>
#include <vector>

#include "rssm/envs.hpp"
#include "rssm/training.hpp"

namespace rssm::eval {

// Open-loop evaluation record, everything denormalized: observations are fed
// for `context_len` steps, masked for `horizon` steps (actions stay given).
struct RolloutResult {
  int steps = 0;
  int obs_dim = 0;
  int context_len = 0;
  int horizon = 0;
  std::vector<double> pred_mean;     // steps x obs_dim
  std::vector<double> pred_var;      // steps x obs_dim
  std::vector<double> ground_truth;  // steps x obs_dim
};

RolloutResult rollout(const train::Model& model, const envs::EpisodeDataset& ds, int episode,
                      int context_len, int horizon);

// Trailing-window metrics over the prediction horizon; windows clip at the
// start of the horizon. One value per horizon step.
std::vector<double> sliding_rmse(const RolloutResult& r, int window);
std::vector<double> sliding_nll(const RolloutResult& r, int window);

struct MetricsRow {
  std::string model;
  std::string env;
  uint64_t seed = 0;
  int horizon_step = 0;
  double rmse = 0.0;
  double nll = 0.0;
};

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

void write_predictions_csv(const std::string& path, const RolloutResult& r);
RolloutResult read_predictions_csv(const std::string& path);

}  // namespace rssm::eval
