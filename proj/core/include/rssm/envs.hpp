#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rssm/errors.hpp"

namespace rssm::envs {

// Damped torque-driven pendulum, the desk-scale stand-in for every data
// source. Observations are positions only ([sin theta, cos theta]); the
// angular velocity stays hidden, which keeps the latent filtering problem
// partially observable.

struct PendulumParams {
  double mass = 1.0;      // kg
  double length = 1.0;    // m
  double damping = 0.25;  // 1/s
  double gravity = 9.81;  // m/s^2
  double dt = 0.05;       // s
};

struct PendulumTrajectory {
  std::vector<double> theta;
  std::vector<double> omega;
};

// Semi-implicit Euler integration of
//   theta'' = -(g/L) sin theta - c theta' + u / (m L^2).
// `mass_per_step`, when non-empty, overrides params.mass per step.
PendulumTrajectory simulate_pendulum(const PendulumParams& params,
                                     const std::vector<double>& torque, double theta0,
                                     double omega0,
                                     const std::vector<double>& mass_per_step = {});

struct Episode {
  int steps = 0;
  int obs_dim = 0;
  int act_dim = 0;
  std::vector<double> obs;    // steps x obs_dim, row major
  std::vector<double> act;    // steps x act_dim
  std::vector<double> valid;  // steps, 1 = observation present in the data
  std::vector<double> aux;    // steps, generator-internal (hidden mass); not observed
};

struct NormStats {
  std::vector<double> obs_mean, obs_std;
  std::vector<double> act_mean, act_std;
  bool empty() const { return obs_mean.empty(); }
};

struct EpisodeDataset {
  std::vector<Episode> episodes;  // normalized once stats is set
  NormStats stats;
  std::string split = "train";
  double dt = 0.05;
  int obs_dim = 0;
  int act_dim = 0;
};

// Generators return raw (unnormalized) datasets; pair with normalize_train /
// normalize_with below. All are pure functions of (params, seed).

// Random multisine torque policy, observation noise scaled to 0.01 of the
// clean per-dim signal spread.
EpisodeDataset gen_pendulum(const PendulumParams& params, int steps, int n_episodes,
                            uint64_t seed, double obs_noise = 0.01);

// Hidden-parameter variant: the mass is redrawn per segment of length
// `segment_len` from a split-dependent set (train {0.5, 1.0, 2.5},
// test {1.5, 2.0}); the hidden parameter never enters the observations.
EpisodeDataset gen_hip_variant(const PendulumParams& base, int segment_len, int steps,
                               int n_episodes, uint64_t seed, bool test_split,
                               double obs_noise = 0.01);

// Two-timescale variant: slow sinusoidal mass drift
// m(t) = 1.5 + amplitude * sin(2 pi t / period_steps), amplitude 0.8.
EpisodeDataset gen_two_timescale(const PendulumParams& base, int period_steps, int steps,
                                 int n_episodes, uint64_t seed, double obs_noise = 0.01,
                                 double drift_amplitude = 0.8);

// Computes stats on this dataset and normalizes in place (train split).
void normalize_train(EpisodeDataset& ds);
// Normalizes with externally provided stats (test split).
void normalize_with(EpisodeDataset& ds, const NormStats& stats);

std::vector<double> denormalize_obs(const NormStats& stats, const std::vector<double>& row);
std::vector<double> denormalize_obs_var(const NormStats& stats, const std::vector<double>& var);

// Non-overlapping (context, target) windows of equal length; the leading
// window only ever serves as context.
struct WindowPair {
  int episode = 0;
  int ctx_start = 0;
  int tgt_start = 0;
  int len = 0;
};

struct WindowedDataset {
  int window_len = 0;
  std::vector<WindowPair> pairs;
};

WindowedDataset window_dataset(const EpisodeDataset& ds, int window_len);

// One file per split; header carries dims, dt and normalization stats, rows
// are (episode_id, t, obs..., act...). Reload is bit exact.
void save_dataset(const EpisodeDataset& ds, const std::string& path);
EpisodeDataset load_dataset(const std::string& path);

}  // namespace rssm::envs
