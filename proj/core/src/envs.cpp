#include "rssm/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace rssm::envs {

namespace {
constexpr double kPi = 3.14159265358979323846;

// per-episode child seeds so episode generation order never matters
uint64_t child_seed(uint64_t seed, uint64_t index) {
  std::mt19937_64 mix(seed ^ (0x9e3779b97f4a7c15ull + index * 0xbf58476d1ce4e5b9ull));
  return mix();
}

std::vector<double> multisine_torque(int steps, double dt, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> amp(0.5, 2.0);
  std::uniform_real_distribution<double> freq(0.1, 0.8);  // Hz
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  const int n_components = 3;
  std::vector<double> a(n_components), f(n_components), p(n_components);
  for (int j = 0; j < n_components; ++j) {
    a[j] = amp(rng);
    f[j] = freq(rng);
    p[j] = phase(rng);
  }
  std::vector<double> u(static_cast<size_t>(steps), 0.0);
  for (int t = 0; t < steps; ++t)
    for (int j = 0; j < n_components; ++j)
      u[static_cast<size_t>(t)] += a[j] * std::sin(2.0 * kPi * f[j] * t * dt + p[j]);
  return u;
}

Episode make_episode(const PendulumParams& params, int steps, std::mt19937_64& rng,
                     const std::vector<double>& mass_per_step) {
  std::uniform_real_distribution<double> angle(-kPi, kPi);
  std::uniform_real_distribution<double> speed(-1.0, 1.0);
  std::vector<double> torque = multisine_torque(steps, params.dt, rng);
  PendulumTrajectory traj =
      simulate_pendulum(params, torque, angle(rng), speed(rng), mass_per_step);
  Episode ep;
  ep.steps = steps;
  ep.obs_dim = 2;
  ep.act_dim = 1;
  ep.obs.resize(static_cast<size_t>(steps) * 2);
  ep.act = torque;
  ep.valid.assign(static_cast<size_t>(steps), 1.0);
  ep.aux = mass_per_step.empty()
               ? std::vector<double>(static_cast<size_t>(steps), params.mass)
               : mass_per_step;
  for (int t = 0; t < steps; ++t) {
    ep.obs[static_cast<size_t>(t) * 2] = std::sin(traj.theta[static_cast<size_t>(t)]);
    ep.obs[static_cast<size_t>(t) * 2 + 1] = std::cos(traj.theta[static_cast<size_t>(t)]);
  }
  return ep;
}

// noise scaled to the clean per-dim spread, then drawn deterministically
void add_obs_noise(EpisodeDataset& ds, double noise, uint64_t seed) {
  if (noise <= 0.0) return;
  const int dims = ds.obs_dim;
  std::vector<double> mean(dims, 0.0), sq(dims, 0.0);
  int64_t count = 0;
  for (const Episode& ep : ds.episodes) {
    for (int t = 0; t < ep.steps; ++t)
      for (int j = 0; j < dims; ++j) {
        mean[static_cast<size_t>(j)] += ep.obs[static_cast<size_t>(t) * dims + j];
        sq[static_cast<size_t>(j)] +=
            ep.obs[static_cast<size_t>(t) * dims + j] * ep.obs[static_cast<size_t>(t) * dims + j];
      }
    count += ep.steps;
  }
  std::vector<double> scale(dims, 0.0);
  for (int j = 0; j < dims; ++j) {
    const double mu = mean[static_cast<size_t>(j)] / static_cast<double>(count);
    scale[static_cast<size_t>(j)] =
        noise * std::sqrt(std::max(sq[static_cast<size_t>(j)] / static_cast<double>(count) - mu * mu, 1e-12));
  }
  std::mt19937_64 rng(child_seed(seed, 0xabcdef));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Episode& ep : ds.episodes)
    for (auto j = size_t{0}; j < ep.obs.size(); ++j)
      ep.obs[j] += scale[j % static_cast<size_t>(dims)] * gauss(rng);
}

void stats_of(const EpisodeDataset& ds, NormStats& stats) {
  const int od = ds.obs_dim, ad = ds.act_dim;
  stats.obs_mean.assign(static_cast<size_t>(od), 0.0);
  stats.obs_std.assign(static_cast<size_t>(od), 0.0);
  stats.act_mean.assign(static_cast<size_t>(ad), 0.0);
  stats.act_std.assign(static_cast<size_t>(ad), 0.0);
  int64_t count = 0;
  for (const Episode& ep : ds.episodes) {
    for (int t = 0; t < ep.steps; ++t) {
      for (int j = 0; j < od; ++j)
        stats.obs_mean[static_cast<size_t>(j)] += ep.obs[static_cast<size_t>(t) * od + j];
      for (int j = 0; j < ad; ++j)
        stats.act_mean[static_cast<size_t>(j)] += ep.act[static_cast<size_t>(t) * ad + j];
    }
    count += ep.steps;
  }
  for (auto& v : stats.obs_mean) v /= static_cast<double>(count);
  for (auto& v : stats.act_mean) v /= static_cast<double>(count);
  for (const Episode& ep : ds.episodes)
    for (int t = 0; t < ep.steps; ++t) {
      for (int j = 0; j < od; ++j) {
        const double r = ep.obs[static_cast<size_t>(t) * od + j] - stats.obs_mean[static_cast<size_t>(j)];
        stats.obs_std[static_cast<size_t>(j)] += r * r;
      }
      for (int j = 0; j < ad; ++j) {
        const double r = ep.act[static_cast<size_t>(t) * ad + j] - stats.act_mean[static_cast<size_t>(j)];
        stats.act_std[static_cast<size_t>(j)] += r * r;
      }
    }
  for (auto& v : stats.obs_std) v = std::max(std::sqrt(v / static_cast<double>(count)), 1e-12);
  for (auto& v : stats.act_std) v = std::max(std::sqrt(v / static_cast<double>(count)), 1e-12);
}

void apply_stats(EpisodeDataset& ds, const NormStats& stats) {
  const int od = ds.obs_dim, ad = ds.act_dim;
  for (Episode& ep : ds.episodes)
    for (int t = 0; t < ep.steps; ++t) {
      for (int j = 0; j < od; ++j) {
        auto& v = ep.obs[static_cast<size_t>(t) * od + j];
        v = (v - stats.obs_mean[static_cast<size_t>(j)]) / stats.obs_std[static_cast<size_t>(j)];
      }
      for (int j = 0; j < ad; ++j) {
        auto& v = ep.act[static_cast<size_t>(t) * ad + j];
        v = (v - stats.act_mean[static_cast<size_t>(j)]) / stats.act_std[static_cast<size_t>(j)];
      }
    }
  ds.stats = stats;
}

}  // namespace

PendulumTrajectory simulate_pendulum(const PendulumParams& params,
                                     const std::vector<double>& torque, double theta0,
                                     double omega0, const std::vector<double>& mass_per_step) {
  if (params.dt > 0.05)
    throw ConfigError("simulate_pendulum: dt must be <= 0.05 for stable integration");
  const int steps = static_cast<int>(torque.size());
  PendulumTrajectory traj;
  traj.theta.resize(static_cast<size_t>(steps));
  traj.omega.resize(static_cast<size_t>(steps));
  double theta = theta0, omega = omega0;
  for (int t = 0; t < steps; ++t) {
    traj.theta[static_cast<size_t>(t)] = theta;
    traj.omega[static_cast<size_t>(t)] = omega;
    const double m = mass_per_step.empty() ? params.mass : mass_per_step[static_cast<size_t>(t)];
    const double acc = -(params.gravity / params.length) * std::sin(theta) -
                       params.damping * omega +
                       torque[static_cast<size_t>(t)] / (m * params.length * params.length);
    omega += params.dt * acc;
    theta += params.dt * omega;
  }
  return traj;
}

EpisodeDataset gen_pendulum(const PendulumParams& params, int steps, int n_episodes,
                            uint64_t seed, double obs_noise) {
  EpisodeDataset ds;
  ds.dt = params.dt;
  ds.obs_dim = 2;
  ds.act_dim = 1;
  for (int e = 0; e < n_episodes; ++e) {
    std::mt19937_64 rng(child_seed(seed, static_cast<uint64_t>(e)));
    ds.episodes.push_back(make_episode(params, steps, rng, {}));
  }
  add_obs_noise(ds, obs_noise, seed);
  return ds;
}

EpisodeDataset gen_hip_variant(const PendulumParams& base, int segment_len, int steps,
                               int n_episodes, uint64_t seed, bool test_split,
                               double obs_noise) {
  const std::vector<double> train_masses = {0.5, 1.0, 2.5};
  const std::vector<double> test_masses = {1.5, 2.0};
  const auto& masses = test_split ? test_masses : train_masses;
  EpisodeDataset ds;
  ds.dt = base.dt;
  ds.obs_dim = 2;
  ds.act_dim = 1;
  ds.split = test_split ? "test" : "train";
  for (int e = 0; e < n_episodes; ++e) {
    std::mt19937_64 rng(child_seed(seed, static_cast<uint64_t>(e) + (test_split ? 1u << 20 : 0u)));
    std::uniform_int_distribution<size_t> pick(0, masses.size() - 1);
    std::vector<double> mass(static_cast<size_t>(steps), masses[0]);
    for (int t = 0; t < steps; t += segment_len) {
      const double m = masses[pick(rng)];
      for (int i = t; i < std::min(steps, t + segment_len); ++i) mass[static_cast<size_t>(i)] = m;
    }
    ds.episodes.push_back(make_episode(base, steps, rng, mass));
  }
  add_obs_noise(ds, obs_noise, seed + (test_split ? 1 : 0));
  return ds;
}

EpisodeDataset gen_two_timescale(const PendulumParams& base, int period_steps, int steps,
                                 int n_episodes, uint64_t seed, double obs_noise,
                                 double drift_amplitude) {
  EpisodeDataset ds;
  ds.dt = base.dt;
  ds.obs_dim = 2;
  ds.act_dim = 1;
  for (int e = 0; e < n_episodes; ++e) {
    std::mt19937_64 rng(child_seed(seed, static_cast<uint64_t>(e)));
    std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
    const double ph = phase(rng);
    std::vector<double> mass(static_cast<size_t>(steps));
    for (int t = 0; t < steps; ++t)
      mass[static_cast<size_t>(t)] =
          1.5 + drift_amplitude * std::sin(2.0 * kPi * static_cast<double>(t) / period_steps + ph);
    ds.episodes.push_back(make_episode(base, steps, rng, mass));
  }
  add_obs_noise(ds, obs_noise, seed);
  return ds;
}

void normalize_train(EpisodeDataset& ds) {
  NormStats stats;
  stats_of(ds, stats);
  apply_stats(ds, stats);
  ds.split = "train";
}

void normalize_with(EpisodeDataset& ds, const NormStats& stats) { apply_stats(ds, stats); }

std::vector<double> denormalize_obs(const NormStats& stats, const std::vector<double>& row) {
  std::vector<double> out(row.size());
  for (size_t j = 0; j < row.size(); ++j)
    out[j] = row[j] * stats.obs_std[j % stats.obs_std.size()] +
             stats.obs_mean[j % stats.obs_mean.size()];
  return out;
}

std::vector<double> denormalize_obs_var(const NormStats& stats, const std::vector<double>& var) {
  std::vector<double> out(var.size());
  for (size_t j = 0; j < var.size(); ++j) {
    const double s = stats.obs_std[j % stats.obs_std.size()];
    out[j] = var[j] * s * s;
  }
  return out;
}

WindowedDataset window_dataset(const EpisodeDataset& ds, int window_len) {
  WindowedDataset out;
  out.window_len = window_len;
  for (size_t e = 0; e < ds.episodes.size(); ++e) {
    const int T = ds.episodes[e].steps;
    if (T < 2 * window_len)
      throw TooShort("window_dataset: episode shorter than two windows");
    for (int start = window_len; start + window_len <= T; start += window_len)
      out.pairs.push_back(
          {static_cast<int>(e), start - window_len, start, window_len});
  }
  return out;
}

void save_dataset(const EpisodeDataset& ds, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("save_dataset: cannot open " + path);
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  f << "# rssm-dataset v1\n";
  f << "# split " << ds.split << "\n";
  f << "# dt " << fmt(ds.dt) << "\n";
  f << "# obs_dim " << ds.obs_dim << " act_dim " << ds.act_dim << "\n";
  auto stat_line = [&](const char* tag, const std::vector<double>& v) {
    f << "# " << tag;
    for (double x : v) f << " " << fmt(x);
    f << "\n";
  };
  stat_line("obs_mean", ds.stats.obs_mean);
  stat_line("obs_std", ds.stats.obs_std);
  stat_line("act_mean", ds.stats.act_mean);
  stat_line("act_std", ds.stats.act_std);
  f << "episode_id,t";
  for (int j = 0; j < ds.obs_dim; ++j) f << ",o" << j;
  for (int j = 0; j < ds.act_dim; ++j) f << ",a" << j;
  f << "\n";
  for (size_t e = 0; e < ds.episodes.size(); ++e) {
    const Episode& ep = ds.episodes[e];
    for (int t = 0; t < ep.steps; ++t) {
      f << e << "," << t;
      for (int j = 0; j < ds.obs_dim; ++j)
        f << "," << fmt(ep.obs[static_cast<size_t>(t) * ds.obs_dim + j]);
      for (int j = 0; j < ds.act_dim; ++j)
        f << "," << fmt(ep.act[static_cast<size_t>(t) * ds.act_dim + j]);
      f << "\n";
    }
  }
}

EpisodeDataset load_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("load_dataset: cannot open " + path);
  EpisodeDataset ds;
  std::string line;
  auto parse_stats = [](std::istringstream& is, std::vector<double>& v) {
    double x;
    while (is >> x) v.push_back(x);
  };
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream is(line.substr(1));
      std::string key;
      is >> key;
      if (key == "split") is >> ds.split;
      else if (key == "dt") is >> ds.dt;
      else if (key == "obs_dim") {
        std::string tag;
        is >> ds.obs_dim >> tag >> ds.act_dim;
      } else if (key == "obs_mean") parse_stats(is, ds.stats.obs_mean);
      else if (key == "obs_std") parse_stats(is, ds.stats.obs_std);
      else if (key == "act_mean") parse_stats(is, ds.stats.act_mean);
      else if (key == "act_std") parse_stats(is, ds.stats.act_std);
      continue;
    }
    if (line.rfind("episode_id", 0) == 0) continue;
    std::istringstream is(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(is, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    const int e = static_cast<int>(row[0]);
    while (static_cast<int>(ds.episodes.size()) <= e) {
      Episode ep;
      ep.obs_dim = ds.obs_dim;
      ep.act_dim = ds.act_dim;
      ds.episodes.push_back(ep);
    }
    Episode& ep = ds.episodes[static_cast<size_t>(e)];
    for (int j = 0; j < ds.obs_dim; ++j) ep.obs.push_back(row[static_cast<size_t>(2 + j)]);
    for (int j = 0; j < ds.act_dim; ++j)
      ep.act.push_back(row[static_cast<size_t>(2 + ds.obs_dim + j)]);
    ep.steps += 1;
    ep.valid.push_back(1.0);
  }
  return ds;
}

}  // namespace rssm::envs
