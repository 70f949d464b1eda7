#include "rssm/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rssm::eval {

namespace {
constexpr double kTwoPi = 6.283185307179586476925;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}
}  // namespace

RolloutResult rollout(const train::Model& model, const envs::EpisodeDataset& ds, int episode,
                      int context_len, int horizon) {
  if (episode < 0 || episode >= static_cast<int>(ds.episodes.size()))
    throw ConfigError("rollout: episode index out of range");
  const envs::Episode& ep = ds.episodes[static_cast<size_t>(episode)];
  const int T = context_len + horizon;
  if (context_len < 1 || T > ep.steps)
    throw TooShort("rollout: context + horizon exceeds the episode length");
  const int od = ds.obs_dim, ad_ = ds.act_dim;

  train::Batch batch;
  batch.batch = 1;
  batch.steps = T;
  for (int t = 0; t < T; ++t) {
    batch.obs.push_back(ad::Tensor::from(
        {1, od}, std::vector<double>(ep.obs.begin() + static_cast<ptrdiff_t>(t) * od,
                                     ep.obs.begin() + static_cast<ptrdiff_t>(t + 1) * od)));
    batch.act.push_back(ad::Tensor::from(
        {1, ad_}, std::vector<double>(ep.act.begin() + static_cast<ptrdiff_t>(t) * ad_,
                                      ep.act.begin() + static_cast<ptrdiff_t>(t + 1) * ad_)));
  }
  if (model.spec().kind == "hiprssm") {
    // context tuples from the tail of the observed region
    const int n = std::min(model.spec().window_len, context_len - 1);
    for (int i = context_len - 1 - n; i < context_len - 1; ++i)
      batch.ctx.push_back(ad::concat({batch.obs[static_cast<size_t>(i)],
                                      batch.act[static_cast<size_t>(i)],
                                      batch.obs[static_cast<size_t>(i + 1)]}));
  }

  train::Masks masks;
  for (int t = 0; t < T; ++t)
    masks.step.push_back(ad::Tensor::full({1, 1}, t < context_len ? 1.0 : 0.0));
  const int H = model.mask_window_len();
  for (int k = 0; k < (T + H - 1) / H; ++k)
    masks.window.push_back(ad::Tensor::full({1, 1}, 1.0));

  auto out = model.forward(batch, masks);

  RolloutResult r;
  r.steps = T;
  r.obs_dim = od;
  r.context_len = context_len;
  r.horizon = horizon;
  r.pred_mean.resize(static_cast<size_t>(T) * od);
  r.pred_var.resize(static_cast<size_t>(T) * od);
  r.ground_truth.resize(static_cast<size_t>(T) * od);

  // normalized-space predictions; differences mode reconstructs with the
  // last available observation or, open loop, the last prediction
  std::vector<double> memory(static_cast<size_t>(od), 0.0);
  for (int j = 0; j < od; ++j) memory[static_cast<size_t>(j)] = ep.obs[static_cast<size_t>(j)];
  for (int t = 0; t < T; ++t) {
    std::vector<double> mean(static_cast<size_t>(od)), var(static_cast<size_t>(od));
    for (int j = 0; j < od; ++j) {
      mean[static_cast<size_t>(j)] = out.pred_mean[static_cast<size_t>(t)].value(j);
      var[static_cast<size_t>(j)] = out.pred_var[static_cast<size_t>(t)].value(j);
    }
    if (model.predicts_differences()) {
      if (t == 0) {
        for (int j = 0; j < od; ++j) mean[static_cast<size_t>(j)] = memory[static_cast<size_t>(j)];
      } else {
        for (int j = 0; j < od; ++j) mean[static_cast<size_t>(j)] += memory[static_cast<size_t>(j)];
      }
      for (int j = 0; j < od; ++j)
        memory[static_cast<size_t>(j)] = t < context_len
                                             ? ep.obs[static_cast<size_t>(t) * od + j]
                                             : mean[static_cast<size_t>(j)];
    }
    std::vector<double> gt(static_cast<size_t>(od));
    for (int j = 0; j < od; ++j) gt[static_cast<size_t>(j)] = ep.obs[static_cast<size_t>(t) * od + j];
    auto dmean = envs::denormalize_obs(ds.stats, mean);
    auto dvar = envs::denormalize_obs_var(ds.stats, var);
    auto dgt = envs::denormalize_obs(ds.stats, gt);
    for (int j = 0; j < od; ++j) {
      r.pred_mean[static_cast<size_t>(t) * od + j] = dmean[static_cast<size_t>(j)];
      r.pred_var[static_cast<size_t>(t) * od + j] = dvar[static_cast<size_t>(j)];
      r.ground_truth[static_cast<size_t>(t) * od + j] = dgt[static_cast<size_t>(j)];
    }
  }
  return r;
}

std::vector<double> sliding_rmse(const RolloutResult& r, int window) {
  if (window < 1) throw ConfigError("sliding_rmse: window must be >= 1");
  std::vector<double> out;
  for (int t = r.context_len; t < r.steps; ++t) {
    const int lo = std::max(r.context_len, t - window + 1);
    double acc = 0.0;
    int n = 0;
    for (int i = lo; i <= t; ++i)
      for (int j = 0; j < r.obs_dim; ++j) {
        const double d = r.ground_truth[static_cast<size_t>(i) * r.obs_dim + j] -
                         r.pred_mean[static_cast<size_t>(i) * r.obs_dim + j];
        acc += d * d;
        ++n;
      }
    out.push_back(std::sqrt(acc / n));
  }
  return out;
}

std::vector<double> sliding_nll(const RolloutResult& r, int window) {
  if (window < 1) throw ConfigError("sliding_nll: window must be >= 1");
  std::vector<double> out;
  for (int t = r.context_len; t < r.steps; ++t) {
    const int lo = std::max(r.context_len, t - window + 1);
    double acc = 0.0;
    int n = 0;
    for (int i = lo; i <= t; ++i)
      for (int j = 0; j < r.obs_dim; ++j) {
        const double v = r.pred_var[static_cast<size_t>(i) * r.obs_dim + j];
        if (!(v > 0.0)) throw NonPositiveVariance("sliding_nll: predictive variance <= 0");
        const double d = r.ground_truth[static_cast<size_t>(i) * r.obs_dim + j] -
                         r.pred_mean[static_cast<size_t>(i) * r.obs_dim + j];
        acc += 0.5 * (std::log(kTwoPi * v) + d * d / v);
        ++n;
      }
    out.push_back(acc / n);
  }
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream f(path);
  if (!f) throw ConfigError("write_metrics_csv: cannot open " + path);
  f << "model,env,seed,horizon_step,rmse,nll\n";
  for (const MetricsRow& r : rows)
    f << r.model << "," << r.env << "," << r.seed << "," << r.horizon_step << "," << fmt(r.rmse)
      << "," << fmt(r.nll) << "\n";
}

void write_predictions_csv(const std::string& path, const RolloutResult& r) {
  std::ofstream f(path);
  if (!f) throw ConfigError("write_predictions_csv: cannot open " + path);
  f << "# context_len " << r.context_len << " horizon " << r.horizon << " obs_dim " << r.obs_dim
    << "\n";
  f << "t";
  for (int j = 0; j < r.obs_dim; ++j) f << ",gt" << j;
  for (int j = 0; j < r.obs_dim; ++j) f << ",mean" << j;
  for (int j = 0; j < r.obs_dim; ++j) f << ",var" << j;
  f << "\n";
  for (int t = 0; t < r.steps; ++t) {
    f << t;
    for (int j = 0; j < r.obs_dim; ++j)
      f << "," << fmt(r.ground_truth[static_cast<size_t>(t) * r.obs_dim + j]);
    for (int j = 0; j < r.obs_dim; ++j)
      f << "," << fmt(r.pred_mean[static_cast<size_t>(t) * r.obs_dim + j]);
    for (int j = 0; j < r.obs_dim; ++j)
      f << "," << fmt(r.pred_var[static_cast<size_t>(t) * r.obs_dim + j]);
    f << "\n";
  }
}

RolloutResult read_predictions_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("read_predictions_csv: cannot open " + path);
  RolloutResult r;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream is(line.substr(1));
      std::string tag;
      is >> tag >> r.context_len >> tag >> r.horizon >> tag >> r.obs_dim;
      continue;
    }
    if (line[0] == 't') continue;
    std::istringstream is(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(is, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    const int od = r.obs_dim;
    for (int j = 0; j < od; ++j) r.ground_truth.push_back(row[static_cast<size_t>(1 + j)]);
    for (int j = 0; j < od; ++j) r.pred_mean.push_back(row[static_cast<size_t>(1 + od + j)]);
    for (int j = 0; j < od; ++j) r.pred_var.push_back(row[static_cast<size_t>(1 + 2 * od + j)]);
    r.steps += 1;
  }
  return r;
}

}  // namespace rssm::eval
