#include <benchmark/benchmark.h>

#include <random>

#include "rssm/cells.hpp"
#include "rssm/gaussian.hpp"
#include "rssm/training.hpp"

using namespace rssm;
using ad::Tensor;

namespace {

gauss::FactorizedBelief random_belief(std::mt19937_64& rng, int batch, int d) {
  std::uniform_real_distribution<double> var(0.4, 2.0);
  std::uniform_real_distribution<double> val(-1, 1);
  auto fill = [&](double lo, double hi) {
    Tensor t = Tensor::zeros({batch, d});
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data()) v = dist(rng);
    return t;
  };
  gauss::FactorizedBelief b;
  b.mean_u = fill(-1, 1);
  b.mean_l = fill(-1, 1);
  b.var_u = fill(0.5, 2.0);
  b.var_l = fill(0.5, 2.0);
  b.cov_s = fill(-0.2, 0.2);
  return b;
}

std::vector<gauss::LatentObservation> random_obs(std::mt19937_64& rng, int n, int batch, int d) {
  std::vector<gauss::LatentObservation> obs;
  std::uniform_real_distribution<double> val(-1, 1);
  std::uniform_real_distribution<double> var(0.3, 1.5);
  for (int i = 0; i < n; ++i) {
    Tensor v = Tensor::zeros({batch, d});
    Tensor s = Tensor::zeros({batch, d});
    for (auto& x : v.data()) x = val(rng);
    for (auto& x : s.data()) x = var(rng);
    obs.push_back({v, s});
  }
  return obs;
}

}  // namespace

static void BM_FactorizedKalmanUpdate(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const int batch = static_cast<int>(state.range(0)), d = 30;
  auto prior = random_belief(rng, batch, d);
  auto obs = random_obs(rng, 1, batch, d)[0];
  for (auto _ : state) {
    auto [post, trace] = gauss::factorized_kalman_update(prior, obs);
    benchmark::DoNotOptimize(post.mean_u.data().data());
  }
}
BENCHMARK(BM_FactorizedKalmanUpdate)->Arg(1)->Arg(32);

static void BM_ConditionSetBatch(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const int n = static_cast<int>(state.range(0)), batch = 16, d = 15;
  auto prior = random_belief(rng, batch, d);
  auto obs = random_obs(rng, n, batch, d);
  for (auto _ : state) {
    auto post = gauss::gaussian_condition_set(prior, obs);
    benchmark::DoNotOptimize(post.mean_u.data().data());
  }
}
BENCHMARK(BM_ConditionSetBatch)->Arg(5)->Arg(30);

static void BM_ConditionSetIncremental(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const int n = static_cast<int>(state.range(0)), batch = 16, d = 15;
  auto prior = random_belief(rng, batch, d);
  auto obs = random_obs(rng, n, batch, d);
  for (auto _ : state) {
    auto post = prior;
    for (const auto& o : obs) post = gauss::factorized_kalman_update(post, o).first;
    benchmark::DoNotOptimize(post.mean_u.data().data());
  }
}
BENCHMARK(BM_ConditionSetIncremental)->Arg(5)->Arg(30);

static void BM_AcrknStepForward(benchmark::State& state) {
  std::mt19937_64 rng(3);
  nets::ParamStore store;
  cells::AcrknSpec spec;
  spec.obs_dim = 2;
  spec.lod = 15;
  spec.act_dim = 1;
  spec.transition = {4, 3};
  spec.enc_hidden = {32};
  spec.dec_hidden = {32};
  spec.control = {nets::ControlKind::Nonlinear, 2, {32}};
  cells::AcrknCell cell(store, "m", spec, rng);
  const int batch = static_cast<int>(state.range(0));
  std::uniform_real_distribution<double> dist(-1, 1);
  Tensor obs = Tensor::zeros({batch, 2});
  Tensor act = Tensor::zeros({batch, 1});
  for (auto& v : obs.data()) v = dist(rng);
  for (auto& v : act.data()) v = dist(rng);
  auto prior = cells::initial_belief(15, batch);
  for (auto _ : state) {
    auto post = cells::masked_update(prior, cell.core().encoder, obs,
                                     Tensor::full({batch, 1}, 1.0));
    Tensor z = ad::concat({post.mean_u, post.mean_l});
    auto next = cell.core().predict(post, cell.control().mean(act, z), {});
    benchmark::DoNotOptimize(next.mean_u.data().data());
  }
}
BENCHMARK(BM_AcrknStepForward)->Arg(1)->Arg(32);

static void BM_SequenceBackward(benchmark::State& state) {
  train::ModelSpec spec;
  spec.kind = "acrkn";
  spec.lod = 8;
  spec.basis_count = 2;
  spec.bandwidth = 2;
  spec.enc_hidden = {16};
  spec.dec_hidden = {16};
  spec.control_hidden = {16};
  train::Model model(spec);
  envs::PendulumParams p;
  auto ds = envs::gen_pendulum(p, static_cast<int>(state.range(0)), 8, 1);
  envs::normalize_train(ds);
  std::mt19937_64 rng(1);
  auto batches = train::make_batches(ds, spec, 8, rng);
  auto targets = train::make_targets(batches[0], train::LossKind::GaussianNll);
  train::Masks masks = train::make_masks({}, batches[0].batch, batches[0].steps, 1, rng);
  for (auto _ : state) {
    ad::Tape tape;
    auto out = model.forward(batches[0], masks);
    Tensor loss = train::sequence_loss(train::LossKind::GaussianNll, out, targets, 0,
                                       batches[0].steps);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_SequenceBackward)->Arg(25)->Arg(100)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
