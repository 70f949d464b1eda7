#include "rssm/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace rssm::train {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written as native little-endian float64");

namespace {
constexpr double kTwoPi = 6.283185307179586476925;

nets::ControlKind control_kind_of(const std::string& name) {
  if (name == "linear") return nets::ControlKind::Linear;
  if (name == "locally_linear") return nets::ControlKind::LocallyLinear;
  if (name == "nonlinear") return nets::ControlKind::Nonlinear;
  throw ConfigError("unknown control kind: " + name);
}

nets::TaskKind task_kind_of(const std::string& name) {
  if (name == "linear") return nets::TaskKind::Linear;
  if (name == "locally_linear") return nets::TaskKind::LocallyLinear;
  if (name == "nonlinear") return nets::TaskKind::Nonlinear;
  throw ConfigError("unknown task kind: " + name);
}

}  // namespace

Masks make_masks(const MaskSpec& spec, int batch, int steps, int window_len,
                 std::mt19937_64& rng) {
  Masks out;
  std::bernoulli_distribution drop_step(spec.step_mask_fraction);
  std::bernoulli_distribution drop_window(spec.window_mask_fraction);
  for (int t = 0; t < steps; ++t) {
    Tensor m = Tensor::zeros({batch, 1});
    for (int b = 0; b < batch; ++b)
      m.data()[static_cast<size_t>(b)] = (t == 0 || !drop_step(rng)) ? 1.0 : 0.0;
    out.step.push_back(m);
  }
  const int windows = (steps + window_len - 1) / window_len;
  for (int k = 0; k < windows; ++k) {
    Tensor m = Tensor::zeros({batch, 1});
    for (int b = 0; b < batch; ++b)
      m.data()[static_cast<size_t>(b)] = (k == 0 || !drop_window(rng)) ? 1.0 : 0.0;
    out.window.push_back(m);
  }
  return out;
}

Tensor gaussian_nll(const std::vector<Tensor>& pred_mean, const std::vector<Tensor>& pred_var,
                    const std::vector<Tensor>& target, const std::vector<Tensor>& valid) {
  const int dims = pred_mean[0].dim(pred_mean[0].rank() - 1);
  std::vector<Tensor> terms;
  double count = 0.0;
  for (size_t t = 0; t < pred_mean.size(); ++t) {
    for (double v : pred_var[t].data())
      if (!(v > 0.0)) throw NonPositiveVariance("gaussian_nll: predictive variance <= 0");
    Tensor vmask = cells::expand_rows(valid[t], dims);
    Tensor resid = target[t] - pred_mean[t];
    Tensor nll = 0.5 * (ad::log(pred_var[t] * kTwoPi) + resid * resid / pred_var[t]);
    terms.push_back(ad::sum_all(ad::where(vmask, nll, Tensor::zeros(nll.shape()))));
    for (double v : valid[t].data()) count += v * dims;
  }
  return ad::pairwise_sum(terms) * (1.0 / std::max(count, 1.0));
}

Tensor rmse_differences(const std::vector<Tensor>& pred_delta,
                        const std::vector<Tensor>& target_delta,
                        const std::vector<Tensor>& valid) {
  const int dims = pred_delta[0].dim(pred_delta[0].rank() - 1);
  std::vector<Tensor> terms;
  double count = 0.0;
  for (size_t t = 0; t < pred_delta.size(); ++t) {
    Tensor vmask = cells::expand_rows(valid[t], dims);
    Tensor resid = target_delta[t] - pred_delta[t];
    resid = ad::where(vmask, resid, Tensor::zeros(resid.shape()));
    terms.push_back(ad::sum_all(resid * resid));
    for (double v : valid[t].data()) count += v;
  }
  return ad::sqrt(ad::pairwise_sum(terms) * (1.0 / std::max(count, 1.0)));
}

Model::Model(const ModelSpec& spec) : spec_(spec) {
  std::mt19937_64 rng(spec.init_seed);
  if (spec.kind == "rkn" || spec.kind == "acrkn" || spec.kind == "hiprssm") {
    cells::HiprssmSpec cs;
    cs.obs_dim = spec.obs_dim;
    cs.lod = spec.lod;
    cs.act_dim = spec.act_dim;
    cs.transition = {spec.basis_count, spec.bandwidth};
    cs.enc_hidden = spec.enc_hidden;
    cs.dec_hidden = spec.dec_hidden;
    cs.trans_noise_init = spec.trans_noise_init;
    cs.control = {control_kind_of(spec.control_kind), spec.basis_count, spec.control_hidden};
    cs.task_dim = spec.task_dim;
    cs.task = {task_kind_of(spec.task_kind), spec.basis_count, spec.ctx_hidden};
    cs.ctx_hidden = spec.ctx_hidden;
    if (spec.kind == "rkn") {
      rkn_ = cells::RknCell(store_, "rkn", cs, rng);
    } else if (spec.kind == "acrkn") {
      acrkn_ = cells::AcrknCell(store_, "acrkn", cs, rng);
    } else {
      hiprssm_ = cells::HiprssmCell(store_, "hiprssm", cs, rng);
    }
  } else if (spec.kind == "mts3") {
    if (spec.task_dim % 2 != 0) throw ConfigError("mts3 task dimension must be even");
    cells::Mts3Spec ms;
    ms.obs_dim = spec.obs_dim;
    ms.act_dim = spec.act_dim;
    ms.lod = spec.lod;
    ms.task_half = spec.task_dim / 2;
    ms.window_len = spec.window_len;
    ms.fast_transition = {1, spec.bandwidth};  // single linear A on the fast scale
    ms.control = {control_kind_of(spec.control_kind), spec.basis_count, spec.control_hidden};
    ms.enc_hidden = spec.enc_hidden;
    ms.dec_hidden = spec.dec_hidden;
    ms.set_enc_hidden = spec.set_enc_hidden;
    ms.trans_noise_init = spec.trans_noise_init;
    ms.task_noise_init = spec.task_noise_init;
    mts3_ = cells::Mts3Cell(store_, "mts3", ms, rng);
  } else {
    throw ConfigError("unknown model kind: " + spec.kind);
  }
}

int Model::mask_window_len() const { return spec_.kind == "mts3" ? spec_.window_len : 1; }

const cells::Mts3Cell& Model::mts3() const { return mts3_; }
const cells::HiprssmCell& Model::hiprssm() const { return hiprssm_; }
const cells::AcrknCell& Model::acrkn() const { return acrkn_; }
const cells::RknCell& Model::rkn() const { return rkn_; }

cells::SequenceOutput Model::forward(const Batch& batch, const Masks& masks,
                                     const Carry* carry) const {
  cells::SequenceInput in;
  in.obs = batch.obs;
  in.act = batch.act;
  in.step_mask = masks.step;
  if (carry != nullptr && carry->fast.has_value()) in.initial = carry->fast;
  if (spec_.kind == "rkn") return cells::rkn_sequence(rkn_, in);
  if (spec_.kind == "acrkn") return cells::acrkn_sequence(acrkn_, in);
  if (spec_.kind == "hiprssm") {
    gauss::DiagGaussian task = hiprssm_.infer_task({batch.ctx});
    return cells::hiprssm_sequence(hiprssm_, in, task);
  }
  if (carry != nullptr && carry->task.has_value()) in.initial_task = carry->task;
  return cells::mts3_sequence(mts3_, in, masks.window);
}

std::unique_ptr<Model> make_model(const ModelSpec& spec) {
  return std::make_unique<Model>(spec);
}

namespace {

Tensor gather_rows(const envs::EpisodeDataset& ds, const std::vector<int>& episodes, int t,
                   bool actions) {
  const int dims = actions ? ds.act_dim : ds.obs_dim;
  Tensor out = Tensor::zeros({static_cast<int>(episodes.size()), dims});
  for (size_t b = 0; b < episodes.size(); ++b) {
    const envs::Episode& ep = ds.episodes[static_cast<size_t>(episodes[b])];
    const auto& src = actions ? ep.act : ep.obs;
    for (int j = 0; j < dims; ++j)
      out.data()[b * static_cast<size_t>(dims) + static_cast<size_t>(j)] =
          src[static_cast<size_t>(t) * dims + j];
  }
  return out;
}

Tensor gather_window_rows(const envs::EpisodeDataset& ds, const std::vector<envs::WindowPair>& ps,
                          int offset, bool actions, bool context) {
  const int dims = actions ? ds.act_dim : ds.obs_dim;
  Tensor out = Tensor::zeros({static_cast<int>(ps.size()), dims});
  for (size_t b = 0; b < ps.size(); ++b) {
    const envs::Episode& ep = ds.episodes[static_cast<size_t>(ps[b].episode)];
    const int t = (context ? ps[b].ctx_start : ps[b].tgt_start) + offset;
    const auto& src = actions ? ep.act : ep.obs;
    for (int j = 0; j < dims; ++j)
      out.data()[b * static_cast<size_t>(dims) + static_cast<size_t>(j)] =
          src[static_cast<size_t>(t) * dims + j];
  }
  return out;
}

}  // namespace

std::vector<Batch> make_batches(const envs::EpisodeDataset& ds, const ModelSpec& spec,
                                int batch_size, std::mt19937_64& rng) {
  std::vector<Batch> out;
  if (spec.kind == "hiprssm") {
    envs::WindowedDataset wds = envs::window_dataset(ds, spec.window_len);
    std::vector<envs::WindowPair> pairs = wds.pairs;
    std::shuffle(pairs.begin(), pairs.end(), rng);
    for (size_t at = 0; at < pairs.size(); at += static_cast<size_t>(batch_size)) {
      std::vector<envs::WindowPair> chunk(
          pairs.begin() + static_cast<ptrdiff_t>(at),
          pairs.begin() + static_cast<ptrdiff_t>(std::min(at + batch_size, pairs.size())));
      Batch b;
      b.batch = static_cast<int>(chunk.size());
      b.steps = spec.window_len;
      for (int t = 0; t < spec.window_len; ++t) {
        b.obs.push_back(gather_window_rows(ds, chunk, t, false, false));
        b.act.push_back(gather_window_rows(ds, chunk, t, true, false));
        // context tuple (o_t, a_t, o_{t+1}) from the preceding window
        Tensor o = gather_window_rows(ds, chunk, t, false, true);
        Tensor a = gather_window_rows(ds, chunk, t, true, true);
        Tensor on = t + 1 < spec.window_len
                        ? gather_window_rows(ds, chunk, t + 1, false, true)
                        : gather_window_rows(ds, chunk, 0, false, false);
        b.ctx.push_back(ad::concat({o, a, on}));
      }
      out.push_back(std::move(b));
    }
    return out;
  }
  std::vector<int> order(ds.episodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
    std::vector<int> chunk(order.begin() + static_cast<ptrdiff_t>(at),
                           order.begin() + static_cast<ptrdiff_t>(
                                               std::min(at + batch_size, order.size())));
    const int T = ds.episodes[static_cast<size_t>(chunk[0])].steps;
    Batch b;
    b.batch = static_cast<int>(chunk.size());
    b.steps = T;
    for (int t = 0; t < T; ++t) {
      b.obs.push_back(gather_rows(ds, chunk, t, false));
      b.act.push_back(gather_rows(ds, chunk, t, true));
    }
    out.push_back(std::move(b));
  }
  return out;
}

Targets make_targets(const Batch& batch, LossKind kind) {
  Targets out;
  for (int t = 0; t < batch.steps; ++t) {
    if (kind == LossKind::RmseDifferences) {
      out.value.push_back(t == 0 ? Tensor::zeros(batch.obs[0].shape())
                                 : ad::sub(batch.obs[static_cast<size_t>(t)],
                                           batch.obs[static_cast<size_t>(t - 1)]));
    } else {
      out.value.push_back(batch.obs[static_cast<size_t>(t)]);
    }
    out.valid.push_back(Tensor::full({batch.batch, 1}, t == 0 ? 0.0 : 1.0));
  }
  return out;
}

Tensor sequence_loss(LossKind kind, const cells::SequenceOutput& out, const Targets& targets,
                     int start, int len) {
  std::vector<Tensor> mean(out.pred_mean.begin(), out.pred_mean.begin() + len);
  std::vector<Tensor> var(out.pred_var.begin(), out.pred_var.begin() + len);
  std::vector<Tensor> tgt(targets.value.begin() + start, targets.value.begin() + start + len);
  std::vector<Tensor> valid(targets.valid.begin() + start, targets.valid.begin() + start + len);
  if (kind == LossKind::GaussianNll) return gaussian_nll(mean, var, tgt, valid);
  return rmse_differences(mean, tgt, valid);
}

Adam::Adam(nets::ParamStore& store, const OptimSpec& spec) : store_(store), spec_(spec) {
  for (const auto& [name, p] : store.all()) {
    m_[name].assign(static_cast<size_t>(p.size()), 0.0);
    v_[name].assign(static_cast<size_t>(p.size()), 0.0);
  }
}

double Adam::step(double clip_norm) {
  double sq_norm = 0.0;
  std::map<std::string, std::vector<double>> grads;
  for (auto& [name, p] : store_.all()) {
    grads[name] = p.grad();
    for (double g : grads[name]) sq_norm += g * g;
  }
  const double norm = std::sqrt(sq_norm);
  const double scale = norm > clip_norm ? clip_norm / norm : 1.0;
  last_scale_ = scale;
  t_ += 1;
  const double bc1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : store_.all()) {
    auto& m = m_[name];
    auto& v = v_[name];
    auto& g = grads[name];
    auto& data = p.data();
    for (size_t i = 0; i < data.size(); ++i) {
      const double gi = g[i] * scale;
      m[i] = spec_.beta1 * m[i] + (1.0 - spec_.beta1) * gi;
      v[i] = spec_.beta2 * v[i] + (1.0 - spec_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= spec_.lr * mhat / (std::sqrt(vhat) + spec_.eps);
    }
  }
  store_.apply_structural_masks();
  return norm;
}

void TrainTrace::write_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw ConfigError("TrainTrace: cannot open " + path);
  f << "epoch,train_loss,val_loss,grad_norm,best_checkpoint,last_checkpoint\n";
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const EpochStats& e : epochs)
    f << e.epoch << "," << fmt(e.train_loss) << "," << fmt(e.val_loss) << "," << fmt(e.grad_norm)
      << "," << best_checkpoint << "," << last_checkpoint << "\n";
}

namespace {

double run_validation(Model& model, const envs::EpisodeDataset& ds,
                      const std::vector<int>& episodes, const LossSpec& loss) {
  if (episodes.empty()) return std::nan("");
  envs::EpisodeDataset view;
  view.stats = ds.stats;
  view.dt = ds.dt;
  view.obs_dim = ds.obs_dim;
  view.act_dim = ds.act_dim;
  for (int e : episodes) view.episodes.push_back(ds.episodes[static_cast<size_t>(e)]);
  std::mt19937_64 rng(0);  // deterministic, order irrelevant for evaluation
  auto batches = make_batches(view, model.spec(), static_cast<int>(view.episodes.size()), rng);
  double acc = 0.0;
  int n = 0;
  for (const Batch& b : batches) {
    Masks masks = make_masks({0.0, 0.0, true}, b.batch, b.steps, model.mask_window_len(), rng);
    auto out = model.forward(b, masks);
    Targets targets = make_targets(b, loss.kind);
    acc += sequence_loss(loss.kind, out, targets, 0, b.steps).item();
    n += 1;
  }
  return acc / std::max(n, 1);
}

Masks slice_mask_rows(const Masks& masks, int batch) {
  Masks out;
  auto shrink = [batch](const Tensor& t) {
    return t.dim(0) == batch ? t : ad::slice(t, 0, 0, batch);
  };
  for (const Tensor& t : masks.step) out.step.push_back(shrink(t));
  for (const Tensor& t : masks.window) out.window.push_back(shrink(t));
  return out;
}

std::string rng_state_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
}

}  // namespace

TrainTrace train(Model& model, const envs::EpisodeDataset& dataset, const LossSpec& loss,
                 const MaskSpec& mask_spec, const OptimSpec& optim,
                 const TrainOptions& options) {
  TrainTrace trace;
  Adam adam(model.params(), optim);
  std::mt19937_64 rng(options.seed);

  // validation split fixed by the seed, independent of the training stream
  std::vector<int> order(dataset.episodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 split_rng(options.seed ^ 0x5eedULL);
  std::shuffle(order.begin(), order.end(), split_rng);
  const int n_val = static_cast<int>(options.val_fraction * static_cast<double>(order.size()));
  std::vector<int> val_eps(order.begin(), order.begin() + n_val);
  std::vector<int> train_eps(order.begin() + n_val, order.end());
  std::sort(val_eps.begin(), val_eps.end());
  std::sort(train_eps.begin(), train_eps.end());

  envs::EpisodeDataset train_view;
  train_view.stats = dataset.stats;
  train_view.dt = dataset.dt;
  train_view.obs_dim = dataset.obs_dim;
  train_view.act_dim = dataset.act_dim;
  for (int e : train_eps) train_view.episodes.push_back(dataset.episodes[static_cast<size_t>(e)]);

  int start_epoch = 0;
  trace.best_val = std::numeric_limits<double>::infinity();
  std::optional<Masks> fixed_masks;  // resample_per_batch = false

  if (!options.resume_from.empty()) {
    Checkpoint ckpt = load_checkpoint(options.resume_from);
    restore_params(model.params(), ckpt);
    for (auto& [name, mv] : adam.moment1())
      if (ckpt.entries.count("adam.m." + name)) mv = ckpt.entries.at("adam.m." + name).second;
    for (auto& [name, mv] : adam.moment2())
      if (ckpt.entries.count("adam.v." + name)) mv = ckpt.entries.at("adam.v." + name).second;
    if (ckpt.meta.count("adam_t")) adam.set_step_count(std::stoll(ckpt.meta.at("adam_t")));
    if (ckpt.meta.count("epoch")) start_epoch = std::stoi(ckpt.meta.at("epoch"));
    if (ckpt.meta.count("rng")) rng_from_string(rng, ckpt.meta.at("rng"));
    if (ckpt.meta.count("best_val")) trace.best_val = std::stod(ckpt.meta.at("best_val"));
    if (ckpt.meta.count("best_epoch")) trace.best_epoch = std::stoi(ckpt.meta.at("best_epoch"));
  }

  const bool writing = !options.out_dir.empty();
  if (writing) std::filesystem::create_directories(options.out_dir);
  const std::string best_path = options.out_dir + "/best.ckpt";
  const std::string last_path = options.out_dir + "/last.ckpt";

  auto save_state = [&](const std::string& path, int epoch) {
    Checkpoint ckpt = checkpoint_of(model.params());
    for (auto& [name, mv] : adam.moment1())
      ckpt.entries["adam.m." + name] = {{static_cast<int>(mv.size())}, mv};
    for (auto& [name, mv] : adam.moment2())
      ckpt.entries["adam.v." + name] = {{static_cast<int>(mv.size())}, mv};
    ckpt.meta["adam_t"] = std::to_string(adam.step_count());
    ckpt.meta["epoch"] = std::to_string(epoch);
    ckpt.meta["rng"] = rng_state_string(rng);
    ckpt.meta["model_kind"] = model.spec().kind;
    {
      std::ostringstream os;
      os << trace.best_val;
      ckpt.meta["best_val"] = os.str();
    }
    ckpt.meta["best_epoch"] = std::to_string(trace.best_epoch);
    save_checkpoint(path, ckpt);
  };

  for (int epoch = start_epoch; epoch < options.epochs; ++epoch) {
    auto batches = make_batches(train_view, model.spec(), options.batch_size, rng);
    double epoch_loss = 0.0;
    double epoch_norm = 0.0;
    int n_steps = 0;
    for (Batch& batch : batches) {
      Masks masks;
      if (mask_spec.resample_per_batch || !fixed_masks.has_value()) {
        masks = make_masks(mask_spec, batch.batch, batch.steps, model.mask_window_len(), rng);
        if (!mask_spec.resample_per_batch) fixed_masks = masks;
      } else {
        masks = slice_mask_rows(*fixed_masks, batch.batch);
      }
      Targets targets = make_targets(batch, loss.kind);

      int tbptt = options.tbptt_len > 0 ? options.tbptt_len : (batch.steps <= 600 ? batch.steps : 600);
      const int H = model.mask_window_len();
      tbptt = std::max(H, (tbptt / H) * H);  // chunk boundaries align with windows

      Carry carry;
      for (int start = 0; start < batch.steps; start += tbptt) {
        const int len = std::min(tbptt, batch.steps - start);
        Batch chunk;
        chunk.batch = batch.batch;
        chunk.steps = len;
        chunk.obs.assign(batch.obs.begin() + start, batch.obs.begin() + start + len);
        chunk.act.assign(batch.act.begin() + start, batch.act.begin() + start + len);
        chunk.ctx = batch.ctx;
        Masks chunk_masks;
        chunk_masks.step.assign(masks.step.begin() + start, masks.step.begin() + start + len);
        const int w0 = start / H;
        const int w1 = (start + len + H - 1) / H;
        if (!masks.window.empty())
          chunk_masks.window.assign(masks.window.begin() + w0, masks.window.begin() + w1);

        ad::Tape tape;
        auto out = model.forward(chunk, chunk_masks, &carry);
        Tensor batch_loss = sequence_loss(loss.kind, out, targets, start, len);
        const double lv = batch_loss.item();
        if (!std::isfinite(lv)) {
          trace.diverged = true;
          if (writing) {
            save_state(last_path, epoch);
            trace.last_checkpoint = last_path;
            trace.write_csv(options.out_dir + "/trace.csv");
          }
          return trace;
        }
        tape.backward(batch_loss);
        epoch_norm += adam.step(loss.clip_norm);
        epoch_loss += lv;
        n_steps += 1;

        // carried beliefs are cut from the next chunk's tape
        carry.fast = cells::FactorizedBelief{
            ad::stop_gradient(out.final_prior.mean_u), ad::stop_gradient(out.final_prior.mean_l),
            ad::stop_gradient(out.final_prior.var_u), ad::stop_gradient(out.final_prior.var_l),
            ad::stop_gradient(out.final_prior.cov_s)};
        if (model.spec().kind == "mts3")
          carry.task = cells::FactorizedBelief{
              ad::stop_gradient(out.final_task.mean_u), ad::stop_gradient(out.final_task.mean_l),
              ad::stop_gradient(out.final_task.var_u), ad::stop_gradient(out.final_task.var_l),
              ad::stop_gradient(out.final_task.cov_s)};
      }
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / std::max(n_steps, 1);
    stats.grad_norm = epoch_norm / std::max(n_steps, 1);
    const double val = run_validation(model, dataset, val_eps, loss);
    stats.val_loss = std::isnan(val) ? stats.train_loss : val;
    trace.epochs.push_back(stats);

    if (stats.val_loss < trace.best_val) {
      trace.best_val = stats.val_loss;
      trace.best_epoch = epoch;
      if (writing) {
        Checkpoint best = checkpoint_of(model.params(),
                                        {{"model_kind", model.spec().kind},
                                         {"epoch", std::to_string(epoch)}});
        save_checkpoint(best_path, best);
        trace.best_checkpoint = best_path;
      }
    }
    if (writing) {
      save_state(last_path, epoch + 1);
      trace.last_checkpoint = last_path;
    }
  }
  if (writing) {
    if (trace.best_checkpoint.empty()) {
      Checkpoint best = checkpoint_of(model.params(), {{"model_kind", model.spec().kind}});
      save_checkpoint(best_path, best);
      trace.best_checkpoint = best_path;
    }
    trace.write_csv(options.out_dir + "/trace.csv");
  }
  return trace;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("save_checkpoint: cannot open " + path);
  f << "rssm-ckpt v1\n";
  for (const auto& [key, value] : ckpt.meta) f << "meta " << key << " " << value << "\n";
  for (const auto& [name, entry] : ckpt.entries) {
    f << "tensor " << name << " " << entry.first.size();
    for (int d : entry.first) f << " " << d;
    f << " f64\n";
  }
  f << "payload\n";
  for (const auto& [name, entry] : ckpt.entries)
    f.write(reinterpret_cast<const char*>(entry.second.data()),
            static_cast<std::streamsize>(entry.second.size() * sizeof(double)));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("load_checkpoint: cannot open " + path);
  std::string line;
  std::getline(f, line);
  if (line != "rssm-ckpt v1") throw CheckpointMismatch("bad checkpoint header: " + path);
  Checkpoint ckpt;
  std::vector<std::string> names;
  while (std::getline(f, line)) {
    if (line == "payload") break;
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (tag == "meta") {
      std::string key;
      is >> key;
      std::string value;
      std::getline(is, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      ckpt.meta[key] = value;
    } else if (tag == "tensor") {
      std::string name, dtype;
      size_t rank;
      is >> name >> rank;
      ad::Shape shape(rank);
      int64_t n = 1;
      for (size_t i = 0; i < rank; ++i) {
        is >> shape[i];
        n *= shape[i];
      }
      is >> dtype;
      if (dtype != "f64") throw CheckpointMismatch("unsupported dtype: " + dtype);
      ckpt.entries[name] = {shape, std::vector<double>(static_cast<size_t>(n), 0.0)};
      names.push_back(name);
    }
  }
  for (const std::string& name : names) {
    auto& data = ckpt.entries[name].second;
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!f) throw CheckpointMismatch("truncated checkpoint payload: " + path);
  }
  return ckpt;
}

Checkpoint checkpoint_of(const nets::ParamStore& store,
                         const std::map<std::string, std::string>& meta) {
  Checkpoint ckpt;
  ckpt.meta = meta;
  for (const auto& [name, p] : store.all()) ckpt.entries[name] = {p.shape(), p.data()};
  return ckpt;
}

void restore_params(nets::ParamStore& store, const Checkpoint& ckpt) {
  for (auto& [name, p] : store.all()) {
    auto it = ckpt.entries.find(name);
    if (it == ckpt.entries.end())
      throw CheckpointMismatch("checkpoint is missing parameter " + name);
    if (it->second.first != p.shape())
      throw CheckpointMismatch("checkpoint shape mismatch for " + name);
    p.data() = it->second.second;
  }
}

}  // namespace rssm::train
