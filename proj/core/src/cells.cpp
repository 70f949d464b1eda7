#include "rssm/cells.hpp"

#include <cmath>

namespace rssm::cells {

namespace {

using gauss::Triple;

Tensor zeros_like_rows(int batch, int d) {
  return batch > 0 ? Tensor::zeros({batch, d}) : Tensor::zeros({d});
}

Tensor full_like_rows(int batch, int d, double v) {
  return batch > 0 ? Tensor::full({batch, d}, v) : Tensor::full({d}, v);
}

FactorizedBelief detach_belief(const FactorizedBelief& b) {
  return FactorizedBelief{ad::stop_gradient(b.mean_u), ad::stop_gradient(b.mean_l),
                          ad::stop_gradient(b.var_u), ad::stop_gradient(b.var_l),
                          ad::stop_gradient(b.cov_s)};
}

}  // namespace

FactorizedBelief initial_belief(int d, int batch, double var) {
  FactorizedBelief b;
  b.mean_u = zeros_like_rows(batch, d);
  b.mean_l = zeros_like_rows(batch, d);
  b.var_u = full_like_rows(batch, d, var);
  b.var_l = full_like_rows(batch, d, var);
  b.cov_s = zeros_like_rows(batch, d);
  return b;
}

FactorizedBelief identity_belief(int d, int batch) { return initial_belief(d, batch, 1.0); }

Tensor expand_rows(const Tensor& rows, int n) {
  if (rows.rank() != 2 || rows.dim(1) != 1) throw ShapeMismatch("expand_rows: expected [B,1]");
  const int B = rows.dim(0);
  Tensor out = Tensor::zeros({B, n});
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < n; ++j) out.data()[static_cast<size_t>(b) * n + j] = rows.data()[b];
  return out;
}

FastCore::FastCore(nets::ParamStore& store, const std::string& prefix, int obs_dim_in, int d_in,
                   const nets::BandedTransitionSpec& trans, const std::vector<int>& enc_hidden,
                   const std::vector<int>& dec_hidden, double noise_init, std::mt19937_64& rng)
    : obs_dim(obs_dim_in), d(d_in) {
  encoder = nets::GaussianHead(store, prefix + ".enc", obs_dim, enc_hidden, d, rng);
  transition = nets::BandedTransition(store, prefix + ".trans", d, trans, rng);
  // elu(x)+1 == exp(x) for x <= 0, so raw = log(q0) starts the noise at q0
  trans_noise_raw = store.create(prefix + ".noise", Tensor::full({2 * d}, std::log(noise_init)));
  decoder = nets::BeliefDecoder(store, prefix + ".dec", d, obs_dim, dec_hidden, rng);
}

Tensor FastCore::noise_u() const {
  return ad::elu_plus_one(ad::slice(trans_noise_raw, 0, 0, d));
}

Tensor FastCore::noise_l() const {
  return ad::elu_plus_one(ad::slice(trans_noise_raw, 0, d, d));
}

FactorizedBelief FastCore::predict(const FactorizedBelief& post,
                                   const std::optional<Tensor>& control,
                                   const std::vector<Triple>& extra_cov) const {
  Tensor z = ad::concat({post.mean_u, post.mean_l});
  Tensor a = transition.matrices(z);
  return gauss::factorized_predict(post, a, control, extra_cov, noise_u(), noise_l());
}

FactorizedBelief masked_update(const FactorizedBelief& prior, const nets::GaussianHead& encoder,
                               const Tensor& obs_raw, const Tensor& observed_rows) {
  const int bdim = obs_raw.dim(obs_raw.rank() - 1);
  Tensor obs_mask = expand_rows(observed_rows, bdim);
  Tensor obs_safe = ad::where(obs_mask, obs_raw, Tensor::zeros(obs_raw.shape()));
  LatentObservation w = encoder.encode(obs_safe);
  auto [updated, trace] = gauss::factorized_kalman_update(prior, w);
  const int d = w.value.dim(w.value.rank() - 1);
  Tensor m = expand_rows(observed_rows, d);
  FactorizedBelief out;
  out.mean_u = ad::where(m, updated.mean_u, prior.mean_u);
  out.mean_l = ad::where(m, updated.mean_l, prior.mean_l);
  out.var_u = ad::where(m, updated.var_u, prior.var_u);
  out.var_l = ad::where(m, updated.var_l, prior.var_l);
  out.cov_s = ad::where(m, updated.cov_s, prior.cov_s);
  return out;
}

RknCell::RknCell(nets::ParamStore& store, const std::string& prefix, const RknSpec& spec,
                 std::mt19937_64& rng)
    : core_(store, prefix, spec.obs_dim, spec.lod, spec.transition, spec.enc_hidden,
            spec.dec_hidden, spec.trans_noise_init, rng) {}

StepResult RknCell::step(const CellState& s, const std::optional<Tensor>& obs) const {
  StepResult r;
  if (obs.has_value()) {
    LatentObservation w = core_.encoder.encode(*obs);
    auto [post, trace] = gauss::factorized_kalman_update(s.belief, w);
    r.posterior = post;
    r.trace = trace;
    r.updated = true;
  } else {
    r.posterior = s.belief;  // omitted update: posterior = prior, exactly
  }
  r.next_prior = core_.predict(r.posterior, std::nullopt, {});
  return r;
}

AcrknCell::AcrknCell(nets::ParamStore& store, const std::string& prefix, const AcrknSpec& spec,
                     std::mt19937_64& rng)
    : RknCell(store, prefix, spec, rng) {
  control_ = nets::ControlModel(store, prefix + ".ctrl", spec.act_dim, 2 * spec.lod, spec.control,
                                rng);
}

StepResult AcrknCell::step(const CellState& s, const Tensor& action,
                           const std::optional<Tensor>& obs) const {
  StepResult r;
  if (obs.has_value()) {
    LatentObservation w = core_.encoder.encode(*obs);
    auto [post, trace] = gauss::factorized_kalman_update(s.belief, w);
    r.posterior = post;
    r.trace = trace;
    r.updated = true;
  } else {
    r.posterior = s.belief;
  }
  Tensor z = ad::concat({r.posterior.mean_u, r.posterior.mean_l});
  Tensor b = control_.mean(action, z);
  r.next_prior = core_.predict(r.posterior, b, {});
  return r;
}

HiprssmCell::HiprssmCell(nets::ParamStore& store, const std::string& prefix,
                         const HiprssmSpec& spec, std::mt19937_64& rng)
    : AcrknCell(store, prefix, spec, rng), task_dim_(spec.task_dim) {
  const int tuple_dim = 2 * spec.obs_dim + spec.act_dim;
  ctx_encoder_ = nets::GaussianHead(store, prefix + ".ctx", tuple_dim, spec.ctx_hidden,
                                    spec.task_dim, rng);
  task_ = nets::TaskTransform(store, prefix + ".task", spec.task_dim, spec.lod, spec.task, rng);
}

DiagGaussian HiprssmCell::infer_task(const ContextSet& ctx,
                                     const std::vector<Tensor>* weights) const {
  DiagGaussian prior{Tensor::zeros({task_dim_}), Tensor::full({task_dim_}, 1.0)};
  std::vector<LatentObservation> enc;
  enc.reserve(ctx.tuples.size());
  for (const Tensor& tuple : ctx.tuples) enc.push_back(ctx_encoder_.encode(tuple));
  return gauss::bayesian_aggregate(prior, enc, weights);
}

StepResult HiprssmCell::step(const CellState& s, const Tensor& action, const DiagGaussian& task,
                             const std::optional<Tensor>& obs) const {
  StepResult r;
  if (obs.has_value()) {
    LatentObservation w = core_.encoder.encode(*obs);
    auto [post, trace] = gauss::factorized_kalman_update(s.belief, w);
    r.posterior = post;
    r.trace = trace;
    r.updated = true;
  } else {
    r.posterior = s.belief;
  }
  Tensor z = ad::concat({r.posterior.mean_u, r.posterior.mean_l});
  nets::TaskContribution tc = task_.apply(task, z);
  Tensor b = control_.mean(action, z) + tc.mean;
  r.next_prior = core_.predict(r.posterior, b, {tc.cov});
  return r;
}

Mts3Cell::Mts3Cell(nets::ParamStore& store, const std::string& prefix, const Mts3Spec& spec,
                   std::mt19937_64& rng)
    : spec_(spec),
      fast_(store, prefix + ".fast", spec.obs_dim, spec.lod, spec.fast_transition, spec.enc_hidden,
            spec.dec_hidden, spec.trans_noise_init, rng) {
  const int dl = spec.task_half;
  ctrl_ = nets::ControlModel(store, prefix + ".fast.ctrl", spec.act_dim, 2 * spec.lod,
                             spec.control, rng);
  c_ = store.create(prefix + ".fast.C", nets::uniform_init({2 * spec.lod, 2 * dl}, 2 * dl, rng));
  // near-identity start, like the fast basis: eigenvalues above one would
  // compound the task covariance geometrically across open-loop windows
  {
    std::uniform_real_distribution<double> noise(-0.05, 0.05);
    Tensor xinit = Tensor::zeros({2 * dl, 2 * dl});
    for (int i = 0; i < 2 * dl; ++i)
      for (int j = 0; j < 2 * dl; ++j)
        xinit.data()[static_cast<size_t>(i) * 2 * dl + j] = (i == j ? 1.0 : 0.0) + noise(rng);
    x_ = store.create(prefix + ".sts.X", xinit);
  }
  y_ = store.create(prefix + ".sts.Y", nets::uniform_init({2 * dl, 2 * dl}, 2 * dl, rng));
  s_raw_ = store.create(prefix + ".sts.S", Tensor::full({2 * dl}, std::log(spec.task_noise_init)));
  beta_enc_ = nets::GaussianHead(store, prefix + ".sts.beta",
                                 spec.obs_dim + nets::TimeEncoding::kFeatures,
                                 spec.set_enc_hidden, dl, rng);
  alpha_enc_ = nets::GaussianHead(store, prefix + ".sts.alpha",
                                  spec.act_dim + nets::TimeEncoding::kFeatures,
                                  spec.set_enc_hidden, 2 * dl, rng);
  tenc_ = nets::TimeEncoding{spec.window_len};
}

Tensor Mts3Cell::task_noise_u() const {
  return ad::elu_plus_one(ad::slice(s_raw_, 0, 0, spec_.task_half));
}

Tensor Mts3Cell::task_noise_l() const {
  return ad::elu_plus_one(ad::slice(s_raw_, 0, spec_.task_half, spec_.task_half));
}

LatentObservation Mts3Cell::encode_abstract_action(const Tensor& action, int t_in_window) const {
  Tensor time = action.rank() == 2 ? tenc_.features_rows(t_in_window, action.dim(0))
                                   : tenc_.features(t_in_window);
  return alpha_enc_.encode(ad::concat({action, time}));
}

DiagGaussian Mts3Cell::abstract_action(const std::vector<Tensor>& actions,
                                       const std::vector<int>& times) const {
  const int dl2 = 2 * spec_.task_half;
  DiagGaussian prior{Tensor::zeros({dl2}), Tensor::full({dl2}, 1.0)};
  std::vector<LatentObservation> enc;
  enc.reserve(actions.size());
  for (size_t t = 0; t < actions.size(); ++t) {
    const int when = times.empty() ? static_cast<int>(t) : times[t];
    enc.push_back(encode_abstract_action(actions[t], when));
  }
  return gauss::bayesian_aggregate(prior, enc);
}

FactorizedBelief Mts3Cell::task_predict(const FactorizedBelief& prev_posterior,
                                        const DiagGaussian& alpha) const {
  const int dl = spec_.task_half;
  const int last = alpha.var.rank() - 1;
  Triple alpha_cov{ad::slice(alpha.var, last, 0, dl), ad::slice(alpha.var, last, dl, dl),
                   Tensor()};
  alpha_cov.s = Tensor::zeros(alpha_cov.u.shape());
  Tensor control = gauss::apply_blocked(y_, alpha.mean);
  return gauss::factorized_predict(prev_posterior, x_, control,
                                   {gauss::propagate_triple(y_, alpha_cov)}, task_noise_u(),
                                   task_noise_l());
}

FactorizedBelief Mts3Cell::task_update(const FactorizedBelief& task_prior,
                                       const std::vector<LatentObservation>& betas,
                                       const std::vector<Tensor>* weights) const {
  return gauss::gaussian_condition_set(task_prior, betas, weights);
}

LatentObservation Mts3Cell::encode_abstract_obs(const Tensor& obs, int t_in_window) const {
  Tensor time = obs.rank() == 2 ? tenc_.features_rows(t_in_window, obs.dim(0))
                                : tenc_.features(t_in_window);
  return beta_enc_.encode(ad::concat({obs, time}));
}

Tensor Mts3Cell::task_mean_term(const FactorizedBelief& task_prior) const {
  return gauss::apply_blocked(c_, ad::concat({task_prior.mean_u, task_prior.mean_l}));
}

gauss::Triple Mts3Cell::task_cov_triple(const FactorizedBelief& task_prior) const {
  return gauss::propagate_triple(c_, task_prior.cov());
}

StepResult Mts3Cell::fast_step(const CellState& s, const Tensor& action,
                               const FactorizedBelief& task_prior,
                               const std::optional<Tensor>& obs) const {
  StepResult r;
  if (obs.has_value()) {
    LatentObservation w = fast_.encoder.encode(*obs);
    auto [post, trace] = gauss::factorized_kalman_update(s.belief, w);
    r.posterior = post;
    r.trace = trace;
    r.updated = true;
  } else {
    r.posterior = s.belief;
  }
  Tensor z = ad::concat({r.posterior.mean_u, r.posterior.mean_l});
  Tensor b = ctrl_.mean(action, z) + task_mean_term(task_prior);
  r.next_prior = fast_.predict(r.posterior, b, {task_cov_triple(task_prior)});
  return r;
}

namespace {

int batch_of(const Tensor& t) { return t.rank() == 2 ? t.dim(0) : 0; }

Tensor ones_rows(int batch) { return Tensor::full({batch > 0 ? batch : 1, 1}, 1.0); }

FactorizedBelief start_state(const SequenceInput& in, int d, int batch) {
  return in.initial.has_value() ? *in.initial : initial_belief(d, batch);
}


Tensor combine_masks(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::zeros(a.shape());
  for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

FactorizedBelief expand_belief(const FactorizedBelief& b, int batch) {
  if (batch == 0) return b;
  auto expand = [batch](const Tensor& t) {
    return ad::add(Tensor::zeros({batch, t.dim(0)}), t);
  };
  return FactorizedBelief{expand(b.mean_u), expand(b.mean_l), expand(b.var_u), expand(b.var_l),
                          expand(b.cov_s)};
}

}  // namespace

SequenceOutput rkn_sequence(const RknCell& cell, const SequenceInput& in) {
  const int T = static_cast<int>(in.obs.size());
  const int B = std::max(1, batch_of(in.obs[0]));
  SequenceOutput out;
  FactorizedBelief state = start_state(in, cell.d(), B);
  for (int t = 0; t < T; ++t) {
    auto [mean, var] = cell.core().decoder.decode(state);
    out.pred_mean.push_back(mean);
    out.pred_var.push_back(var);
    out.priors.push_back(state);
    Tensor mask = in.step_mask.empty() ? ones_rows(B) : in.step_mask[static_cast<size_t>(t)];
    FactorizedBelief post = masked_update(state, cell.core().encoder,
                                          in.obs[static_cast<size_t>(t)], mask);
    state = cell.core().predict(post, std::nullopt, {});
  }
  out.final_prior = state;
  return out;
}

SequenceOutput acrkn_sequence(const AcrknCell& cell, const SequenceInput& in) {
  const int T = static_cast<int>(in.obs.size());
  const int B = std::max(1, batch_of(in.obs[0]));
  SequenceOutput out;
  FactorizedBelief state = start_state(in, cell.d(), B);
  for (int t = 0; t < T; ++t) {
    auto [mean, var] = cell.core().decoder.decode(state);
    out.pred_mean.push_back(mean);
    out.pred_var.push_back(var);
    out.priors.push_back(state);
    Tensor mask = in.step_mask.empty() ? ones_rows(B) : in.step_mask[static_cast<size_t>(t)];
    FactorizedBelief post = masked_update(state, cell.core().encoder,
                                          in.obs[static_cast<size_t>(t)], mask);
    Tensor z = ad::concat({post.mean_u, post.mean_l});
    Tensor b = cell.control().mean(in.act[static_cast<size_t>(t)], z);
    state = cell.core().predict(post, b, {});
  }
  out.final_prior = state;
  return out;
}

SequenceOutput hiprssm_sequence(const HiprssmCell& cell, const SequenceInput& in,
                                const DiagGaussian& task) {
  const int T = static_cast<int>(in.obs.size());
  const int B = std::max(1, batch_of(in.obs[0]));
  SequenceOutput out;
  FactorizedBelief state = start_state(in, cell.d(), B);
  for (int t = 0; t < T; ++t) {
    auto [mean, var] = cell.core().decoder.decode(state);
    out.pred_mean.push_back(mean);
    out.pred_var.push_back(var);
    out.priors.push_back(state);
    Tensor mask = in.step_mask.empty() ? ones_rows(B) : in.step_mask[static_cast<size_t>(t)];
    FactorizedBelief post = masked_update(state, cell.core().encoder,
                                          in.obs[static_cast<size_t>(t)], mask);
    Tensor z = ad::concat({post.mean_u, post.mean_l});
    nets::TaskContribution tc = cell.task_transform().apply(task, z);
    Tensor b = cell.control().mean(in.act[static_cast<size_t>(t)], z) + tc.mean;
    state = cell.core().predict(post, b, {tc.cov});
  }
  out.final_prior = state;
  return out;
}

SequenceOutput mts3_sequence(const Mts3Cell& cell, const SequenceInput& in,
                             const std::vector<Tensor>& window_mask, bool cut_fast) {
  const int T = static_cast<int>(in.obs.size());
  const int B = std::max(1, batch_of(in.obs[0]));
  const int H = cell.spec().window_len;
  const int d = cell.spec().lod;
  const int dl = cell.spec().task_half;
  const int windows = (T + H - 1) / H;
  SequenceOutput out;
  FactorizedBelief state = start_state(in, d, B);
  FactorizedBelief task_post = in.initial_task.has_value()
                                   ? *in.initial_task
                                   : expand_belief(identity_belief(dl, 0), B);
  for (int k = 0; k < windows; ++k) {
    const int t0 = k * H;
    const int t1 = std::min(T, t0 + H);
    std::vector<Tensor> win_actions(in.act.begin() + t0, in.act.begin() + t1);
    DiagGaussian alpha = cell.abstract_action(win_actions);
    FactorizedBelief task_prior = cell.task_predict(task_post, alpha);
    out.task_priors.push_back(task_prior);

    Tensor wmask = window_mask.empty() ? ones_rows(B) : window_mask[static_cast<size_t>(k)];
    std::vector<LatentObservation> betas;
    std::vector<Tensor> beta_weights;
    for (int t = t0; t < t1; ++t) {
      auto [mean, var] = cell.fast_core().decoder.decode(state);
      out.pred_mean.push_back(mean);
      out.pred_var.push_back(var);
      out.priors.push_back(state);
      Tensor smask = in.step_mask.empty() ? ones_rows(B) : in.step_mask[static_cast<size_t>(t)];
      Tensor mask = combine_masks(smask, wmask);
      FactorizedBelief post = masked_update(state, cell.fast_core().encoder,
                                            in.obs[static_cast<size_t>(t)], mask);
      Tensor z = ad::concat({post.mean_u, post.mean_l});
      Tensor b = cell.control().mean(in.act[static_cast<size_t>(t)], z) +
                 cell.task_mean_term(task_prior);
      state = cell.fast_core().predict(post, b, {cell.task_cov_triple(task_prior)});

      Tensor obs_mask = expand_rows(mask, cell.spec().obs_dim);
      Tensor obs_safe = ad::where(obs_mask, in.obs[static_cast<size_t>(t)],
                                  Tensor::zeros(in.obs[static_cast<size_t>(t)].shape()));
      betas.push_back(cell.encode_abstract_obs(obs_safe, t - t0));
      beta_weights.push_back(expand_rows(mask, dl));
    }
    task_post = cell.task_update(task_prior, betas, &beta_weights);
    // gradient cut for the fast scale at the window boundary; the slow scale
    // still carries gradients across windows
    if (cut_fast) state = detach_belief(state);
  }
  out.final_prior = state;
  out.final_task = task_post;
  return out;
}

ContextSet make_context(const std::vector<Tensor>& obs, const std::vector<Tensor>& act, int start,
                        int len) {
  if (start < 0 || start + len >= static_cast<int>(obs.size()))
    throw TooShort("make_context: window exceeds sequence");
  ContextSet ctx;
  for (int i = start; i < start + len; ++i)
    ctx.tuples.push_back(ad::concat({obs[static_cast<size_t>(i)], act[static_cast<size_t>(i)],
                                     obs[static_cast<size_t>(i + 1)]}));
  return ctx;
}

}  // namespace rssm::cells
