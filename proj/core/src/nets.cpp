#include "rssm/nets.hpp"

#include <cmath>

namespace rssm::nets {

namespace {
constexpr double kPi = 3.14159265358979323846;

Tensor as_rows(const Tensor& x) {
  return x.rank() == 1 ? ad::reshape(x, {1, x.dim(0)}) : x;
}

Tensor like_input(const Tensor& y, const Tensor& x_orig) {
  return x_orig.rank() == 1 ? ad::reshape(y, {y.dim(1)}) : y;
}
}  // namespace

Tensor ParamStore::create(const std::string& name, const ad::Shape& shape) {
  return create(name, Tensor::zeros(shape));
}

Tensor ParamStore::create(const std::string& name, Tensor init) {
  if (params_.count(name) > 0) throw ConfigError("duplicate parameter name: " + name);
  init.set_requires_grad(true);
  params_.emplace(name, init);
  return init;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

void ParamStore::set_structural_mask(const std::string& name, Tensor mask) {
  if (params_.count(name) == 0) throw ConfigError("mask for unknown parameter: " + name);
  masks_.emplace(name, std::move(mask));
}

void ParamStore::apply_structural_masks() {
  for (auto& [name, mask] : masks_) {
    auto& data = params_.at(name).data();
    const auto& m = mask.data();
    for (size_t i = 0; i < data.size(); ++i) data[i] *= m[i];
  }
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& [name, p] : params_) n += p.size();
  return n;
}

Tensor uniform_init(const ad::Shape& shape, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Mlp::Mlp(ParamStore& store, const std::string& prefix, int in_dim, const MlpSpec& spec,
         int out_dim, std::mt19937_64& rng)
    : out_act_(spec.output_activation), out_dim_(out_dim) {
  int cur = in_dim;
  for (size_t i = 0; i < spec.layer_widths.size(); ++i) {
    const int w = spec.layer_widths[i];
    if (w < 1) throw ConfigError("Mlp: layer width must be >= 1");
    const std::string tag = prefix + ".w" + std::to_string(i);
    weights_.push_back(store.create(tag, uniform_init({w, cur}, cur, rng)));
    biases_.push_back(store.create(prefix + ".b" + std::to_string(i), uniform_init({w}, cur, rng)));
    cur = w;
  }
  weights_.push_back(store.create(prefix + ".w_out", uniform_init({out_dim, cur}, cur, rng)));
  biases_.push_back(store.create(prefix + ".b_out", uniform_init({out_dim}, cur, rng)));
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = as_rows(x);
  for (size_t i = 0; i + 1 < weights_.size(); ++i)
    h = ad::relu(ad::matmul(h, weights_[i], false, true) + biases_[i]);
  Tensor y = ad::matmul(h, weights_.back(), false, true) + biases_.back();
  switch (out_act_) {
    case OutputActivation::Linear:
      break;
    case OutputActivation::EluPlusOne:
      y = ad::elu_plus_one(y);
      break;
    case OutputActivation::Softmax:
      y = ad::softmax(y);
      break;
  }
  return like_input(y, x);
}

GaussianHead::GaussianHead(ParamStore& store, const std::string& prefix, int in_dim,
                           const std::vector<int>& hidden, int out_dim, std::mt19937_64& rng)
    : out_dim_(out_dim) {
  int cur = in_dim;
  for (size_t i = 0; i < hidden.size(); ++i) {
    trunk_w_.push_back(
        store.create(prefix + ".w" + std::to_string(i), uniform_init({hidden[i], cur}, cur, rng)));
    trunk_b_.push_back(
        store.create(prefix + ".b" + std::to_string(i), uniform_init({hidden[i]}, cur, rng)));
    cur = hidden[i];
  }
  mean_w_ = store.create(prefix + ".mean.w", uniform_init({out_dim, cur}, cur, rng));
  mean_b_ = store.create(prefix + ".mean.b", uniform_init({out_dim}, cur, rng));
  var_w_ = store.create(prefix + ".var.w", uniform_init({out_dim, cur}, cur, rng));
  var_b_ = store.create(prefix + ".var.b", uniform_init({out_dim}, cur, rng));
}

std::pair<Tensor, Tensor> GaussianHead::forward(const Tensor& x) const {
  Tensor h = as_rows(x);
  for (size_t i = 0; i < trunk_w_.size(); ++i)
    h = ad::relu(ad::matmul(h, trunk_w_[i], false, true) + trunk_b_[i]);
  Tensor mean = ad::matmul(h, mean_w_, false, true) + mean_b_;
  // floored so float64 underflow of elu+1 can never emit an exact zero
  Tensor var = ad::clamp_min(ad::elu_plus_one(ad::matmul(h, var_w_, false, true) + var_b_), 1e-8);
  return {like_input(mean, x), like_input(var, x)};
}

gauss::LatentObservation GaussianHead::encode(const Tensor& x) const {
  auto [mean, var] = forward(x);
  return gauss::LatentObservation{mean, var};
}

Tensor banded_block_mask(int d, int bandwidth) {
  Tensor mask = Tensor::zeros({2 * d, 2 * d});
  for (int bi = 0; bi < 2; ++bi)
    for (int bj = 0; bj < 2; ++bj)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          if (std::abs(i - j) <= bandwidth)
            mask.data()[static_cast<size_t>(bi * d + i) * 2 * d + (bj * d + j)] = 1.0;
  return mask;
}

BandedTransition::BandedTransition(ParamStore& store, const std::string& prefix, int d,
                                   const BandedTransitionSpec& spec, std::mt19937_64& rng)
    : spec_(spec), half_dim_(d) {
  const int ld = 2 * d;
  const int K = spec.basis_count;
  Tensor block_mask = banded_block_mask(d, spec.bandwidth);
  Tensor mask = Tensor::zeros({K, ld, ld});
  Tensor init = Tensor::zeros({K, ld, ld});
  std::uniform_real_distribution<double> noise(-0.05, 0.05);
  for (int k = 0; k < K; ++k)
    for (int i = 0; i < ld; ++i)
      for (int j = 0; j < ld; ++j) {
        const size_t idx = (static_cast<size_t>(k) * ld + i) * ld + j;
        const double m = block_mask.data()[static_cast<size_t>(i) * ld + j];
        mask.data()[idx] = m;
        // near-identity start keeps early unrolls stable
        init.data()[idx] = m * ((i == j ? 1.0 : 0.0) + noise(rng));
      }
  basis_ = store.create(prefix + ".basis", init);
  store.set_structural_mask(prefix + ".basis", mask);
  band_mask_ = mask;
  if (K > 1) {
    coeff_w_ = store.create(prefix + ".coeff.w", uniform_init({K, ld}, ld, rng));
    coeff_b_ = store.create(prefix + ".coeff.b", uniform_init({K}, ld, rng));
  }
}

Tensor BandedTransition::coefficients(const Tensor& z_post_mean) const {
  Tensor z = as_rows(z_post_mean);
  if (spec_.basis_count == 1) return Tensor::full({z.dim(0), 1}, 1.0);
  return ad::softmax(ad::matmul(z, coeff_w_, false, true) + coeff_b_);
}

Tensor BandedTransition::matrices(const Tensor& z_post_mean) const {
  Tensor masked = basis_ * band_mask_;
  const int ld = latent_dim();
  if (spec_.basis_count == 1 && z_post_mean.rank() == 1)
    return ad::reshape(ad::slice(masked, 0, 0, 1), {ld, ld});
  if (spec_.basis_count == 1) {
    // shared matrix; callers treat rank-2 as broadcast over the batch
    return ad::reshape(ad::slice(masked, 0, 0, 1), {ld, ld});
  }
  return ad::mix_matrices(coefficients(z_post_mean), masked);
}

ControlModel::ControlModel(ParamStore& store, const std::string& prefix, int action_dim,
                           int latent_dim, const ControlSpec& spec, std::mt19937_64& rng)
    : spec_(spec), latent_dim_(latent_dim) {
  switch (spec.kind) {
    case ControlKind::Linear:
      b_ = store.create(prefix + ".B", uniform_init({latent_dim, action_dim}, action_dim, rng));
      break;
    case ControlKind::LocallyLinear: {
      basis_ = store.create(prefix + ".basis",
                            uniform_init({spec.basis_count, latent_dim, action_dim}, action_dim, rng));
      coeff_w_ =
          store.create(prefix + ".coeff.w", uniform_init({spec.basis_count, latent_dim}, latent_dim, rng));
      coeff_b_ = store.create(prefix + ".coeff.b", uniform_init({spec.basis_count}, latent_dim, rng));
      break;
    }
    case ControlKind::Nonlinear: {
      MlpSpec ms{spec.hidden, OutputActivation::Linear};
      f_ = Mlp(store, prefix + ".f", action_dim, ms, latent_dim, rng);
      break;
    }
  }
}

Tensor ControlModel::mean(const Tensor& a, const std::optional<Tensor>& z_post_mean) const {
  switch (spec_.kind) {
    case ControlKind::Linear: {
      Tensor y = ad::matmul(as_rows(a), b_, false, true);
      return like_input(y, a);
    }
    case ControlKind::LocallyLinear: {
      if (!z_post_mean.has_value())
        throw ShapeMismatch("locally linear control model needs the posterior mean");
      Tensor z = as_rows(*z_post_mean);
      Tensor alpha = ad::softmax(ad::matmul(z, coeff_w_, false, true) + coeff_b_);
      Tensor mixed = ad::mix_matrices(alpha, basis_);
      Tensor y = ad::bmatvec(mixed, as_rows(a));
      return like_input(y, a);
    }
    case ControlKind::Nonlinear:
      return f_.forward(a);
  }
  throw ConfigError("unreachable control kind");
}

TaskTransform::TaskTransform(ParamStore& store, const std::string& prefix, int task_dim, int d,
                             const TaskSpec& spec, std::mt19937_64& rng)
    : spec_(spec), task_dim_(task_dim), half_dim_(d) {
  if (task_dim % 2 != 0)
    throw ConfigError("TaskTransform: task dimension must be even for the triple variance path");
  switch (spec.kind) {
    case TaskKind::Linear:
      c_ = store.create(prefix + ".C", uniform_init({2 * d, task_dim}, task_dim, rng));
      break;
    case TaskKind::LocallyLinear: {
      basis_ = store.create(prefix + ".basis",
                            uniform_init({spec.basis_count, 2 * d, task_dim}, task_dim, rng));
      coeff_w_ = store.create(prefix + ".coeff.w", uniform_init({spec.basis_count, 2 * d}, 2 * d, rng));
      coeff_b_ = store.create(prefix + ".coeff.b", uniform_init({spec.basis_count}, 2 * d, rng));
      break;
    }
    case TaskKind::Nonlinear: {
      MlpSpec mean_spec{spec.hidden, OutputActivation::Linear};
      f_mean_ = Mlp(store, prefix + ".fmean", task_dim, mean_spec, 2 * d, rng);
      MlpSpec var_spec{spec.hidden, OutputActivation::Linear};
      f_var_ = Mlp(store, prefix + ".fvar", task_dim, var_spec, 2 * d, rng);
      break;
    }
  }
}

TaskContribution TaskTransform::apply(const gauss::DiagGaussian& task,
                                      const std::optional<Tensor>& z_post_mean) const {
  TaskContribution out;
  const int dl_half = task_dim_ / 2;
  const int vlast_mean = task.mean.rank() - 1;
  switch (spec_.kind) {
    case TaskKind::Linear: {
      out.mean = gauss::apply_blocked(c_, task.mean);
      gauss::Triple tvar{ad::slice(task.var, vlast_mean, 0, dl_half),
                         ad::slice(task.var, vlast_mean, dl_half, dl_half), Tensor()};
      tvar.s = Tensor::zeros(tvar.u.shape());
      out.cov = gauss::propagate_triple(c_, tvar);
      break;
    }
    case TaskKind::LocallyLinear: {
      if (!z_post_mean.has_value())
        throw ShapeMismatch("locally linear task transform needs the posterior mean");
      Tensor z = as_rows(*z_post_mean);
      Tensor alpha = ad::softmax(ad::matmul(z, coeff_w_, false, true) + coeff_b_);
      Tensor mixed = ad::mix_matrices(alpha, basis_);
      out.mean = gauss::apply_blocked(mixed, as_rows(task.mean));
      Tensor var_rows = as_rows(task.var);
      gauss::Triple tvar{ad::slice(var_rows, 1, 0, dl_half),
                         ad::slice(var_rows, 1, dl_half, dl_half),
                         Tensor::zeros({var_rows.dim(0), dl_half})};
      out.cov = gauss::propagate_triple(mixed, tvar);
      if (task.mean.rank() == 1) {
        out.mean = ad::reshape(out.mean, {out.mean.dim(1)});
        out.cov.u = ad::reshape(out.cov.u, {out.cov.u.dim(1)});
        out.cov.l = ad::reshape(out.cov.l, {out.cov.l.dim(1)});
        out.cov.s = ad::reshape(out.cov.s, {out.cov.s.dim(1)});
      }
      break;
    }
    case TaskKind::Nonlinear: {
      out.mean = f_mean_.forward(task.mean);
      // elu+1 shifted down and floored keeps the additive covariance >= 0
      Tensor v = ad::relu(ad::elu_plus_one(f_var_.forward(task.var)) - 1.0);
      const int last = v.rank() - 1;
      out.cov.u = ad::slice(v, last, 0, half_dim_);
      out.cov.l = ad::slice(v, last, half_dim_, half_dim_);
      out.cov.s = Tensor::zeros(out.cov.u.shape());
      break;
    }
  }
  return out;
}

Tensor TimeEncoding::features(int t) const {
  const double u = static_cast<double>(t) / static_cast<double>(window_len);
  return Tensor::from({kFeatures}, {u, std::sin(2.0 * kPi * u), std::cos(2.0 * kPi * u)});
}

Tensor TimeEncoding::features_rows(int t, int rows) const {
  Tensor one = features(t);
  Tensor out = Tensor::zeros({rows, kFeatures});
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < kFeatures; ++j) out.data()[static_cast<size_t>(r) * kFeatures + j] = one.data()[j];
  return out;
}

BeliefDecoder::BeliefDecoder(ParamStore& store, const std::string& prefix, int d, int obs_dim,
                             const std::vector<int>& hidden, std::mt19937_64& rng) {
  MlpSpec mean_spec{hidden, OutputActivation::Linear};
  mean_net_ = Mlp(store, prefix + ".mean", 2 * d, mean_spec, obs_dim, rng);
  MlpSpec var_spec{hidden, OutputActivation::EluPlusOne};
  var_net_ = Mlp(store, prefix + ".var", 3 * d, var_spec, obs_dim, rng);
}

std::pair<Tensor, Tensor> BeliefDecoder::decode(const gauss::FactorizedBelief& belief) const {
  Tensor mean_in = ad::concat({belief.mean_u, belief.mean_l});
  Tensor var_in = ad::concat({belief.var_u, belief.cov_s, belief.var_l});
  return {mean_net_.forward(mean_in), ad::clamp_min(var_net_.forward(var_in), 1e-8)};
}

gauss::LatentObservation encode_obs(const GaussianHead& encoder, const Tensor& o) {
  return encoder.encode(o);
}

Tensor transition_matrix(const Tensor& z_post_mean, const BandedTransition& bt) {
  return bt.matrices(z_post_mean);
}

Tensor control_mean(const Tensor& a, const ControlModel& cm,
                    const std::optional<Tensor>& z_post_mean) {
  return cm.mean(a, z_post_mean);
}

std::pair<Tensor, Tensor> decode_belief(const gauss::FactorizedBelief& b,
                                        const BeliefDecoder& dec) {
  return dec.decode(b);
}

}  // namespace rssm::nets
