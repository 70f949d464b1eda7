#include "rssm/gaussian.hpp"

#include <cmath>

namespace rssm::gauss {

namespace {

using namespace rssm::ad;

int trailing_dim(const Tensor& t) { return t.shape().back(); }

void check_obs_dim(const Tensor& ref, const LatentObservation& o, const char* who) {
  if (trailing_dim(o.value) != trailing_dim(ref) || trailing_dim(o.var) != trailing_dim(ref))
    throw DimMismatch(std::string(who) + ": observation dimension disagrees with prior");
}

// Shared 2x2-block inversion kernel; works for both directions.
void invert_blocks(const Tensor& u, const Tensor& l, const Tensor& s, Tensor& ou, Tensor& ol,
                   Tensor& os, const char* who) {
  Tensor det = u * l - s * s;
  for (double v : det.data())
    if (!(v > 0.0))
      throw NonPositiveDefinite(std::string(who) + ": per-dim block not positive definite");
  for (double v : u.data())
    if (!(v > 0.0))
      throw NonPositiveDefinite(std::string(who) + ": per-dim block not positive definite");
  ou = l / det;
  ol = u / det;
  os = (Tensor::scalar(0.0) - s) / det;
}

}  // namespace

FactorizedPrecision factorized_invert(const Triple& cov) {
  FactorizedPrecision p;
  invert_blocks(cov.u, cov.l, cov.s, p.lam_u, p.lam_l, p.lam_s, "factorized_invert");
  return p;
}

Triple precision_to_covariance(const FactorizedPrecision& prec) {
  Triple c;
  invert_blocks(prec.lam_u, prec.lam_l, prec.lam_s, c.u, c.l, c.s, "precision_to_covariance");
  return c;
}

DiagGaussian bayesian_aggregate(const DiagGaussian& prior,
                                const std::vector<LatentObservation>& obs,
                                const std::vector<Tensor>* weights) {
  if (obs.empty()) return prior;
  std::vector<Tensor> prec_terms, resid_terms;
  prec_terms.reserve(obs.size());
  resid_terms.reserve(obs.size());
  for (size_t n = 0; n < obs.size(); ++n) {
    check_obs_dim(prior.mean, obs[n], "bayesian_aggregate");
    Tensor inv_var = ad::reciprocal(obs[n].var);
    Tensor resid = (obs[n].value - prior.mean) / obs[n].var;
    if (weights != nullptr) {
      inv_var = (*weights)[n] * inv_var;
      resid = (*weights)[n] * resid;
    }
    prec_terms.push_back(inv_var);
    resid_terms.push_back(resid);
  }
  DiagGaussian post;
  post.var = ad::reciprocal(ad::reciprocal(prior.var) + ad::pairwise_sum(prec_terms));
  post.mean = prior.mean + post.var * ad::pairwise_sum(resid_terms);
  return post;
}

FactorizedBelief gaussian_condition_set(const FactorizedBelief& prior,
                                        const std::vector<LatentObservation>& obs,
                                        const std::vector<Tensor>* weights) {
  if (obs.empty()) return prior;
  std::vector<Tensor> prec_terms, resid_terms;
  prec_terms.reserve(obs.size());
  resid_terms.reserve(obs.size());
  for (size_t n = 0; n < obs.size(); ++n) {
    check_obs_dim(prior.mean_u, obs[n], "gaussian_condition_set");
    Tensor inv_var = ad::reciprocal(obs[n].var);
    Tensor resid = (obs[n].value - prior.mean_u) / obs[n].var;
    if (weights != nullptr) {
      inv_var = (*weights)[n] * inv_var;
      resid = (*weights)[n] * resid;
    }
    prec_terms.push_back(inv_var);
    resid_terms.push_back(resid);
  }
  FactorizedPrecision prec = factorized_invert(prior.cov());
  prec.lam_u = prec.lam_u + ad::pairwise_sum(prec_terms);
  Triple post_cov = precision_to_covariance(prec);
  Tensor resid_sum = ad::pairwise_sum(resid_terms);
  FactorizedBelief post;
  post.var_u = post_cov.u;
  post.var_l = post_cov.l;
  post.cov_s = post_cov.s;
  post.mean_u = prior.mean_u + post_cov.u * resid_sum;
  post.mean_l = prior.mean_l + post_cov.s * resid_sum;
  return post;
}

std::pair<FactorizedBelief, KalmanStepTrace> factorized_kalman_update(
    const FactorizedBelief& prior, const LatentObservation& obs) {
  check_obs_dim(prior.mean_u, obs, "factorized_kalman_update");
  for (double v : obs.var.data())
    if (!(v > 0.0)) throw NonPositiveVariance("factorized_kalman_update: sigma_obs <= 0");
  Tensor denom = prior.var_u + obs.var;
  Tensor gain_u = prior.var_u / denom;
  Tensor gain_l = prior.cov_s / denom;
  Tensor innovation = obs.value - prior.mean_u;
  FactorizedBelief post;
  post.mean_u = prior.mean_u + gain_u * innovation;
  post.mean_l = prior.mean_l + gain_l * innovation;
  post.var_u = prior.var_u * obs.var / denom;
  post.cov_s = prior.cov_s * obs.var / denom;
  post.var_l = prior.var_l - prior.cov_s * prior.cov_s / denom;
  KalmanStepTrace trace{gain_u.detached_copy(), gain_l.detached_copy(),
                        innovation.detached_copy()};
  return {post, trace};
}

namespace {

// Slices the four blocks of a 2x2-blocked matrix (shared or per-sample).
struct Blocks {
  Tensor b11, b12, b21, b22;
  int m = 0, n = 0;
  bool batched = false;
};

Blocks split_blocks(const Tensor& mat) {
  Blocks b;
  if (mat.rank() == 2) {
    b.m = mat.dim(0) / 2;
    b.n = mat.dim(1) / 2;
    b.b11 = ad::slice(ad::slice(mat, 0, 0, b.m), 1, 0, b.n);
    b.b12 = ad::slice(ad::slice(mat, 0, 0, b.m), 1, b.n, b.n);
    b.b21 = ad::slice(ad::slice(mat, 0, b.m, b.m), 1, 0, b.n);
    b.b22 = ad::slice(ad::slice(mat, 0, b.m, b.m), 1, b.n, b.n);
  } else if (mat.rank() == 3) {
    b.batched = true;
    b.m = mat.dim(1) / 2;
    b.n = mat.dim(2) / 2;
    b.b11 = ad::slice(ad::slice(mat, 1, 0, b.m), 2, 0, b.n);
    b.b12 = ad::slice(ad::slice(mat, 1, 0, b.m), 2, b.n, b.n);
    b.b21 = ad::slice(ad::slice(mat, 1, b.m, b.m), 2, 0, b.n);
    b.b22 = ad::slice(ad::slice(mat, 1, b.m, b.m), 2, b.n, b.n);
  } else {
    throw ShapeMismatch("blocked matrix must be rank 2 or 3");
  }
  return b;
}

// (M1 .* M2) v for shared [m,n] or per-sample [B,m,n] factors.
Tensor had_matvec(const Tensor& m1, const Tensor& m2, const Tensor& v, bool batched) {
  Tensor prod = m1 * m2;
  if (batched) {
    Tensor x = v.rank() == 1 ? ad::reshape(v, {1, v.dim(0)}) : v;
    if (x.dim(0) == 1 && prod.dim(0) != 1) {
      // shared vector against per-sample matrices: replicate via broadcast add
      x = ad::add(Tensor::zeros({prod.dim(0), x.dim(1)}), ad::reshape(x, {x.dim(1)}));
    }
    return ad::bmatvec(prod, x);
  }
  if (v.rank() == 1) {
    Tensor r = ad::matmul(ad::reshape(v, {1, v.dim(0)}), prod, false, true);
    return ad::reshape(r, {r.dim(1)});
  }
  return ad::matmul(v, prod, false, true);
}

bool triple_is_zero(const Tensor& t) {
  for (double v : t.data())
    if (v != 0.0) return false;
  return true;
}

}  // namespace

Triple propagate_triple(const Tensor& m, const Triple& cov) {
  Blocks b = split_blocks(m);
  const bool skip_s = triple_is_zero(cov.s) && !cov.s.requires_grad();
  Triple out;
  out.u = had_matvec(b.b11, b.b11, cov.u, b.batched) + had_matvec(b.b12, b.b12, cov.l, b.batched);
  out.s = had_matvec(b.b21, b.b11, cov.u, b.batched) + had_matvec(b.b22, b.b12, cov.l, b.batched);
  out.l = had_matvec(b.b21, b.b21, cov.u, b.batched) + had_matvec(b.b22, b.b22, cov.l, b.batched);
  if (!skip_s) {
    out.u = out.u + 2.0 * had_matvec(b.b11, b.b12, cov.s, b.batched);
    out.s = out.s + had_matvec(b.b21, b.b12, cov.s, b.batched) +
            had_matvec(b.b22, b.b11, cov.s, b.batched);
    out.l = out.l + 2.0 * had_matvec(b.b21, b.b22, cov.s, b.batched);
  }
  return out;
}

Tensor apply_blocked(const Tensor& m, const Tensor& x) {
  if (m.rank() == 3) {
    Tensor xb = x.rank() == 1 ? ad::reshape(x, {1, x.dim(0)}) : x;
    return ad::bmatvec(m, xb);
  }
  if (x.rank() == 1) {
    Tensor r = ad::matmul(ad::reshape(x, {1, x.dim(0)}), m, false, true);
    return ad::reshape(r, {r.dim(1)});
  }
  return ad::matmul(x, m, false, true);
}

FactorizedBelief factorized_predict(const FactorizedBelief& post, const Tensor& a,
                                    const std::optional<Tensor>& control_mean,
                                    const std::vector<Triple>& extra_cov_terms,
                                    const Tensor& noise_u, const Tensor& noise_l) {
  const int d = trailing_dim(post.mean_u);
  Tensor z = ad::concat({post.mean_u, post.mean_l});
  Tensor mean = apply_blocked(a, z);
  if (control_mean.has_value()) mean = mean + *control_mean;
  const int last = mean.rank() - 1;
  FactorizedBelief prior;
  prior.mean_u = ad::slice(mean, last, 0, d);
  prior.mean_l = ad::slice(mean, last, d, d);

  Triple cov = propagate_triple(a, post.cov());
  cov.u = cov.u + noise_u;
  cov.l = cov.l + noise_l;
  for (const Triple& t : extra_cov_terms) {
    cov.u = cov.u + t.u;
    cov.l = cov.l + t.l;
    if (t.s.defined()) cov.s = cov.s + t.s;
  }

  // Positivity guard: floor the variances, then cap the side covariance so
  // every per-dim block stays positive definite under BPTT.
  cov.u = ad::clamp_min(cov.u, kVarFloor);
  cov.l = ad::clamp_min(cov.l, kVarFloor);
  Tensor limit = kSideCap * ad::sqrt(cov.u * cov.l);
  Tensor abs_s = cov.s * ad::sign_of(cov.s);
  Tensor ok = ad::mask_le(abs_s, limit);
  cov.s = ad::where(ok, cov.s, ad::sign_of(cov.s) * limit);

  if (!ad::all_finite(cov.u) || !ad::all_finite(cov.l) || !ad::all_finite(cov.s))
    throw NonPositiveDefinite("factorized_predict: covariance clamping failed (non-finite)");

  prior.var_u = cov.u;
  prior.var_l = cov.l;
  prior.cov_s = cov.s;
  return prior;
}

LinearTerm diag_term(const Eigen::MatrixXd& coeff, const Eigen::VectorXd& mean,
                     const Eigen::VectorXd& var_diag) {
  LinearTerm t;
  t.coeff = coeff;
  t.dist.mean = mean;
  t.dist.cov = var_diag.asDiagonal();
  return t;
}

DenseGaussian gaussian_marginalize_linear(const std::vector<LinearTerm>& terms,
                                          const Eigen::MatrixXd& noise_cov) {
  if (noise_cov.rows() != noise_cov.cols())
    throw DimMismatch("gaussian_marginalize_linear: noise covariance must be square");
  const Eigen::Index m = noise_cov.rows();
  DenseGaussian out;
  out.mean = Eigen::VectorXd::Zero(m);
  out.cov = noise_cov;
  for (const LinearTerm& t : terms) {
    if (t.coeff.rows() != m) throw DimMismatch("gaussian_marginalize_linear: row dims disagree");
    if (t.coeff.cols() != t.dist.mean.size() || t.dist.cov.rows() != t.dist.mean.size() ||
        t.dist.cov.cols() != t.dist.mean.size())
      throw DimMismatch("gaussian_marginalize_linear: coefficient/distribution dims disagree");
    out.mean += t.coeff * t.dist.mean;
    out.cov += t.coeff * t.dist.cov * t.coeff.transpose();
  }
  return out;
}

}  // namespace rssm::gauss
