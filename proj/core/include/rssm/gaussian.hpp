#pragma once

#include <Eigen/Dense>
#include <optional>
#include <utility>
#include <vector>

#include "rssm/tensor.hpp"

namespace rssm::gauss {

using ad::Tensor;

// Beliefs over a split latent state [p; m]. The 2d x 2d covariance is stored
// as three d-vectors: the diagonals of the upper block, the lower block and
// the (diagonal) side block coupling them. Tensors are [d] or batched [B,d].

struct DiagGaussian {
  Tensor mean;
  Tensor var;
};

struct LatentObservation {
  Tensor value;
  Tensor var;
};

struct Triple {
  Tensor u;
  Tensor l;
  Tensor s;
};

struct FactorizedBelief {
  Tensor mean_u;
  Tensor mean_l;
  Tensor var_u;
  Tensor var_l;
  Tensor cov_s;

  Triple cov() const { return Triple{var_u, var_l, cov_s}; }
};

struct FactorizedPrecision {
  Tensor lam_u;
  Tensor lam_l;
  Tensor lam_s;
};

// Per-dimension Kalman gains and innovation, kept as a diagnostic record.
struct KalmanStepTrace {
  Tensor gain_u;
  Tensor gain_l;
  Tensor innovation;
};

// Variance floor applied by the positivity guard after a predict step.
inline constexpr double kVarFloor = 1e-8;
inline constexpr double kSideCap = 0.99;

// Scalar-operation inverse of the per-dim 2x2 blocks; involutive.
// Throws NonPositiveDefinite when any block has non-positive determinant.
FactorizedPrecision factorized_invert(const Triple& cov);
Triple precision_to_covariance(const FactorizedPrecision& prec);

// Conjugate fusion of independent diagonal-Gaussian observations of the
// latent directly (H = I). Order independent; empty set returns the prior.
// `weights`, when given, holds one 0/1 tensor per observation so batched
// callers can drop masked set members.
DiagGaussian bayesian_aggregate(const DiagGaussian& prior,
                                const std::vector<LatentObservation>& obs,
                                const std::vector<Tensor>* weights = nullptr);

// Batch conditioning of a factorized belief on a set of observations of its
// upper half (H = [I, 0]), performed in precision form.
FactorizedBelief gaussian_condition_set(const FactorizedBelief& prior,
                                        const std::vector<LatentObservation>& obs,
                                        const std::vector<Tensor>* weights = nullptr);

// Single-observation update in covariance form.
std::pair<FactorizedBelief, KalmanStepTrace> factorized_kalman_update(
    const FactorizedBelief& prior, const LatentObservation& obs);

// Diagonals of the blocks of M S M^T where S is the block covariance held by
// `cov`. M maps 2n -> 2m and is either shared [2m,2n] or per-sample
// [B,2m,2n]; a plain diagonal Gaussian is the special case s = 0.
Triple propagate_triple(const Tensor& m, const Triple& cov);

// M . x for the same M conventions; x is [2n] or [B,2n].
Tensor apply_blocked(const Tensor& m, const Tensor& x);

// Predict step: mean' = A mean + control, covariance propagated block-wise,
// truncated back to the triple, plus diagonal transition noise and any
// additional (already projected) covariance terms. The positivity guard
// clamps var floors and caps |cov_s| before failing.
FactorizedBelief factorized_predict(const FactorizedBelief& post, const Tensor& a,
                                    const std::optional<Tensor>& control_mean,
                                    const std::vector<Triple>& extra_cov_terms,
                                    const Tensor& noise_u, const Tensor& noise_l);

// General linear-combination marginalization with full covariances:
// y = sum_i A_i u_i + eps. Dense path, used wherever beliefs are not
// factorized (and as the reference form of the identity).
struct DenseGaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

struct LinearTerm {
  Eigen::MatrixXd coeff;
  DenseGaussian dist;
};

LinearTerm diag_term(const Eigen::MatrixXd& coeff, const Eigen::VectorXd& mean,
                     const Eigen::VectorXd& var_diag);

DenseGaussian gaussian_marginalize_linear(const std::vector<LinearTerm>& terms,
                                          const Eigen::MatrixXd& noise_cov);

}  // namespace rssm::gauss
