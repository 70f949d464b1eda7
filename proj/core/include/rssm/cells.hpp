#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rssm/gaussian.hpp"
#include "rssm/nets.hpp"

namespace rssm::cells {

using ad::Tensor;
using gauss::DiagGaussian;
using gauss::FactorizedBelief;
using gauss::LatentObservation;

struct CellState {
  FactorizedBelief belief;  // prior over the current step
  int step_index = 0;
};

// One recurrent step: posterior after the (possibly missing) observation at
// the current step, and the prior predicted for the next step.
struct StepResult {
  FactorizedBelief posterior;
  FactorizedBelief next_prior;
  gauss::KalmanStepTrace trace;
  bool updated = false;
};

// N previous (o, a, o_next) interactions, encoded jointly per tuple.
struct ContextSet {
  std::vector<Tensor> tuples;  // each [2*Do+Da] or [B, 2*Do+Da]
};

// Weakly informative defaults for initial beliefs.
inline constexpr double kInitVar = 10.0;

FactorizedBelief initial_belief(int d, int batch, double var = kInitVar);
FactorizedBelief identity_belief(int d, int batch);  // N(0, I) in triple form

// Shared pieces of every fast-scale cell: encoder, banded transition,
// learned diagonal transition noise and the decoder pair.
struct FastCore {
  int obs_dim = 0;
  int d = 0;
  nets::GaussianHead encoder;
  nets::BandedTransition transition;
  Tensor trans_noise_raw;  // [2d], noise = elu(raw)+1
  nets::BeliefDecoder decoder;

  FastCore() = default;
  FastCore(nets::ParamStore& store, const std::string& prefix, int obs_dim, int d,
           const nets::BandedTransitionSpec& trans, const std::vector<int>& enc_hidden,
           const std::vector<int>& dec_hidden, double noise_init, std::mt19937_64& rng);

  Tensor noise_u() const;
  Tensor noise_l() const;
  FactorizedBelief predict(const FactorizedBelief& post, const std::optional<Tensor>& control,
                           const std::vector<gauss::Triple>& extra_cov) const;
};

// Posterior for a batch where some rows miss their observation: rows with
// mask 0 keep the prior exactly; their raw observations are never read.
FactorizedBelief masked_update(const FactorizedBelief& prior, const nets::GaussianHead& encoder,
                               const Tensor& obs_raw, const Tensor& observed_rows /*[B,1]*/);

// Expands a [B,1] 0/1 row mask to [B,n] (values only, no gradient).
Tensor expand_rows(const Tensor& rows, int n);

struct RknSpec {
  int obs_dim = 2;
  int lod = 6;  // d; latent state is 2d
  nets::BandedTransitionSpec transition{};
  std::vector<int> enc_hidden = {30};
  std::vector<int> dec_hidden = {30};
  double trans_noise_init = 0.05;
};

class RknCell {
 public:
  RknCell() = default;
  RknCell(nets::ParamStore& store, const std::string& prefix, const RknSpec& spec,
          std::mt19937_64& rng);
  StepResult step(const CellState& s, const std::optional<Tensor>& obs) const;
  const FastCore& core() const { return core_; }
  FastCore& core() { return core_; }
  int d() const { return core_.d; }

 protected:
  FastCore core_;
};

struct AcrknSpec : RknSpec {
  int act_dim = 1;
  nets::ControlSpec control{};
};

class AcrknCell : public RknCell {
 public:
  AcrknCell() = default;
  AcrknCell(nets::ParamStore& store, const std::string& prefix, const AcrknSpec& spec,
            std::mt19937_64& rng);
  StepResult step(const CellState& s, const Tensor& action,
                  const std::optional<Tensor>& obs) const;
  const nets::ControlModel& control() const { return control_; }

 protected:
  nets::ControlModel control_;
};

struct HiprssmSpec : AcrknSpec {
  int task_dim = 12;  // even; context tuples aggregate into N(mu_l, sigma_l)
  nets::TaskSpec task{};
  std::vector<int> ctx_hidden = {32};
};

class HiprssmCell : public AcrknCell {
 public:
  HiprssmCell() = default;
  HiprssmCell(nets::ParamStore& store, const std::string& prefix, const HiprssmSpec& spec,
              std::mt19937_64& rng);

  // Bayesian aggregation of encoded context tuples against N(0, I).
  DiagGaussian infer_task(const ContextSet& ctx,
                          const std::vector<Tensor>* weights = nullptr) const;
  StepResult step(const CellState& s, const Tensor& action, const DiagGaussian& task,
                  const std::optional<Tensor>& obs) const;
  const nets::TaskTransform& task_transform() const { return task_; }
  int task_dim() const { return task_dim_; }

 protected:
  int task_dim_ = 0;
  nets::GaussianHead ctx_encoder_;
  nets::TaskTransform task_;
};

struct Mts3Spec {
  int obs_dim = 2;
  int act_dim = 1;
  int lod = 6;        // fast latent observation dim d
  int task_half = 6;  // dl; task latent is 2*dl, abstract obs dim dl
  int window_len = 6;  // H
  nets::BandedTransitionSpec fast_transition{1, 3};  // single linear A by default
  nets::ControlSpec control{};
  std::vector<int> enc_hidden = {30};
  std::vector<int> dec_hidden = {30};
  std::vector<int> set_enc_hidden = {60};
  double trans_noise_init = 0.05;
  double task_noise_init = 0.05;
};

struct Mts3State {
  CellState fast;
  FactorizedBelief task_prior;      // p(l_k | beta_{1:k-1}, alpha_{1:k})
  FactorizedBelief task_posterior;  // running posterior of the previous window
  int window_index = 0;
  int within_window = 0;
};

class Mts3Cell {
 public:
  Mts3Cell() = default;
  Mts3Cell(nets::ParamStore& store, const std::string& prefix, const Mts3Spec& spec,
           std::mt19937_64& rng);

  const Mts3Spec& spec() const { return spec_; }
  const FastCore& fast_core() const { return fast_; }
  FastCore& fast_core() { return fast_; }
  const nets::ControlModel& control() const { return ctrl_; }

  // Abstract action: aggregated encodings of (action, time) pairs vs N(0,I).
  // `times` defaults to the list positions.
  DiagGaussian abstract_action(const std::vector<Tensor>& actions,
                               const std::vector<int>& times = {}) const;
  LatentObservation encode_abstract_action(const Tensor& action, int t_in_window) const;

  // Slow-scale predict: mu' = X mu + Y mu_alpha, cov via X,Y with noise S.
  FactorizedBelief task_predict(const FactorizedBelief& prev_posterior,
                                const DiagGaussian& alpha) const;

  // Slow-scale batch conditioning on abstract observations.
  FactorizedBelief task_update(const FactorizedBelief& task_prior,
                               const std::vector<LatentObservation>& betas,
                               const std::vector<Tensor>* weights = nullptr) const;

  LatentObservation encode_abstract_obs(const Tensor& obs, int t_in_window) const;

  // Task-conditioned fast step; conditions on the window's task PRIOR.
  StepResult fast_step(const CellState& s, const Tensor& action,
                       const FactorizedBelief& task_prior,
                       const std::optional<Tensor>& obs) const;

  gauss::Triple task_cov_triple(const FactorizedBelief& task_prior) const;
  Tensor task_mean_term(const FactorizedBelief& task_prior) const;

  Tensor task_noise_u() const;
  Tensor task_noise_l() const;
  const Tensor& sts_transition() const { return x_; }
  const Tensor& sts_control() const { return y_; }
  const Tensor& fast_task_matrix() const { return c_; }

 private:
  Mts3Spec spec_;
  FastCore fast_;
  nets::ControlModel ctrl_;
  Tensor c_;      // [2d, 2dl]
  Tensor x_, y_;  // [2dl, 2dl]
  Tensor s_raw_;  // [2dl]
  nets::GaussianHead beta_enc_;   // obs+time -> dl
  nets::GaussianHead alpha_enc_;  // act+time -> 2dl
  nets::TimeEncoding tenc_;
};

// ---------------------------------------------------------------------------
// Batched sequence rollouts. Observation masks are [B,1] 0/1 per step; rows
// with 0 skip the update and contribute nothing to set conditioning.

struct SequenceInput {
  std::vector<Tensor> obs;        // T x [B,Do]
  std::vector<Tensor> act;        // T x [B,Da]
  std::vector<Tensor> step_mask;  // T x [B,1]; empty means fully observed
  std::optional<FactorizedBelief> initial;       // overrides the default prior, [B,d]
  std::optional<FactorizedBelief> initial_task;  // mts3: overrides the N(0,I) start
};

struct SequenceOutput {
  std::vector<Tensor> pred_mean;  // T x [B,Do], decoded from the prior at t
  std::vector<Tensor> pred_var;
  std::vector<FactorizedBelief> priors;
  std::vector<FactorizedBelief> task_priors;  // mts3: one per window
  FactorizedBelief final_prior;               // carried state after the last step
  FactorizedBelief final_task;                // mts3: last task posterior
};

SequenceOutput rkn_sequence(const RknCell& cell, const SequenceInput& in);
SequenceOutput acrkn_sequence(const AcrknCell& cell, const SequenceInput& in);
SequenceOutput hiprssm_sequence(const HiprssmCell& cell, const SequenceInput& in,
                                const DiagGaussian& task);

// Two-scale rollout; window_mask is Kw x [B,1] (0 masks the whole window for
// both fast updates and the abstract-observation set). Fast beliefs carried
// across window boundaries are cut from the gradient tape; the slow scale is
// not.
SequenceOutput mts3_sequence(const Mts3Cell& cell, const SequenceInput& in,
                             const std::vector<Tensor>& window_mask, bool cut_fast = true);

// Context tuples (o_t, a_t, o_{t+1}) built from a window of steps.
ContextSet make_context(const std::vector<Tensor>& obs, const std::vector<Tensor>& act, int start,
                        int len);

}  // namespace rssm::cells
