#pragma once

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rssm/gaussian.hpp"
#include "rssm/tensor.hpp"

namespace rssm::nets {

using ad::Tensor;

enum class OutputActivation { Linear, EluPlusOne, Softmax };

struct MlpSpec {
  std::vector<int> layer_widths;  // hidden widths, relu activations
  OutputActivation output_activation = OutputActivation::Linear;
};

// Named parameter registry. Names are sorted, which fixes the iteration
// order for the optimizer, gradient reduction and checkpoints.
class ParamStore {
 public:
  Tensor create(const std::string& name, const ad::Shape& shape);
  Tensor create(const std::string& name, Tensor init);
  Tensor get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }

  // Structural 0/1 mask re-applied after every optimizer step (banded
  // transitions keep out-of-band entries identically zero).
  void set_structural_mask(const std::string& name, Tensor mask);
  void apply_structural_masks();

  void zero_grad();
  int64_t total_size() const;

  std::map<std::string, Tensor>& all() { return params_; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  const std::map<std::string, Tensor>& structural_masks() const { return masks_; }

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> masks_;
};

Tensor uniform_init(const ad::Shape& shape, int fan_in, std::mt19937_64& rng);

// Fully connected stack: relu hidden layers, one output head.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& prefix, int in_dim, const MlpSpec& spec, int out_dim,
      std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;  // x [B,in] or [in]
  int out_dim() const { return out_dim_; }

 private:
  std::vector<Tensor> weights_;  // [out,in]
  std::vector<Tensor> biases_;
  OutputActivation out_act_ = OutputActivation::Linear;
  int out_dim_ = 0;
};

// Shared relu trunk with a linear mean head and an elu+1 variance head,
// the encoder/decoder shape used throughout.
class GaussianHead {
 public:
  GaussianHead() = default;
  GaussianHead(ParamStore& store, const std::string& prefix, int in_dim,
               const std::vector<int>& hidden, int out_dim, std::mt19937_64& rng);
  std::pair<Tensor, Tensor> forward(const Tensor& x) const;  // (mean, var > 0)
  gauss::LatentObservation encode(const Tensor& x) const;
  int out_dim() const { return out_dim_; }

 private:
  std::vector<Tensor> trunk_w_, trunk_b_;
  Tensor mean_w_, mean_b_, var_w_, var_b_;
  int out_dim_ = 0;
};

struct BandedTransitionSpec {
  int basis_count = 1;  // K
  int bandwidth = 3;
};

// Locally linear transition: K banded basis matrices combined by a
// state-dependent softmax coefficient network (no hidden layers).
class BandedTransition {
 public:
  BandedTransition() = default;
  BandedTransition(ParamStore& store, const std::string& prefix, int d,
                   const BandedTransitionSpec& spec, std::mt19937_64& rng);

  // A_t for the given posterior mean; [B,2d,2d] when K > 1 or the input is
  // batched, [2d,2d] for the shared K = 1 matrix.
  Tensor matrices(const Tensor& z_post_mean) const;
  Tensor coefficients(const Tensor& z_post_mean) const;  // [B,K]

  int basis_count() const { return spec_.basis_count; }
  int latent_dim() const { return 2 * half_dim_; }

 private:
  BandedTransitionSpec spec_;
  int half_dim_ = 0;
  Tensor basis_;      // [K,2d,2d]
  Tensor band_mask_;  // same shape, 0/1, constant
  Tensor coeff_w_, coeff_b_;
};

Tensor banded_block_mask(int d, int bandwidth);  // [2d,2d]

enum class ControlKind { Linear, LocallyLinear, Nonlinear };

struct ControlSpec {
  ControlKind kind = ControlKind::Nonlinear;
  int basis_count = 2;              // locally linear only
  std::vector<int> hidden = {120};  // nonlinear only
};

// Deterministic latent control vector b(a); actions carry no uncertainty so
// there is no variance path.
class ControlModel {
 public:
  ControlModel() = default;
  ControlModel(ParamStore& store, const std::string& prefix, int action_dim, int latent_dim,
               const ControlSpec& spec, std::mt19937_64& rng);
  Tensor mean(const Tensor& a, const std::optional<Tensor>& z_post_mean = std::nullopt) const;
  ControlKind kind() const { return spec_.kind; }

 private:
  ControlSpec spec_;
  int latent_dim_ = 0;
  Tensor b_;        // [2d, Da] linear
  Tensor basis_;    // [K, 2d, Da] locally linear
  Tensor coeff_w_, coeff_b_;
  Mlp f_;           // nonlinear
};

enum class TaskKind { Linear, LocallyLinear, Nonlinear };

struct TaskSpec {
  TaskKind kind = TaskKind::Linear;
  int basis_count = 2;
  std::vector<int> hidden = {32};
};

struct TaskContribution {
  Tensor mean;        // [.., 2d] additive latent mean term
  gauss::Triple cov;  // additive covariance triple, entries >= 0 on u/l
};

// Maps latent task moments into the state space: the mean path feeds the
// predict mean, the variance path adds a nonnegative covariance triple.
class TaskTransform {
 public:
  TaskTransform() = default;
  TaskTransform(ParamStore& store, const std::string& prefix, int task_dim, int d,
                const TaskSpec& spec, std::mt19937_64& rng);
  TaskContribution apply(const gauss::DiagGaussian& task,
                         const std::optional<Tensor>& z_post_mean = std::nullopt) const;
  TaskKind kind() const { return spec_.kind; }

 private:
  TaskSpec spec_;
  int task_dim_ = 0, half_dim_ = 0;
  Tensor c_;  // [2d, task_dim]
  Tensor basis_;
  Tensor coeff_w_, coeff_b_;
  Mlp f_mean_, f_var_;
};

// Relative position of a step inside a window of length H:
// (t/H, sin 2 pi t/H, cos 2 pi t/H), deterministic in (t, H).
struct TimeEncoding {
  int window_len = 1;
  static constexpr int kFeatures = 3;
  Tensor features(int t) const;
  Tensor features_rows(int t, int rows) const;
};

// dec_mu on the mean halves, dec_sigma (elu+1) on the covariance triple.
class BeliefDecoder {
 public:
  BeliefDecoder() = default;
  BeliefDecoder(ParamStore& store, const std::string& prefix, int d, int obs_dim,
                const std::vector<int>& hidden, std::mt19937_64& rng);
  std::pair<Tensor, Tensor> decode(const gauss::FactorizedBelief& belief) const;

 private:
  Mlp mean_net_, var_net_;
};

gauss::LatentObservation encode_obs(const GaussianHead& encoder, const Tensor& o);
Tensor transition_matrix(const Tensor& z_post_mean, const BandedTransition& bt);
Tensor control_mean(const Tensor& a, const ControlModel& cm,
                    const std::optional<Tensor>& z_post_mean = std::nullopt);
std::pair<Tensor, Tensor> decode_belief(const gauss::FactorizedBelief& b,
                                        const BeliefDecoder& dec);

}  // namespace rssm::nets
