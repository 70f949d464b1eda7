#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rssm/cells.hpp"
#include "rssm/envs.hpp"
#include "rssm/nets.hpp"

namespace rssm::train {

using ad::Tensor;

enum class LossKind { GaussianNll, RmseDifferences };

struct LossSpec {
  LossKind kind = LossKind::GaussianNll;
  double lambda_reserved = 0.0;
  double clip_norm = 5.0;
};

struct MaskSpec {
  double step_mask_fraction = 0.0;
  double window_mask_fraction = 0.0;
  bool resample_per_batch = true;
};

struct OptimSpec {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct Masks {
  std::vector<Tensor> step;    // T x [B,1], 1 = observed
  std::vector<Tensor> window;  // ceil(T/H) x [B,1]
};

// Bernoulli per step and per window; the first step of every sequence is
// forced observed so filtering has an anchor.
Masks make_masks(const MaskSpec& spec, int batch, int steps, int window_len,
                 std::mt19937_64& rng);

// Masked mean of 0.5 (log 2 pi var + (target-mean)^2 / var) over every valid
// (sequence, step, dim) entry. `valid` is per step [B,1].
Tensor gaussian_nll(const std::vector<Tensor>& pred_mean, const std::vector<Tensor>& pred_var,
                    const std::vector<Tensor>& target, const std::vector<Tensor>& valid);

// sqrt(mean over valid steps of the squared residual norm).
Tensor rmse_differences(const std::vector<Tensor>& pred_delta,
                        const std::vector<Tensor>& target_delta,
                        const std::vector<Tensor>& valid);

// Architecture + hyperparameter record for the model zoo.
struct ModelSpec {
  std::string kind = "rkn";  // rkn | acrkn | hiprssm | mts3
  int obs_dim = 2;
  int act_dim = 1;
  int lod = 6;       // latent observation dim d; latent state is 2d
  int task_dim = 12;  // hiprssm latent task / mts3 task latent (2 * task_half)
  int window_len = 6;  // H for mts3, context/target length N for hiprssm
  int basis_count = 4;
  int bandwidth = 3;
  std::string control_kind = "nonlinear";  // linear | locally_linear | nonlinear
  std::string task_kind = "nonlinear";     // linear | locally_linear | nonlinear
  std::vector<int> enc_hidden = {30};
  std::vector<int> dec_hidden = {30};
  std::vector<int> set_enc_hidden = {60};
  std::vector<int> ctx_hidden = {60};
  std::vector<int> control_hidden = {30};
  double trans_noise_init = 0.05;
  double task_noise_init = 0.05;
  LossKind loss = LossKind::GaussianNll;
  uint64_t init_seed = 0;
};

struct Batch {
  std::vector<Tensor> obs;  // T x [B,Do]
  std::vector<Tensor> act;  // T x [B,Da]
  std::vector<Tensor> ctx;  // hiprssm: N x [B, 2Do+Da] context tuples
  int batch = 0;
  int steps = 0;
};

struct Carry {
  std::optional<gauss::FactorizedBelief> fast;
  std::optional<gauss::FactorizedBelief> task;
};

// One trainable model: a cell of the requested kind plus its parameters.
class Model {
 public:
  explicit Model(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  nets::ParamStore& params() { return store_; }
  const nets::ParamStore& params() const { return store_; }

  // H for window masking (1 outside mts3).
  int mask_window_len() const;
  bool predicts_differences() const { return spec_.loss == LossKind::RmseDifferences; }

  cells::SequenceOutput forward(const Batch& batch, const Masks& masks,
                                const Carry* carry = nullptr) const;

  const cells::Mts3Cell& mts3() const;
  const cells::HiprssmCell& hiprssm() const;
  const cells::AcrknCell& acrkn() const;
  const cells::RknCell& rkn() const;

 private:
  ModelSpec spec_;
  nets::ParamStore store_;
  cells::RknCell rkn_;
  cells::AcrknCell acrkn_;
  cells::HiprssmCell hiprssm_;
  cells::Mts3Cell mts3_;
};

std::unique_ptr<Model> make_model(const ModelSpec& spec);

// Episode batches for the model family; hiprssm batches (context, target)
// window pairs, everything else batches whole episodes.
std::vector<Batch> make_batches(const envs::EpisodeDataset& ds, const ModelSpec& spec,
                                int batch_size, std::mt19937_64& rng);

// Per-step prediction targets derived from a batch: absolute observations or
// differences to the previous step, with the step-0 entries marked invalid.
struct Targets {
  std::vector<Tensor> value;  // T x [B,Do]
  std::vector<Tensor> valid;  // T x [B,1]
};
Targets make_targets(const Batch& batch, LossKind kind);

Tensor sequence_loss(LossKind kind, const cells::SequenceOutput& out, const Targets& targets,
                     int start, int len);

class Adam {
 public:
  Adam(nets::ParamStore& store, const OptimSpec& spec);

  // Clips the global gradient norm, applies one update, re-applies the
  // structural masks. Returns the pre-clip global norm.
  double step(double clip_norm);

  double last_clip_scale() const { return last_scale_; }
  int64_t step_count() const { return t_; }
  std::map<std::string, std::vector<double>>& moment1() { return m_; }
  std::map<std::string, std::vector<double>>& moment2() { return v_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  nets::ParamStore& store_;
  OptimSpec spec_;
  std::map<std::string, std::vector<double>> m_, v_;
  int64_t t_ = 0;
  double last_scale_ = 1.0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainTrace {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val = 0.0;
  bool diverged = false;
  std::string best_checkpoint;
  std::string last_checkpoint;

  void write_csv(const std::string& path) const;
};

struct TrainOptions {
  int epochs = 50;
  int batch_size = 16;
  int tbptt_len = 0;  // 0: full sequence when T <= 600, else 600
  uint64_t seed = 0;
  double val_fraction = 0.1;
  std::string out_dir;  // when set, writes best.ckpt / last.ckpt / trace.csv
  std::string resume_from;
};

TrainTrace train(Model& model, const envs::EpisodeDataset& dataset, const LossSpec& loss,
                 const MaskSpec& masks, const OptimSpec& optim, const TrainOptions& options);

// ---------------------------------------------------------------------------
// Checkpoints: a text manifest (name, shape, dtype per entry) followed by the
// little-endian float64 payload in manifest order. Round trips bit exactly.

struct Checkpoint {
  std::map<std::string, std::pair<ad::Shape, std::vector<double>>> entries;
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint checkpoint_of(const nets::ParamStore& store,
                         const std::map<std::string, std::string>& meta = {});
// Restores every store parameter; throws CheckpointMismatch on any missing
// name or shape conflict.
void restore_params(nets::ParamStore& store, const Checkpoint& ckpt);

}  // namespace rssm::train
