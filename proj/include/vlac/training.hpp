// ELBO assembly, the exact-marginalisation oracle, and the training loop:
// adaptive-moment ascent on the single-sample bound with an annealed
// Concrete temperature, per-step metrics, and bit-exact checkpoint/resume.
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "vlac/data.hpp"
#include "vlac/model.hpp"

namespace vlac {

struct TrainConfig {
  int64_t batch_size = 64;
  int64_t steps = 5000;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double tau_start = 1.0;
  double tau_end = 0.5;
  int64_t anneal_steps = 0;  // 0: anneal over the first half of `steps`
  bool straight_through = false;
  uint64_t seed = 0;
  Precision precision = Precision::f64;
  int64_t eval_every = 0;        // 0: evaluate only after the final step
  int64_t checkpoint_every = 0;  // 0: checkpoint only after the final step

  void validate() const;
};

// Linear tau_start -> tau_end over the anneal window, constant afterwards.
double tau_at(const TrainConfig& tc, int64_t step);

// Per-term bound on one batch, each term a scalar averaged over rows.
// kl_y holds an exact zero for K=1 layers.
struct ElboBreakdown {
  Tensor total;
  Tensor reconstruction;
  std::vector<Tensor> kl_z, kl_y;  // one scalar per layer
  LatentState latents;
  Tensor x_mean;
};

struct ElboValues {
  double total = 0.0;
  double reconstruction = 0.0;
  std::vector<double> kl_z, kl_y;
};

ElboValues breakdown_values(const ElboBreakdown& eb);

// Single-sample estimate: one Concrete draw per categorical layer, one
// Gaussian draw per z layer; Gaussian prior parameters mixed by the relaxed
// weights (means, and stddevs on the raw pre-softplus scale); categorical KL
// against the uniform prior in closed form. Throws naming any non-finite term.
ElboBreakdown elbo(const ModelConfig& config, Binder& params, const Tensor& x,
                   NoiseSource& noise, const EncodeOptions& opts = {});

// The same bound with every categorical y marginalised exactly: enumerates
// all hard combinations (guard: at most 256), weights each branch by
// its posterior probability, reuses one z-noise array per layer across
// branches. Value-level, no gradients.
double exact_elbo(const ModelConfig& config, const ParamStore& params, const Array& x,
                  const std::vector<Array>& z_noise);

// The bound computed by a path with no categorical machinery at all; only
// valid when every K=1. With the same weights, noise, and precision the
// result is bit-identical to elbo().
ElboBreakdown vlae_elbo(const ModelConfig& config, Binder& params, const Tensor& x,
                        NoiseSource& noise);

// One adaptive-moment update of `param` against `grad`, in place; m and v
// carry the running moments and t is the 1-based update count (bias
// correction). In f32 mode the updated parameter is quantised.
void adam_update(Array& param, const Array& grad, Array& m, Array& v, const TrainConfig& tc,
                 int64_t t);

// Parameters only (ignores optimiser state); shapes checked against config.
ParamStore load_params(const ModelConfig& config, const std::string& prefix);

class Trainer {
 public:
  Trainer(ModelConfig mc, TrainConfig tc);

  const ModelConfig& model_config() const { return mc_; }
  const TrainConfig& train_config() const { return tc_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  int64_t step() const { return step_; }

  // One ascent update on a batch; returns the bound seen before the update.
  // Throws naming the parameter on any non-finite gradient.
  ElboValues train_step(const Array& x);

  // Runs until `steps`, drawing shuffled minibatches. Appends one row per
  // step to <out_dir>/metrics.tsv (header: step, total, reconstruction,
  // kl_z per layer, kl_y per layer, tau, wall_clock_ms), evaluation
  // snapshots to <out_dir>/eval.tsv, checkpoints to <out_dir>/ckpt-<step>
  // and <out_dir>/ckpt-final.
  void train(const Dataset& data, const std::string& out_dir);

  // Checkpoints cover parameters (stored in the configured precision),
  // optimiser moments, the step counter, and the generator state, so a
  // resumed run reproduces an uninterrupted one bit for bit.
  void save_checkpoint(const std::string& prefix) const;
  void load_checkpoint(const std::string& prefix);

 private:
  ModelConfig mc_;
  TrainConfig tc_;
  ParamStore params_;
  std::unordered_map<std::string, Array> m_, v_;  // adam moments, always f64
  int64_t step_ = 0;
  Rng rng_;
};

}  // namespace vlac
