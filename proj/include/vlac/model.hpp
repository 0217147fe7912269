// The ladder model: a stack of stochastic layers where each layer owns a
// latent z with either a fixed standard-normal prior (K=1) or a learnable
// Gaussian-mixture prior over K components selected by a categorical y.
// With every K=1 the model is a plain variational ladder autoencoder; with
// a single layer and K>1 it is the Gaussian-mixture deep generative model
// baseline. Encoder and decoder blocks are small relu MLPs; multi-argument
// inputs are concatenated.
#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "vlac/distributions.hpp"
#include "vlac/tensor.hpp"

namespace vlac {

struct LayerSpec {
  int64_t d_z = 4;     // latent width
  int64_t K = 1;       // mixture components; 1 = fixed N(0,I) prior
  int64_t hidden = 64; // width of this layer's encoder/decoder blocks
};

struct ModelConfig {
  std::vector<LayerSpec> layers;  // layers[0] is layer 1 (closest to x)
  int64_t x_dim = 0;
  double sigma_x = 0.1;  // fixed likelihood stddev
  uint64_t seed = 0;

  int L() const { return static_cast<int>(layers.size()); }
  void validate() const;
};

// Single-layer mixture model matching the ladder's per-layer sub-networks.
ModelConfig gm_dgm_config(int64_t x_dim, int64_t K = 50, int64_t d_z = 4, int64_t hidden = 64);

// ---- parameters ---------------------------------------------------------

// Named dense arrays in a stable creation order (the checkpoint and
// optimiser-state layout follow this order).
class ParamStore {
 public:
  Array& create(const std::string& name, Array a);
  bool has(const std::string& name) const { return map_.count(name) != 0; }
  Array& at(const std::string& name);
  const Array& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  int64_t total_size() const;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Array> map_;
};

// Fresh parameters: weights N(0, 1/fan_in), biases zero, mixture means
// N(0,1), mixture raw stddevs chosen so softplus(raw) = 1. Deterministic in
// config.seed.
ParamStore init_params(const ModelConfig& config);

// Binds parameters into one graph as leaves, one leaf per name per graph.
class Binder {
 public:
  Binder(Graph& g, const ParamStore& params, bool requires_grad = true)
      : graph_(&g), params_(&params), requires_grad_(requires_grad) {}
  Tensor operator()(const std::string& name);
  // Route `name` to an existing node of the same graph and shape instead of
  // the stored value; lets finite-difference checks treat one parameter as
  // the variable.
  void override_param(const std::string& name, const Tensor& t);
  Graph& graph() { return *graph_; }
  // name -> node id for every parameter bound so far
  const std::unordered_map<std::string, int>& bound() const { return bound_; }

 private:
  Graph* graph_;
  const ParamStore* params_;
  bool requires_grad_;
  std::unordered_map<std::string, int> bound_;
};

// Parameter-name scheme, shared by the model, the optimiser state, and
// checkpoints. Layers are 1-based.
namespace names {
std::string g(int layer);       // encoder trunk block of layer l
std::string head(int layer);    // categorical-posterior head (K>1 layers)
std::string musig(int layer);   // Gaussian-posterior head
std::string f(int layer);       // decoder block of layer l
std::string f0();               // final decoder projection
std::string prior(int layer);   // mixture prior of layer l (K>1)
}  // namespace names

// Network blocks over bound parameters. apply_mlp3 is the 2-hidden-layer
// relu block used for every f and g; apply_head is the 1-hidden-layer
// categorical head; apply_linear a bare affine map.
Tensor apply_linear(Binder& params, const std::string& prefix, const Tensor& x);
Tensor apply_mlp3(Binder& params, const std::string& prefix, const Tensor& x);
Tensor apply_head(Binder& params, const std::string& prefix, const Tensor& x);

// ---- noise injection ------------------------------------------------------

// Every stochastic draw the model makes is pulled from one of these, so
// tests can pin noise exactly and training noise is one reproducible stream.
struct NoiseSource {
  virtual ~NoiseSource() = default;
  virtual Array normal(const Shape& s) = 0;
  virtual Array uniform(const Shape& s) = 0;
};

class RngNoise final : public NoiseSource {
 public:
  explicit RngNoise(Rng& rng) : rng_(&rng) {}
  Array normal(const Shape& s) override { return Array::normal(s, *rng_); }
  Array uniform(const Shape& s) override { return Array::uniform(s, *rng_); }

 private:
  Rng* rng_;
};

// Serves pre-recorded arrays in request order; shapes must match exactly.
class FixedNoise final : public NoiseSource {
 public:
  void push_normal(Array a) { normals_.push_back(std::move(a)); }
  void push_uniform(Array a) { uniforms_.push_back(std::move(a)); }
  Array normal(const Shape& s) override;
  Array uniform(const Shape& s) override;
  bool exhausted() const { return normals_.empty() && uniforms_.empty(); }

 private:
  std::deque<Array> normals_, uniforms_;
};

// ---- encode / decode ------------------------------------------------------

struct EncodeOptions {
  double tau = 1.0;
  // feed the hard one-hot forward while keeping the relaxed gradient
  bool straight_through = false;
  // layer (1-based) -> fixed one-hot y ([K] or [B,K]); skips that layer's
  // uniform draw entirely (used by the exact-marginalisation oracle)
  std::map<int, Array> forced_y;
};

struct LayerState {
  Tensor h;       // [B, hidden] deterministic trunk state
  Tensor logits;  // [B, K] categorical posterior logits (K>1 only)
  Tensor y;       // [B, K] sample fed downstream (relaxed, ST, or forced)
  Tensor y_hard;  // [B, K] constant one-hot (K>1 only)
  DiagGaussian q; // z posterior
  Tensor z;       // [B, d_z] reparameterised sample
};

struct LatentState {
  std::vector<LayerState> layers;  // layers[l-1] is layer l
  std::vector<Tensor> z() const;
};

// Draw order per layer l = 1..L: one uniform [B,K_l] when K_l>1 and the
// layer's y is not forced, then one normal [B,d_z_l]. This order is part of
// the reproducibility contract.
LatentState encode(const ModelConfig& config, Binder& params, const Tensor& x,
                   NoiseSource& noise, const EncodeOptions& opts = {});

// Mean of the fixed-variance likelihood, [B, x_dim]; deterministic in z.
Tensor decode(const ModelConfig& config, Binder& params, const std::vector<Tensor>& z);

// decode on plain values, no gradients.
Array decode_values(const ModelConfig& config, const ParamStore& params,
                    const std::vector<Array>& z);

// ---- classification ---------------------------------------------------------

struct LayerLogits {
  int layer;     // 1-based
  Array logits;  // [B, K_layer]
};

// Categorical posterior logits for every K>1 layer. Deterministic: where the
// trunk would consume a sampled y, the posterior mean (softmax probabilities)
// is used instead. Predictions are per-row argmax + 1.
std::vector<LayerLogits> classify(const ModelConfig& config, const ParamStore& params,
                                  const Array& x);

std::vector<int> argmax_rows(const Array& logits);  // 1-based labels

// ---- generation ---------------------------------------------------------------

// One z draw per layer from the priors: N(0,I) when K=1, otherwise the
// mixture marginal (uniform component, then its Gaussian).
std::vector<Array> sample_prior_latents(const ModelConfig& config, const ParamStore& params,
                                        Rng& rng);

// Redraw layer `layer` from component `component` (1-based), keep all other
// layers at `fixed`, decode. Returns the image mean [x_dim].
Array generate_conditional(const ModelConfig& config, const ParamStore& params, int layer,
                           int component, const std::vector<Array>& fixed, Rng& rng);

// As above but layer `layer` is redrawn from its mixture marginal.
Array generate_marginal_resample(const ModelConfig& config, const ParamStore& params, int layer,
                                 const std::vector<Array>& base, Rng& rng);

// ---- single-layer mixture baseline ------------------------------------------

struct GmDgmForward {
  LatentState latents;
  Tensor x_mean;
};

// The L=1 special case under the same contract (shared encode/decode).
GmDgmForward gm_dgm_forward(const ModelConfig& config, Binder& params, const Tensor& x,
                            NoiseSource& noise, const EncodeOptions& opts = {});

}  // namespace vlac
