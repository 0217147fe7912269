#include "vlac/model.hpp"

#include <cmath>
#include <stdexcept>

namespace vlac {

void ModelConfig::validate() const {
  if (layers.empty()) throw std::invalid_argument("model config: need at least one layer");
  for (const LayerSpec& l : layers)
    if (l.d_z < 1 || l.K < 1 || l.hidden < 1)
      throw std::invalid_argument("model config: layer extents must be positive");
  if (x_dim < 1) throw std::invalid_argument("model config: x_dim must be positive");
  if (!(sigma_x > 0)) throw std::invalid_argument("model config: sigma_x must be positive");
}

ModelConfig gm_dgm_config(int64_t x_dim, int64_t K, int64_t d_z, int64_t hidden) {
  ModelConfig mc;
  mc.layers = {LayerSpec{d_z, K, hidden}};
  mc.x_dim = x_dim;
  return mc;
}

// ---- parameters -----------------------------------------------------------

Array& ParamStore::create(const std::string& name, Array a) {
  if (has(name)) throw std::logic_error("parameter '" + name + "' already exists");
  order_.push_back(name);
  return map_.emplace(name, std::move(a)).first->second;
}

Array& ParamStore::at(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

const Array& ParamStore::at(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& name : order_) n += at(name).size();
  return n;
}

namespace {

// raw value whose softplus is exactly 1
const double kRawUnitSigma = std::log(std::exp(1.0) - 1.0);

// dimension of h_{l-1}, the input of layer l's trunk block and pi head
int64_t below_dim(const ModelConfig& c, int l) {
  return l == 1 ? c.x_dim : c.layers[l - 2].hidden;
}

int64_t trunk_in_dim(const ModelConfig& c, int l) {
  const int64_t y_extra = (l > 1 && c.layers[l - 2].K > 1) ? c.layers[l - 2].K : 0;
  return below_dim(c, l) + y_extra;
}

int64_t musig_in_dim(const ModelConfig& c, int l) {
  const LayerSpec& s = c.layers[l - 1];
  return s.hidden + (s.K > 1 ? s.K : 0);
}

int64_t dec_in_dim(const ModelConfig& c, int l) {
  const LayerSpec& s = c.layers[l - 1];
  return s.d_z + (l < c.L() ? c.layers[l].hidden : 0);
}

void create_linear(ParamStore& ps, Rng& rng, const std::string& prefix, int64_t in, int64_t out) {
  Array w = Array::normal({in, out}, rng);
  const double scale = std::sqrt(1.0 / static_cast<double>(in));
  for (double& v : w.data) v *= scale;
  ps.create(prefix + ".w", std::move(w));
  ps.create(prefix + ".b", Array::zeros({out}));
}

void create_mlp3(ParamStore& ps, Rng& rng, const std::string& prefix, int64_t in, int64_t hidden,
                 int64_t out) {
  auto layer = [&](const std::string& idx, int64_t i, int64_t o) {
    Array w = Array::normal({i, o}, rng);
    const double scale = std::sqrt(1.0 / static_cast<double>(i));
    for (double& v : w.data) v *= scale;
    ps.create(prefix + ".w" + idx, std::move(w));
    ps.create(prefix + ".b" + idx, Array::zeros({o}));
  };
  layer("0", in, hidden);
  layer("1", hidden, hidden);
  layer("2", hidden, out);
}

void create_head(ParamStore& ps, Rng& rng, const std::string& prefix, int64_t in, int64_t hidden,
                 int64_t out) {
  auto layer = [&](const std::string& idx, int64_t i, int64_t o) {
    Array w = Array::normal({i, o}, rng);
    const double scale = std::sqrt(1.0 / static_cast<double>(i));
    for (double& v : w.data) v *= scale;
    ps.create(prefix + ".w" + idx, std::move(w));
    ps.create(prefix + ".b" + idx, Array::zeros({o}));
  };
  layer("0", in, hidden);
  layer("1", hidden, out);
}

Tensor linear(Binder& p, const std::string& prefix, const Tensor& x) {
  return add(matmul(x, p(prefix + ".w")), p(prefix + ".b"));
}

Tensor mlp3(Binder& p, const std::string& prefix, const Tensor& x) {
  Tensor h = relu(add(matmul(x, p(prefix + ".w0")), p(prefix + ".b0")));
  h = relu(add(matmul(h, p(prefix + ".w1")), p(prefix + ".b1")));
  return relu(add(matmul(h, p(prefix + ".w2")), p(prefix + ".b2")));
}

Tensor head(Binder& p, const std::string& prefix, const Tensor& x) {
  Tensor h = relu(add(matmul(x, p(prefix + ".w0")), p(prefix + ".b0")));
  return add(matmul(h, p(prefix + ".w1")), p(prefix + ".b1"));
}

std::string gname(int l) { return "enc.g" + std::to_string(l); }
std::string headname(int l) { return "enc.head" + std::to_string(l); }
std::string musigname(int l) { return "enc.musig" + std::to_string(l); }
std::string fname(int l) { return "dec.f" + std::to_string(l); }
std::string priorname(int l) { return "prior.l" + std::to_string(l); }

}  // namespace

namespace names {
std::string g(int layer) { return gname(layer); }
std::string head(int layer) { return headname(layer); }
std::string musig(int layer) { return musigname(layer); }
std::string f(int layer) { return fname(layer); }
std::string f0() { return "dec.f0"; }
std::string prior(int layer) { return priorname(layer); }
}  // namespace names

Tensor apply_linear(Binder& params, const std::string& prefix, const Tensor& x) {
  return linear(params, prefix, x);
}
Tensor apply_mlp3(Binder& params, const std::string& prefix, const Tensor& x) {
  return mlp3(params, prefix, x);
}
Tensor apply_head(Binder& params, const std::string& prefix, const Tensor& x) {
  return head(params, prefix, x);
}

ParamStore init_params(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  ParamStore ps;
  for (int l = 1; l <= config.L(); ++l) {
    const LayerSpec& s = config.layers[l - 1];
    create_mlp3(ps, rng, gname(l), trunk_in_dim(config, l), s.hidden, s.hidden);
    if (s.K > 1) create_head(ps, rng, headname(l), below_dim(config, l), s.hidden, s.K);
    create_linear(ps, rng, musigname(l), musig_in_dim(config, l), 2 * s.d_z);
  }
  for (int l = config.L(); l >= 1; --l) {
    const LayerSpec& s = config.layers[l - 1];
    create_mlp3(ps, rng, fname(l), dec_in_dim(config, l), s.hidden, s.hidden);
  }
  create_linear(ps, rng, "dec.f0", config.layers[0].hidden, config.x_dim);
  for (int l = 1; l <= config.L(); ++l) {
    const LayerSpec& s = config.layers[l - 1];
    if (s.K > 1) {
      ps.create(priorname(l) + ".mu", Array::normal({s.K, s.d_z}, rng));
      ps.create(priorname(l) + ".raw_sigma", Array::full({s.K, s.d_z}, kRawUnitSigma));
    }
  }
  return ps;
}

Tensor Binder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return graph_->handle(it->second);
  Tensor t = graph_->leaf(params_->at(name), requires_grad_);
  bound_.emplace(name, t.node());
  return t;
}

void Binder::override_param(const std::string& name, const Tensor& t) {
  const Array& stored = params_->at(name);
  if (!t.in_graph() || t.graph() != graph_)
    throw std::invalid_argument("override for '" + name + "' must live in the binder's graph");
  if (t.shape() != stored.shape)
    throw std::invalid_argument("override for '" + name + "' has shape " + shape_str(t.shape()) +
                                ", parameter is " + shape_str(stored.shape));
  bound_[name] = t.node();
}

// ---- noise ------------------------------------------------------------------

Array FixedNoise::normal(const Shape& s) {
  if (normals_.empty()) throw std::logic_error("fixed noise: normal stream exhausted");
  Array a = std::move(normals_.front());
  normals_.pop_front();
  if (a.shape != s)
    throw std::logic_error("fixed noise: normal shape " + shape_str(a.shape) +
                           " requested as " + shape_str(s));
  return a;
}

Array FixedNoise::uniform(const Shape& s) {
  if (uniforms_.empty()) throw std::logic_error("fixed noise: uniform stream exhausted");
  Array a = std::move(uniforms_.front());
  uniforms_.pop_front();
  if (a.shape != s)
    throw std::logic_error("fixed noise: uniform shape " + shape_str(a.shape) +
                           " requested as " + shape_str(s));
  return a;
}

// ---- encode / decode ----------------------------------------------------------

std::vector<Tensor> LatentState::z() const {
  std::vector<Tensor> out;
  out.reserve(layers.size());
  for (const LayerState& l : layers) out.push_back(l.z);
  return out;
}

namespace {

// forced one-hot [K] or [B,K] -> validated [B,K] values
Array broadcast_forced(const Array& y, int64_t batch, int64_t k, int layer) {
  const std::string where = "forced y for layer " + std::to_string(layer);
  Array out = Array::zeros({batch, k});
  const bool per_row = y.shape.size() == 2;
  if (per_row) {
    if (y.shape != Shape{batch, k})
      throw std::invalid_argument(where + ": expected " + shape_str({batch, k}) + ", got " +
                                  shape_str(y.shape));
  } else if (y.shape != Shape{k}) {
    throw std::invalid_argument(where + ": expected [" + std::to_string(k) + "], got " +
                                shape_str(y.shape));
  }
  for (int64_t r = 0; r < batch; ++r) {
    double row_sum = 0;
    for (int64_t i = 0; i < k; ++i) {
      const double v = per_row ? y.data[r * k + i] : y.data[i];
      if (v != 0.0 && v != 1.0) throw std::invalid_argument(where + ": entries must be 0 or 1");
      out.data[r * k + i] = v;
      row_sum += v;
    }
    if (row_sum != 1.0) throw std::invalid_argument(where + ": rows must be one-hot");
  }
  return out;
}

Tensor as_batch(Graph& g, const Tensor& x, int64_t x_dim) {
  Tensor in = g.lift(x);
  if (in.rank() == 1) in = reshape(in, {1, -1});
  if (in.rank() != 2 || in.shape()[1] != x_dim)
    throw std::invalid_argument("encode: x must be [B," + std::to_string(x_dim) + "], got " +
                                shape_str(x.shape()));
  return in;
}

}  // namespace

LatentState encode(const ModelConfig& config, Binder& params, const Tensor& x,
                   NoiseSource& noise, const EncodeOptions& opts) {
  config.validate();
  Graph& g = params.graph();
  Tensor h = as_batch(g, x, config.x_dim);
  const int64_t batch = h.shape()[0];

  LatentState state;
  state.layers.resize(config.L());
  for (int l = 1; l <= config.L(); ++l) {
    const LayerSpec& spec = config.layers[l - 1];
    LayerState& st = state.layers[l - 1];

    if (spec.K > 1) {
      st.logits = head(params, headname(l), h);
      auto forced = opts.forced_y.find(l);
      if (forced != opts.forced_y.end()) {
        Array y = broadcast_forced(forced->second, batch, spec.K, l);
        st.y_hard = g.lift(Tensor::constant(y));
        st.y = st.y_hard;
      } else {
        const Array u = noise.uniform({batch, spec.K});
        ConcreteSample cs = concrete_sample(st.logits, opts.tau, g.lift(Tensor::constant(u)));
        st.y_hard = cs.hard;
        st.y = opts.straight_through ? straight_through(cs) : cs.relaxed;
      }
    }

    Tensor trunk_in = h;
    if (l > 1 && config.layers[l - 2].K > 1)
      trunk_in = concat(h, state.layers[l - 2].y, 1);
    st.h = mlp3(params, gname(l), trunk_in);

    Tensor musig_in = spec.K > 1 ? concat(st.h, st.y, 1) : st.h;
    Tensor musig = linear(params, musigname(l), musig_in);
    Tensor mu = narrow(musig, 1, 0, spec.d_z);
    Tensor raw = narrow(musig, 1, spec.d_z, spec.d_z);
    st.q = gaussian_from_raw(mu, raw);

    const Array eps = noise.normal({batch, spec.d_z});
    st.z = gaussian_rsample(st.q, g.lift(Tensor::constant(eps)));
    h = st.h;
  }
  return state;
}

Tensor decode(const ModelConfig& config, Binder& params, const std::vector<Tensor>& z) {
  config.validate();
  if (static_cast<int>(z.size()) != config.L())
    throw std::invalid_argument("decode: expected " + std::to_string(config.L()) +
                                " latents, got " + std::to_string(z.size()));
  Graph& g = params.graph();
  Tensor zt;  // running z-tilde from the layer above
  for (int l = config.L(); l >= 1; --l) {
    if (!z[l - 1].defined())
      throw std::invalid_argument("decode: missing latent for layer " + std::to_string(l));
    Tensor zl = g.lift(z[l - 1]);
    if (zl.rank() == 1) zl = reshape(zl, {1, -1});
    if (zl.rank() != 2 || zl.shape()[1] != config.layers[l - 1].d_z)
      throw std::invalid_argument("decode: layer " + std::to_string(l) + " latent must be [B," +
                                  std::to_string(config.layers[l - 1].d_z) + "], got " +
                                  shape_str(z[l - 1].shape()));
    Tensor in = l == config.L() ? zl : concat(zl, zt, 1);
    zt = mlp3(params, fname(l), in);
  }
  return sigmoid(linear(params, "dec.f0", zt));
}

Array decode_values(const ModelConfig& config, const ParamStore& params,
                    const std::vector<Array>& z) {
  Graph g;
  Binder binder(g, params, /*requires_grad=*/false);
  std::vector<Tensor> zs;
  zs.reserve(z.size());
  for (const Array& a : z) zs.push_back(g.lift(Tensor::constant(a)));
  Tensor mean = decode(config, binder, zs);
  if (mean.shape()[0] == 1) return Array({config.x_dim}, mean.values());
  return mean.to_array();
}

// ---- classification -----------------------------------------------------------

std::vector<LayerLogits> classify(const ModelConfig& config, const ParamStore& params,
                                  const Array& x) {
  config.validate();
  Graph g;
  Binder binder(g, params, /*requires_grad=*/false);
  Tensor h = as_batch(g, g.lift(Tensor::constant(x)), config.x_dim);

  std::vector<LayerLogits> out;
  Tensor prev_expected_y;  // posterior mean of y_{l-1}, when that layer has K>1
  for (int l = 1; l <= config.L(); ++l) {
    const LayerSpec& spec = config.layers[l - 1];
    Tensor expected_y;
    if (spec.K > 1) {
      Tensor logits = head(binder, headname(l), h);
      out.push_back({l, logits.to_array()});
      expected_y = softmax(logits, -1);
    }
    Tensor trunk_in = h;
    if (l > 1 && config.layers[l - 2].K > 1) trunk_in = concat(h, prev_expected_y, 1);
    h = mlp3(binder, gname(l), trunk_in);
    prev_expected_y = expected_y;
  }
  return out;
}

std::vector<int> argmax_rows(const Array& logits) {
  if (logits.shape.size() != 2)
    throw std::invalid_argument("argmax_rows: expected [B,K], got " + shape_str(logits.shape));
  const int64_t rows = logits.shape[0], k = logits.shape[1];
  std::vector<int> out(rows);
  for (int64_t r = 0; r < rows; ++r) {
    int best = 0;
    for (int i = 1; i < k; ++i)
      if (logits.data[r * k + i] > logits.data[r * k + best]) best = i;
    out[r] = best + 1;
  }
  return out;
}

// ---- generation ---------------------------------------------------------------

namespace {

Array prior_sigma_values(const Array& raw) {
  Array s = raw;
  for (double& v : s.data)
    v = (std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v)))) + 1e-6;
  return s;
}

}  // namespace

std::vector<Array> sample_prior_latents(const ModelConfig& config, const ParamStore& params,
                                        Rng& rng) {
  config.validate();
  std::vector<Array> z;
  z.reserve(config.L());
  for (int l = 1; l <= config.L(); ++l) {
    const LayerSpec& spec = config.layers[l - 1];
    if (spec.K > 1) {
      const Array& mu = params.at(priorname(l) + ".mu");
      const Array sigma = prior_sigma_values(params.at(priorname(l) + ".raw_sigma"));
      z.push_back(mixture_marginal_sample(mu, sigma, rng));
    } else {
      z.push_back(Array::normal({spec.d_z}, rng));
    }
  }
  return z;
}

Array generate_conditional(const ModelConfig& config, const ParamStore& params, int layer,
                           int component, const std::vector<Array>& fixed, Rng& rng) {
  config.validate();
  if (layer < 1 || layer > config.L())
    throw std::invalid_argument("generate_conditional: layer out of range");
  const LayerSpec& spec = config.layers[layer - 1];
  if (spec.K <= 1)
    throw std::invalid_argument("generate_conditional: layer " + std::to_string(layer) +
                                " has a single component");
  if (component < 1 || component > spec.K)
    throw std::invalid_argument("generate_conditional: component " + std::to_string(component) +
                                " outside 1.." + std::to_string(spec.K));
  if (static_cast<int>(fixed.size()) != config.L())
    throw std::invalid_argument("generate_conditional: need one latent per layer");
  const Array& mu = params.at(priorname(layer) + ".mu");
  const Array sigma = prior_sigma_values(params.at(priorname(layer) + ".raw_sigma"));
  const int64_t d = spec.d_z;
  Array z = Array::zeros({d});
  for (int64_t i = 0; i < d; ++i)
    z.data[i] = mu.data[(component - 1) * d + i] + sigma.data[(component - 1) * d + i] * rng.normal();
  std::vector<Array> zs = fixed;
  zs[layer - 1] = std::move(z);
  return decode_values(config, params, zs);
}

Array generate_marginal_resample(const ModelConfig& config, const ParamStore& params, int layer,
                                 const std::vector<Array>& base, Rng& rng) {
  config.validate();
  if (layer < 1 || layer > config.L())
    throw std::invalid_argument("generate_marginal_resample: layer out of range");
  if (static_cast<int>(base.size()) != config.L())
    throw std::invalid_argument("generate_marginal_resample: need one latent per layer");
  const LayerSpec& spec = config.layers[layer - 1];
  std::vector<Array> zs = base;
  if (spec.K > 1) {
    const Array& mu = params.at(priorname(layer) + ".mu");
    const Array sigma = prior_sigma_values(params.at(priorname(layer) + ".raw_sigma"));
    zs[layer - 1] = mixture_marginal_sample(mu, sigma, rng);
  } else {
    zs[layer - 1] = Array::normal({spec.d_z}, rng);
  }
  return decode_values(config, params, zs);
}

GmDgmForward gm_dgm_forward(const ModelConfig& config, Binder& params, const Tensor& x,
                            NoiseSource& noise, const EncodeOptions& opts) {
  if (config.L() != 1)
    throw std::invalid_argument("gm_dgm_forward: the baseline is single-layer, config has " +
                                std::to_string(config.L()));
  GmDgmForward fwd;
  fwd.latents = encode(config, params, x, noise, opts);
  fwd.x_mean = decode(config, params, fwd.latents.z());
  return fwd;
}

}  // namespace vlac
