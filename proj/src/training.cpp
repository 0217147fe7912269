#include "vlac/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "vlac/checkpoint.hpp"
#include "vlac/evaluation.hpp"

namespace vlac {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be positive");
  if (steps < 0) throw std::invalid_argument("train config: steps must be non-negative");
  if (lr < 0) throw std::invalid_argument("train config: learning rate must be non-negative");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw std::invalid_argument("train config: moment decays must lie in [0,1)");
  if (!(eps > 0)) throw std::invalid_argument("train config: eps must be positive");
  if (!(tau_end > 0) || !(tau_start > 0))
    throw std::invalid_argument("train config: temperatures must be positive");
  if (tau_end > tau_start)
    throw std::invalid_argument("train config: tau_end must not exceed tau_start");
  if (anneal_steps < 0 || eval_every < 0 || checkpoint_every < 0)
    throw std::invalid_argument("train config: cadences must be non-negative");
}

double tau_at(const TrainConfig& tc, int64_t step) {
  const int64_t anneal = tc.anneal_steps > 0 ? tc.anneal_steps : std::max<int64_t>(1, tc.steps / 2);
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(anneal));
  return tc.tau_start + (tc.tau_end - tc.tau_start) * frac;
}

ElboValues breakdown_values(const ElboBreakdown& eb) {
  ElboValues v;
  v.total = eb.total.value();
  v.reconstruction = eb.reconstruction.value();
  for (const Tensor& t : eb.kl_z) v.kl_z.push_back(t.value());
  for (const Tensor& t : eb.kl_y) v.kl_y.push_back(t.value());
  return v;
}

namespace {

void check_term(const Tensor& t, const std::string& term) {
  if (!std::isfinite(t.value()))
    throw std::runtime_error("non-finite " + term + " in the bound");
}

Tensor lift_batch(Graph& g, const Tensor& x, int64_t x_dim) {
  Tensor xb = g.lift(x);
  if (xb.rank() == 1) xb = reshape(xb, {1, -1});
  if (xb.rank() != 2 || xb.shape()[1] != x_dim)
    throw std::invalid_argument("bound: x must be [B," + std::to_string(x_dim) + "], got " +
                                shape_str(x.shape()));
  return xb;
}

Tensor recon_rows(const ModelConfig& config, Graph& g, const Tensor& x_mean, const Tensor& xb) {
  Tensor sd = g.lift(Tensor::constant(Array::full(x_mean.shape(), config.sigma_x)));
  return gaussian_log_prob_rows(DiagGaussian{x_mean, sd}, xb);
}

// Closed-form KL of the layer's z posterior against its prior: N(0,I) at
// K=1, otherwise the mixture component parameters blended by the layer's y
// (means directly, stddevs on the raw pre-softplus scale).
Tensor prior_kl_rows(const ModelConfig& config, Binder& params, const LayerState& st, int l,
                     int64_t batch) {
  const LayerSpec& spec = config.layers[l - 1];
  if (spec.K > 1) {
    Tensor mu_p = matmul(st.y, params(names::prior(l) + ".mu"));
    Tensor raw_p = matmul(st.y, params(names::prior(l) + ".raw_sigma"));
    return kl_gaussian_gaussian_rows(st.q, gaussian_from_raw(mu_p, raw_p));
  }
  Graph& g = params.graph();
  Tensor mu = g.lift(Tensor::constant(Array::zeros({batch, spec.d_z})));
  Tensor sd = g.lift(Tensor::constant(Array::full({batch, spec.d_z}, 1.0)));
  return kl_gaussian_gaussian_rows(st.q, DiagGaussian{mu, sd});
}

}  // namespace

ElboBreakdown elbo(const ModelConfig& config, Binder& params, const Tensor& x,
                   NoiseSource& noise, const EncodeOptions& opts) {
  config.validate();
  Graph& g = params.graph();

  ElboBreakdown eb;
  eb.latents = encode(config, params, x, noise, opts);
  eb.x_mean = decode(config, params, eb.latents.z());
  const int64_t batch = eb.x_mean.shape()[0];

  Tensor xb = lift_batch(g, x, config.x_dim);
  eb.reconstruction = mean(recon_rows(config, g, eb.x_mean, xb));
  check_term(eb.reconstruction, "reconstruction");

  Tensor total = eb.reconstruction;
  for (int l = 1; l <= config.L(); ++l) {
    Tensor kl = mean(prior_kl_rows(config, params, eb.latents.layers[l - 1], l, batch));
    check_term(kl, "kl_z layer " + std::to_string(l));
    eb.kl_z.push_back(kl);
    total = sub(total, kl);
  }
  for (int l = 1; l <= config.L(); ++l) {
    if (config.layers[l - 1].K > 1) {
      Tensor kl = mean(kl_categorical_uniform_rows(eb.latents.layers[l - 1].logits));
      check_term(kl, "kl_y layer " + std::to_string(l));
      eb.kl_y.push_back(kl);
      total = sub(total, kl);
    } else {
      eb.kl_y.push_back(g.lift(Tensor::scalar(0.0)));
    }
  }
  eb.total = total;
  check_term(eb.total, "total");
  return eb;
}

ElboBreakdown vlae_elbo(const ModelConfig& config, Binder& params, const Tensor& x,
                        NoiseSource& noise) {
  config.validate();
  for (const LayerSpec& s : config.layers)
    if (s.K != 1) throw std::invalid_argument("vlae bound: every layer must have K=1");
  Graph& g = params.graph();

  ElboBreakdown eb;
  eb.latents.layers.resize(config.L());
  Tensor h = lift_batch(g, x, config.x_dim);
  const int64_t batch = h.shape()[0];
  for (int l = 1; l <= config.L(); ++l) {
    const LayerSpec& spec = config.layers[l - 1];
    LayerState& st = eb.latents.layers[l - 1];
    st.h = apply_mlp3(params, names::g(l), h);
    Tensor musig = apply_linear(params, names::musig(l), st.h);
    st.q = gaussian_from_raw(narrow(musig, 1, 0, spec.d_z), narrow(musig, 1, spec.d_z, spec.d_z));
    st.z = gaussian_rsample(st.q, g.lift(Tensor::constant(noise.normal({batch, spec.d_z}))));
    h = st.h;
  }
  eb.x_mean = decode(config, params, eb.latents.z());

  Tensor xb = lift_batch(g, x, config.x_dim);
  eb.reconstruction = mean(recon_rows(config, g, eb.x_mean, xb));
  Tensor total = eb.reconstruction;
  for (int l = 1; l <= config.L(); ++l) {
    Tensor kl = mean(prior_kl_rows(config, params, eb.latents.layers[l - 1], l, batch));
    eb.kl_z.push_back(kl);
    total = sub(total, kl);
  }
  for (int l = 1; l <= config.L(); ++l) eb.kl_y.push_back(g.lift(Tensor::scalar(0.0)));
  eb.total = total;
  check_term(eb.total, "total");
  return eb;
}

double exact_elbo(const ModelConfig& config, const ParamStore& params, const Array& x,
                  const std::vector<Array>& z_noise) {
  config.validate();
  if (static_cast<int>(z_noise.size()) != config.L())
    throw std::invalid_argument("exact bound: need one z-noise array per layer");

  std::vector<int> cat;  // 1-based layers with K>1
  int64_t combos = 1;
  for (int l = 1; l <= config.L(); ++l) {
    if (config.layers[l - 1].K > 1) {
      cat.push_back(l);
      combos *= config.layers[l - 1].K;
      if (combos > 256)
        throw std::invalid_argument("exact bound: more than 256 hard combinations");
    }
  }

  std::vector<double> acc;
  std::vector<int64_t> pick(cat.size(), 0);
  for (int64_t b = 0; b < combos; ++b) {
    Graph g;
    Binder binder(g, params, /*requires_grad=*/false);
    FixedNoise noise;
    for (const Array& zn : z_noise) noise.push_normal(zn);
    EncodeOptions opts;
    for (size_t i = 0; i < cat.size(); ++i) {
      Array onehot = Array::zeros({config.layers[cat[i] - 1].K});
      onehot.data[pick[i]] = 1.0;
      opts.forced_y[cat[i]] = std::move(onehot);
    }

    LatentState st = encode(config, binder, Tensor::constant(x), noise, opts);
    Tensor x_mean = decode(config, binder, st.z());
    const int64_t rows = x_mean.shape()[0];
    if (acc.empty()) acc.assign(static_cast<size_t>(rows), 0.0);

    Tensor xb = lift_batch(g, Tensor::constant(x), config.x_dim);
    std::vector<double> val = recon_rows(config, g, x_mean, xb).values();
    for (int l = 1; l <= config.L(); ++l) {
      const std::vector<double> kl =
          prior_kl_rows(config, binder, st.layers[l - 1], l, rows).values();
      for (int64_t r = 0; r < rows; ++r) val[r] -= kl[r];
    }

    // branch weight  Π q(y_l | x)  and the categorical divergence terms
    std::vector<double> w(static_cast<size_t>(rows), 1.0);
    for (size_t i = 0; i < cat.size(); ++i) {
      const int64_t K = config.layers[cat[i] - 1].K;
      const std::vector<double> lv = st.layers[cat[i] - 1].logits.values();
      for (int64_t r = 0; r < rows; ++r) {
        double mx = lv[r * K];
        for (int64_t k = 1; k < K; ++k) mx = std::max(mx, lv[r * K + k]);
        double sum = 0;
        for (int64_t k = 0; k < K; ++k) sum += std::exp(lv[r * K + k] - mx);
        const double q = std::exp(lv[r * K + pick[i]] - mx) / sum;
        w[r] *= q;
        val[r] -= std::log(q * static_cast<double>(K));
      }
    }
    for (int64_t r = 0; r < rows; ++r)
      if (w[r] > 0.0) acc[r] += w[r] * val[r];

    for (int i = static_cast<int>(pick.size()) - 1; i >= 0; --i) {
      if (++pick[i] < config.layers[cat[i] - 1].K) break;
      pick[i] = 0;
    }
  }

  double total = 0;
  for (double v : acc) total += v;
  return total / static_cast<double>(acc.size());
}

// ---- optimiser ----------------------------------------------------------------

void adam_update(Array& param, const Array& grad, Array& m, Array& v, const TrainConfig& tc,
                 int64_t t) {
  const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(t));
  for (int64_t i = 0; i < param.size(); ++i) {
    const double gi = grad.data[i];
    m.data[i] = tc.beta1 * m.data[i] + (1.0 - tc.beta1) * gi;
    v.data[i] = tc.beta2 * v.data[i] + (1.0 - tc.beta2) * gi * gi;
    param.data[i] -= tc.lr * (m.data[i] / bc1) / (std::sqrt(v.data[i] / bc2) + tc.eps);
    if (tc.precision == Precision::f32)
      param.data[i] = static_cast<double>(static_cast<float>(param.data[i]));
  }
}

namespace {

void quantize_store(ParamStore& ps) {
  for (const auto& name : ps.names())
    for (double& v : ps.at(name).data) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

Trainer::Trainer(ModelConfig mc, TrainConfig tc)
    : mc_(std::move(mc)), tc_(std::move(tc)), params_(init_params(mc_)), rng_(tc_.seed) {
  tc_.validate();
  if (tc_.precision == Precision::f32) quantize_store(params_);
  for (const auto& name : params_.names()) {
    m_.emplace(name, Array::zeros(params_.at(name).shape));
    v_.emplace(name, Array::zeros(params_.at(name).shape));
  }
}

ElboValues Trainer::train_step(const Array& x) {
  Graph g(tc_.precision);
  Binder binder(g, params_);
  RngNoise noise(rng_);
  EncodeOptions opts;
  opts.tau = tau_at(tc_, step_);
  opts.straight_through = tc_.straight_through;

  ElboBreakdown eb = elbo(mc_, binder, Tensor::constant(x), noise, opts);
  g.backward(negate(eb.total));

  for (const auto& name : params_.names()) {
    Array& p = params_.at(name);
    const auto it = binder.bound().find(name);
    Array grad = it == binder.bound().end() ? Array::zeros(p.shape)
                                            : g.grad(g.handle(it->second));
    for (double gi : grad.data)
      if (!std::isfinite(gi))
        throw std::runtime_error("non-finite gradient for parameter '" + name + "'");
    adam_update(p, grad, m_.at(name), v_.at(name), tc_, step_ + 1);
  }
  ++step_;
  return breakdown_values(eb);
}

void Trainer::train(const Dataset& data, const std::string& out_dir) {
  mc_.validate();
  tc_.validate();
  if (data.x_dim() != mc_.x_dim)
    throw std::invalid_argument("train: dataset dimension " + std::to_string(data.x_dim()) +
                                " does not match the model's " + std::to_string(mc_.x_dim));
  std::filesystem::create_directories(out_dir);

  const std::string metrics_path = out_dir + "/metrics.tsv";
  const bool fresh_metrics =
      !std::filesystem::exists(metrics_path) || std::filesystem::file_size(metrics_path) == 0;
  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw std::runtime_error("cannot write '" + metrics_path + "'");
  metrics << std::setprecision(17);
  if (fresh_metrics) {
    metrics << "step\ttotal\treconstruction";
    for (int l = 1; l <= mc_.L(); ++l) metrics << "\tkl_z_" << l;
    for (int l = 1; l <= mc_.L(); ++l) metrics << "\tkl_y_" << l;
    metrics << "\ttau\twall_clock_ms\n";
  }

  const int eval_layer = designated_layer(mc_);
  const std::string eval_path = out_dir + "/eval.tsv";
  auto eval_snapshot = [&](int64_t at) {
    if (eval_layer == 0) return;
    const bool fresh =
        !std::filesystem::exists(eval_path) || std::filesystem::file_size(eval_path) == 0;
    std::ofstream ef(eval_path, std::ios::app);
    if (!ef) throw std::runtime_error("cannot write '" + eval_path + "'");
    ef << std::setprecision(17);
    if (fresh) ef << "step\tlayer\tchannel\tacc_injective\tacc_many_to_one\n";
    const EvalReport rep = evaluate_model(mc_, params_, data, eval_layer);
    for (const ChannelEval& ce : rep.channels)
      ef << at << '\t' << rep.layer << '\t' << ce.channel << '\t' << ce.acc_injective << '\t'
         << ce.acc_many_to_one << '\n';
    if (!ef.good()) throw std::runtime_error("short write to '" + eval_path + "'");
  };

  while (step_ < tc_.steps) {
    const Batch batch = batch_at(data, tc_.batch_size, tc_.seed, step_);
    const double tau = tau_at(tc_, step_);
    const int64_t at = step_;
    const auto t0 = std::chrono::steady_clock::now();
    const ElboValues ev = train_step(batch.x);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    metrics << at << '\t' << ev.total << '\t' << ev.reconstruction;
    for (double v : ev.kl_z) metrics << '\t' << v;
    for (double v : ev.kl_y) metrics << '\t' << v;
    metrics << '\t' << tau << '\t' << ms << '\n';
    metrics.flush();
    if (!metrics.good()) throw std::runtime_error("short write to '" + metrics_path + "'");

    if (tc_.checkpoint_every > 0 && step_ % tc_.checkpoint_every == 0 && step_ < tc_.steps)
      save_checkpoint(out_dir + "/ckpt-" + std::to_string(step_));
    if (tc_.eval_every > 0 && step_ % tc_.eval_every == 0 && step_ < tc_.steps)
      eval_snapshot(step_);
  }

  save_checkpoint(out_dir + "/ckpt-final");
  if (tc_.steps > 0) eval_snapshot(step_);
}

void Trainer::save_checkpoint(const std::string& prefix) const {
  Checkpoint ck;
  for (const auto& name : params_.names())
    ck.put_array("param." + name, params_.at(name), tc_.precision);
  for (const auto& name : params_.names()) {
    ck.put_array("opt." + name + ".m", m_.at(name));
    ck.put_array("opt." + name + ".v", v_.at(name));
  }
  ck.put_u64("meta.step", {static_cast<uint64_t>(step_)});
  const auto st = rng_.state();
  ck.put_u64("meta.rng", {st[0], st[1], st[2], st[3]});
  ck.save(prefix);
}

void Trainer::load_checkpoint(const std::string& prefix) {
  Checkpoint ck = Checkpoint::load(prefix);
  for (const auto& name : params_.names()) {
    for (auto [dst, key] : {std::pair<Array*, std::string>{&params_.at(name), "param." + name},
                            {&m_.at(name), "opt." + name + ".m"},
                            {&v_.at(name), "opt." + name + ".v"}}) {
      if (!ck.has(key))
        throw std::runtime_error("checkpoint '" + prefix + "' lacks entry '" + key + "'");
      Array a = ck.get_array(key);
      if (a.shape != dst->shape)
        throw std::runtime_error("checkpoint entry '" + key + "' has shape " + shape_str(a.shape) +
                                 ", expected " + shape_str(dst->shape));
      *dst = std::move(a);
    }
  }
  const auto step = ck.get_u64("meta.step");
  const auto rng = ck.get_u64("meta.rng");
  if (step.size() != 1 || rng.size() != 4)
    throw std::runtime_error("checkpoint '" + prefix + "' has malformed metadata");
  step_ = static_cast<int64_t>(step[0]);
  rng_.set_state({rng[0], rng[1], rng[2], rng[3]});
}

ParamStore load_params(const ModelConfig& config, const std::string& prefix) {
  Checkpoint ck = Checkpoint::load(prefix);
  ParamStore ps = init_params(config);
  for (const auto& name : ps.names()) {
    const std::string key = "param." + name;
    if (!ck.has(key))
      throw std::runtime_error("checkpoint '" + prefix + "' lacks parameter '" + name + "'");
    Array a = ck.get_array(key);
    if (a.shape != ps.at(name).shape)
      throw std::runtime_error("checkpoint parameter '" + name + "' has shape " +
                               shape_str(a.shape) + ", expected " + shape_str(ps.at(name).shape));
    ps.at(name) = std::move(a);
  }
  return ps;
}

}  // namespace vlac
