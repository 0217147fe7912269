#include "vlac/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "vlac/divergence_suite.hpp"
#include "vlac/evaluation.hpp"
#include "vlac/grad_suite.hpp"

namespace fs = std::filesystem;

namespace vlac {

// ---- RunConfig --------------------------------------------------------------

const std::vector<std::string>& RunConfig::schema() {
  static const std::vector<std::string> keys = {
      "checkpoint",
      "data.brightnesses",
      "data.channels",
      "data.height",
      "data.hues",
      "data.jitter",
      "data.n",
      "data.path",
      "data.shapes",
      "data.thicknesses",
      "data.width",
      "generate.cols",
      "generate.rows",
      "layer",
      "mode",
      "model.layers",
      "model.seed",
      "model.sigma_x",
      "model.x_dim",
      "precision",
      "preset",
      "seed",
      "train.anneal_steps",
      "train.batch_size",
      "train.beta1",
      "train.beta2",
      "train.checkpoint_every",
      "train.eps",
      "train.eval_every",
      "train.lr",
      "train.seed",
      "train.steps",
      "train.straight_through",
      "train.tau_end",
      "train.tau_start",
  };
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& keys = schema();
  if (std::find(keys.begin(), keys.end(), key) == keys.end())
    throw std::invalid_argument("config: unknown key '" + key + "'");
  kv[key] = value;
}

static std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  RunConfig rc;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " of '" + path + "' is not key = value");
    rc.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return rc;
}

std::string RunConfig::str(const std::string& key, const std::string& fallback) const {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

int64_t RunConfig::integer(const std::string& key, int64_t fallback) const {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& v = it->second;
  char* end = nullptr;
  const long long n = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size())
    throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + v + "'");
  return n;
}

double RunConfig::real(const std::string& key, double fallback) const {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& v = it->second;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size())
    throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + v + "'");
  return x;
}

bool RunConfig::flag(const std::string& key, bool fallback) const {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

// ---- presets and effective configs ------------------------------------------

std::vector<LayerSpec> parse_layers(const std::string& text) {
  std::vector<LayerSpec> layers;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    LayerSpec spec;
    int used = 0;
    if (std::sscanf(part.c_str(), "%ld:%ld:%ld%n", &spec.d_z, &spec.K, &spec.hidden, &used) != 3 ||
        used != static_cast<int>(part.size()))
      throw std::invalid_argument("model.layers: '" + part + "' is not d_z:K:hidden");
    layers.push_back(spec);
  }
  if (layers.empty()) throw std::invalid_argument("model.layers: empty layer list");
  return layers;
}

std::string render_layers(const std::vector<LayerSpec>& layers) {
  std::string out;
  for (const auto& l : layers) {
    if (!out.empty()) out += ',';
    out += std::to_string(l.d_z) + ':' + std::to_string(l.K) + ':' + std::to_string(l.hidden);
  }
  return out;
}

ModelConfig preset_model(const std::string& name, int64_t x_dim) {
  auto ladder = [x_dim](std::initializer_list<int64_t> Ks) {
    ModelConfig mc;
    mc.x_dim = x_dim;
    for (int64_t K : Ks) mc.layers.push_back({4, K, 64});
    return mc;
  };
  if (name == "vlae") return ladder({1, 1, 1, 1});
  if (name == "vlac-kone") return ladder({1, 1, 50, 1});
  if (name == "vlac-ktwo") return ladder({1, 5, 50, 1});
  if (name == "vlac-desk") return ladder({1, 4, 4, 1});
  if (name == "gm-dgm") return gm_dgm_config(x_dim);
  throw std::invalid_argument("unknown preset '" + name +
                              "' (vlae, vlac-kone, vlac-ktwo, vlac-desk, gm-dgm)");
}

static Precision parse_precision(const std::string& v) {
  if (v == "f32") return Precision::f32;
  if (v == "f64") return Precision::f64;
  throw std::invalid_argument("precision must be f32 or f64, got '" + v + "'");
}

ModelConfig model_of(const RunConfig& rc, int64_t x_dim) {
  ModelConfig mc = preset_model(rc.str("preset", "vlac-desk"), x_dim);
  if (rc.has("model.layers")) mc.layers = parse_layers(rc.str("model.layers"));
  if (rc.has("model.x_dim")) mc.x_dim = rc.integer("model.x_dim", mc.x_dim);
  mc.sigma_x = rc.real("model.sigma_x", mc.sigma_x);
  mc.seed = static_cast<uint64_t>(rc.integer("model.seed", rc.integer("seed", 0)));
  mc.validate();
  return mc;
}

TrainConfig train_of(const RunConfig& rc) {
  TrainConfig tc;
  tc.batch_size = rc.integer("train.batch_size", tc.batch_size);
  tc.steps = rc.integer("train.steps", tc.steps);
  tc.lr = rc.real("train.lr", tc.lr);
  tc.beta1 = rc.real("train.beta1", tc.beta1);
  tc.beta2 = rc.real("train.beta2", tc.beta2);
  tc.eps = rc.real("train.eps", tc.eps);
  tc.tau_start = rc.real("train.tau_start", tc.tau_start);
  tc.tau_end = rc.real("train.tau_end", tc.tau_end);
  tc.anneal_steps = rc.integer("train.anneal_steps", tc.anneal_steps);
  tc.straight_through = rc.flag("train.straight_through", tc.straight_through);
  tc.seed = static_cast<uint64_t>(rc.integer("train.seed", rc.integer("seed", 0)));
  tc.precision = parse_precision(rc.str("precision", "f64"));
  tc.eval_every = rc.integer("train.eval_every", tc.eval_every);
  tc.checkpoint_every = rc.integer("train.checkpoint_every", tc.checkpoint_every);
  tc.validate();
  return tc;
}

FactorSpec factor_of(const RunConfig& rc) {
  FactorSpec spec;
  spec.height = static_cast<int>(rc.integer("data.height", spec.height));
  spec.width = static_cast<int>(rc.integer("data.width", spec.width));
  spec.channels = static_cast<int>(rc.integer("data.channels", spec.channels));
  spec.shapes = static_cast<int>(rc.integer("data.shapes", spec.shapes));
  spec.thicknesses = static_cast<int>(rc.integer("data.thicknesses", spec.thicknesses));
  spec.hues = static_cast<int>(rc.integer("data.hues", spec.hues));
  spec.brightnesses = static_cast<int>(rc.integer("data.brightnesses", spec.brightnesses));
  spec.jitter = rc.real("data.jitter", spec.jitter);
  return spec;
}

// ---- shared pieces ------------------------------------------------------------

static std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

static void put_factor(RunConfig& rc, const FactorSpec& s) {
  rc.set("data.height", std::to_string(s.height));
  rc.set("data.width", std::to_string(s.width));
  rc.set("data.channels", std::to_string(s.channels));
  rc.set("data.shapes", std::to_string(s.shapes));
  rc.set("data.thicknesses", std::to_string(s.thicknesses));
  rc.set("data.hues", std::to_string(s.hues));
  rc.set("data.brightnesses", std::to_string(s.brightnesses));
  rc.set("data.jitter", fmt(s.jitter));
}

static void put_model(RunConfig& rc, const ModelConfig& mc) {
  rc.set("model.layers", render_layers(mc.layers));
  rc.set("model.sigma_x", fmt(mc.sigma_x));
  rc.set("model.x_dim", std::to_string(mc.x_dim));
  rc.set("model.seed", std::to_string(mc.seed));
  if (!rc.has("preset")) rc.set("preset", "vlac-desk");
}

static void put_train(RunConfig& rc, const TrainConfig& tc) {
  rc.set("train.batch_size", std::to_string(tc.batch_size));
  rc.set("train.steps", std::to_string(tc.steps));
  rc.set("train.lr", fmt(tc.lr));
  rc.set("train.beta1", fmt(tc.beta1));
  rc.set("train.beta2", fmt(tc.beta2));
  rc.set("train.eps", fmt(tc.eps));
  rc.set("train.tau_start", fmt(tc.tau_start));
  rc.set("train.tau_end", fmt(tc.tau_end));
  rc.set("train.anneal_steps", std::to_string(tc.anneal_steps));
  rc.set("train.straight_through", tc.straight_through ? "true" : "false");
  rc.set("train.seed", std::to_string(tc.seed));
  rc.set("train.eval_every", std::to_string(tc.eval_every));
  rc.set("train.checkpoint_every", std::to_string(tc.checkpoint_every));
  rc.set("precision", tc.precision == Precision::f32 ? "f32" : "f64");
}

static void write_config(const RunConfig& rc, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::string path = out_dir + "/config.txt";
  std::ofstream out(path, std::ios::trunc);
  out << rc.echo();
  if (!out.good()) throw std::runtime_error("cannot write '" + path + "'");
}

static Array to_image(const Array& flat, int h, int w, int c) {
  return Array({h, w, c}, flat.data);
}

static std::string require(const RunConfig& rc, const std::string& key,
                           const std::string& flag_name) {
  const std::string v = rc.str(key);
  if (v.empty())
    throw std::invalid_argument(key + " (" + flag_name + ") is required for this command");
  return v;
}

// ---- synth --------------------------------------------------------------------

int cmd_synth(const RunConfig& rc, const std::string& out_dir) {
  const FactorSpec spec = factor_of(rc);
  const int64_t n = rc.integer("data.n", 8000);
  if (n <= 0) throw std::invalid_argument("data.n must be positive");
  const uint64_t seed = static_cast<uint64_t>(rc.integer("seed", 0));

  const Dataset ds = synth_generate(spec, n, seed);
  fs::create_directories(out_dir);
  const std::string data_path = out_dir + "/dataset.vlcd";
  save_raw(ds, data_path);

  std::vector<Array> tiles;
  for (int64_t i = 0; i < std::min<int64_t>(64, ds.n()); ++i)
    tiles.push_back(to_image(ds.image(i), ds.height, ds.width, ds.channels));
  write_ppm(out_dir + "/preview.ppm", contact_sheet(tiles, 8));

  RunConfig eff = rc;
  put_factor(eff, spec);
  eff.set("data.n", std::to_string(n));
  eff.set("seed", std::to_string(seed));
  eff.set("data.path", data_path);
  write_config(eff, out_dir);

  std::cout << "synth: " << n << " images (" << spec.height << "x" << spec.width << "x"
            << spec.channels << ") -> " << data_path << "\n";
  return kExitOk;
}

// ---- train ----------------------------------------------------------------------

// Highest-numbered ckpt-<step> prefix in the run directory, or ckpt-final if
// the previous run completed; empty when starting fresh.
static std::string latest_checkpoint(const std::string& dir) {
  if (fs::exists(dir + "/ckpt-final.manifest")) return dir + "/ckpt-final";
  int64_t best = -1;
  if (fs::is_directory(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      int64_t step = 0;
      int used = 0;
      if (std::sscanf(name.c_str(), "ckpt-%ld.manifest%n", &step, &used) == 1 &&
          used == static_cast<int>(name.size()))
        best = std::max(best, step);
    }
  }
  return best < 0 ? "" : dir + "/ckpt-" + std::to_string(best);
}

int cmd_train(const RunConfig& rc, const std::string& out_dir) {
  const std::string data_path = require(rc, "data.path", "--data");
  const Dataset ds = load_raw(data_path);
  const ModelConfig mc = model_of(rc, ds.x_dim());
  if (mc.x_dim != ds.x_dim())
    throw std::invalid_argument("model.x_dim " + std::to_string(mc.x_dim) +
                                " does not match the dataset's " + std::to_string(ds.x_dim()));
  const TrainConfig tc = train_of(rc);

  Trainer trainer(mc, tc);
  fs::create_directories(out_dir);
  const std::string resume = latest_checkpoint(out_dir);
  if (!resume.empty()) {
    trainer.load_checkpoint(resume);
    std::cout << "train: resuming from " << resume << " (step " << trainer.step() << ")\n";
  }

  RunConfig eff = rc;
  put_model(eff, mc);
  put_train(eff, tc);
  eff.set("data.path", data_path);
  write_config(eff, out_dir);

  trainer.train(ds, out_dir);
  std::cout << "train: reached step " << trainer.step() << "; metrics and checkpoints in "
            << out_dir << "\n";
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------------

int cmd_eval(const RunConfig& rc, const std::string& out_dir) {
  const std::string data_path = require(rc, "data.path", "--data");
  const std::string ckpt = require(rc, "checkpoint", "--checkpoint");
  const Dataset ds = load_raw(data_path);
  const ModelConfig mc = model_of(rc, ds.x_dim());
  const ParamStore params = load_params(mc, ckpt);

  int layer = static_cast<int>(rc.integer("layer", 0));
  if (layer == 0) {
    layer = designated_layer(mc);
    if (layer == 0)
      throw std::invalid_argument("no layer with K > 1 to evaluate; every latent is Gaussian");
  }
  const EvalReport report = evaluate_model(mc, params, ds, layer);

  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir + "/eval_report.txt", std::ios::trunc);
    out << report.formatted();
    if (!out.good()) throw std::runtime_error("cannot write '" + out_dir + "/eval_report.txt'");
  }
  RunConfig eff = rc;
  put_model(eff, mc);
  eff.set("data.path", data_path);
  eff.set("checkpoint", ckpt);
  eff.set("layer", std::to_string(layer));
  write_config(eff, out_dir);

  std::cout << report.formatted();
  return kExitOk;
}

// ---- generate -------------------------------------------------------------------

int cmd_generate(const RunConfig& rc, const std::string& out_dir) {
  const FactorSpec spec = factor_of(rc);
  const int h = spec.height, w = spec.width, c = spec.channels;
  const int64_t x_dim = static_cast<int64_t>(h) * w * c;
  const ModelConfig mc = model_of(rc, x_dim);
  if (mc.x_dim != x_dim)
    throw std::invalid_argument(
        "model.x_dim must equal data.height*data.width*data.channels for image output");
  const std::string ckpt = require(rc, "checkpoint", "--checkpoint");
  const ParamStore params = load_params(mc, ckpt);

  const std::string mode = rc.str("mode", "conditional");
  if (mode != "marginal" && mode != "conditional")
    throw std::invalid_argument("mode must be 'marginal' or 'conditional', got '" + mode + "'");

  int layer = static_cast<int>(rc.integer("layer", 0));
  if (layer == 0) {
    layer = designated_layer(mc);
    if (layer == 0) {
      if (mode == "conditional")
        throw std::invalid_argument("conditional generation needs a layer with K > 1");
      layer = mc.L();  // marginal redraw of the top latent
    }
  }
  if (layer < 1 || layer > mc.L())
    throw std::invalid_argument("layer " + std::to_string(layer) + " out of range 1.." +
                                std::to_string(mc.L()));

  const int64_t rows = rc.integer("generate.rows", 6);
  if (rows <= 0) throw std::invalid_argument("generate.rows must be positive");

  Rng rng(static_cast<uint64_t>(rc.integer("seed", 0)));
  std::vector<Array> tiles;
  int cols = 0;
  if (mode == "conditional") {
    const int64_t K = mc.layers[layer - 1].K;
    if (K < 2)
      throw std::invalid_argument("layer " + std::to_string(layer) +
                                  " has a single component; conditional generation needs K > 1");
    cols = static_cast<int>(K);  // one column per mixture component
    for (int64_t r = 0; r < rows; ++r) {
      const std::vector<Array> fixed = sample_prior_latents(mc, params, rng);
      for (int64_t comp = 1; comp <= K; ++comp)
        tiles.push_back(
            to_image(generate_conditional(mc, params, layer, static_cast<int>(comp), fixed, rng),
                     h, w, c));
    }
  } else {
    cols = static_cast<int>(rc.integer("generate.cols", 8));
    if (cols <= 0) throw std::invalid_argument("generate.cols must be positive");
    for (int64_t r = 0; r < rows; ++r) {
      const std::vector<Array> base = sample_prior_latents(mc, params, rng);
      for (int col = 0; col < cols; ++col)
        tiles.push_back(
            to_image(generate_marginal_resample(mc, params, layer, base, rng), h, w, c));
    }
  }

  fs::create_directories(out_dir);
  write_ppm(out_dir + "/grid.ppm", contact_sheet(tiles, cols));

  RunConfig eff = rc;
  put_model(eff, mc);
  eff.set("checkpoint", ckpt);
  eff.set("mode", mode);
  eff.set("layer", std::to_string(layer));
  eff.set("generate.rows", std::to_string(rows));
  eff.set("generate.cols", std::to_string(cols));
  eff.set("data.height", std::to_string(h));
  eff.set("data.width", std::to_string(w));
  eff.set("data.channels", std::to_string(c));
  eff.set("seed", std::to_string(rc.integer("seed", 0)));
  write_config(eff, out_dir);

  std::cout << "generate: " << rows << "x" << cols << " " << mode << " grid at layer " << layer
            << " -> " << out_dir << "/grid.ppm\n";
  return kExitOk;
}

// ---- selfcheck --------------------------------------------------------------------

int cmd_selfcheck(const std::string& inject_fault, std::ostream& log) {
  bool all_ok = true;
  auto line = [&](bool ok, const std::string& what) {
    log << (ok ? "[ok]   " : "[FAIL] ") << what << "\n";
    all_ok = all_ok && ok;
  };

  // 1. finite-difference coverage of every op
  const auto cases = gradsuite::run(7, 1e-4, inject_fault);
  if (!inject_fault.empty()) {
    const bool known = std::any_of(cases.begin(), cases.end(),
                                   [&](const auto& c) { return c.name == inject_fault; });
    if (!known) {
      std::string names;
      for (const auto& c : cases) names += (names.empty() ? "" : ", ") + c.name;
      throw std::invalid_argument("unknown gradient case '" + inject_fault + "'; known: " + names);
    }
  }
  for (const auto& c : cases)
    line(c.report.passed, "gradients " + c.name + " (max rel err " + fmt(c.report.max_rel_err) + ")");

  // 2. closed-form divergences vs Monte Carlo, and KL(q,q) = 0
  for (int i = 0; i < 3; ++i) {
    const auto g = divsuite::gaussian_case(101 + i, 60000);
    line(g.ok, "divergence " + g.name + " closed " + fmt(g.closed) + " mc " + fmt(g.mc) +
                   " (3se " + fmt(3 * g.se) + ")");
    const auto cat = divsuite::categorical_case(201 + i, 60000);
    line(cat.ok, "divergence " + cat.name + " closed " + fmt(cat.closed) + " mc " + fmt(cat.mc) +
                     " (3se " + fmt(3 * cat.se) + ")");
  }
  for (int i = 0; i < 3; ++i) {
    const double id = divsuite::identity_kl(301 + i);
    line(id <= 1e-12, "identity KL " + fmt(id));
  }

  // 3. relaxed categorical: argmax frequencies match the softmax within 3 se
  {
    Rng rng(11);
    const std::vector<double> logits = {0.3, -0.6, 1.1, 0.0};
    const int K = static_cast<int>(logits.size());
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(K);
    double z = 0;
    for (int i = 0; i < K; ++i) z += (p[i] = std::exp(logits[i] - mx));
    for (double& v : p) v /= z;

    const int n = 20000;
    for (double tau : {0.1, 0.5, 1.0}) {
      std::vector<int64_t> counts(K, 0);
      const Tensor lg = Tensor::constant({K}, logits);
      for (int t = 0; t < n; ++t) {
        const auto s = concrete_sample(lg, tau, Tensor::constant(Array::uniform({K}, rng)));
        const auto& hard = s.hard.values();
        for (int i = 0; i < K; ++i)
          if (hard[i] == 1.0) counts[i]++;
      }
      bool ok = true;
      double worst = 0;
      for (int i = 0; i < K; ++i) {
        const double hat = static_cast<double>(counts[i]) / n;
        const double se = std::sqrt(p[i] * (1 - p[i]) / n);
        worst = std::max(worst, std::fabs(hat - p[i]) / (3 * se));
        ok = ok && std::fabs(hat - p[i]) <= 3 * se;
      }
      line(ok, "concrete frequencies tau " + fmt(tau) + " (worst |err|/3se " + fmt(worst) + ")");
    }
  }

  // 4. assignment solver agrees with brute force in both modes
  {
    Rng rng(23);
    bool ok = true;
    int checked = 0;
    for (int t = 0; t < 50 && ok; ++t) {
      const int K = 2 + static_cast<int>(rng.below(3));
      const int T = 2 + static_cast<int>(rng.below(2));
      const int n = 6 + static_cast<int>(rng.below(30));
      std::vector<int> y(n), truth(n);
      for (int i = 0; i < n; ++i) {
        y[i] = 1 + static_cast<int>(rng.below(K));
        truth[i] = 1 + static_cast<int>(rng.below(T));
      }
      const LabelPair pairs = make_label_pair(y, truth, K, T);
      for (AssignMode mode : {AssignMode::injective, AssignMode::many_to_one}) {
        const auto fast = cluster_accuracy(pairs, mode);
        const auto slow = brute_force_accuracy(pairs, mode);
        ok = ok && std::fabs(fast.accuracy - slow.accuracy) <= 1e-12;
      }
      ++checked;
    }
    line(ok, "assignment solver vs brute force (" + std::to_string(checked) + " instances)");
  }

  // 5. with every K = 1 the mixture bound reduces to the plain ladder bound
  {
    ModelConfig mc;
    mc.layers = {{3, 1, 8}, {2, 1, 8}};
    mc.x_dim = 6;
    mc.seed = 5;
    const ParamStore params = init_params(mc);
    Rng rng(13);
    const Array x = Array::uniform({4, 6}, rng);
    std::vector<Array> zn;
    for (const auto& l : mc.layers) zn.push_back(Array::normal({4, l.d_z}, rng));

    auto bound = [&](bool reduced) {
      FixedNoise noise;
      for (const auto& a : zn) noise.push_normal(a);
      Graph g;
      Binder bind(g, params, false);
      const Tensor xs = g.lift(Tensor::constant(x));
      const ElboBreakdown eb = reduced ? vlae_elbo(mc, bind, xs, noise) : elbo(mc, bind, xs, noise);
      return eb.total.value();
    };
    const double a = bound(false), b = bound(true);
    line(a == b, "ladder reduction identity (" + fmt(a) + " == " + fmt(b) + ")");
  }

  log << (all_ok ? "selfcheck: all checks passed\n" : "selfcheck: FAILURES above\n");
  return all_ok ? kExitOk : kExitRuntime;
}

// ---- argv parsing -----------------------------------------------------------------

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"ladder autoencoder with mixture latents"};
  app.require_subcommand(1);

  std::string config_path, out_dir, preset, mode, data_path, checkpoint, inject;
  long long seed = 0, steps = 0;
  int layer = 0;

  auto common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", config_path, "key = value configuration file");
    sub->add_option("--seed", seed, "seed override");
    auto* out = sub->add_option("--out", out_dir, "run directory");
    if (needs_out) out->required();
    return sub;
  };

  CLI::App* synth = common(app.add_subcommand("synth", "write a synthetic dataset and preview"), true);
  CLI::App* train = common(app.add_subcommand("train", "train a model"), true);
  train->add_option("--preset", preset, "architecture preset");
  train->add_option("--steps", steps, "training steps override");
  train->add_option("--data", data_path, "dataset file");
  CLI::App* evalc = common(app.add_subcommand("eval", "cluster-accuracy report"), true);
  evalc->add_option("--preset", preset, "architecture preset");
  evalc->add_option("--layer", layer, "latent layer to score (default: deepest K > 1)");
  evalc->add_option("--data", data_path, "dataset file");
  evalc->add_option("--checkpoint", checkpoint, "checkpoint prefix");
  CLI::App* gen = common(app.add_subcommand("generate", "decode prior samples into a grid"), true);
  gen->add_option("--preset", preset, "architecture preset");
  gen->add_option("--layer", layer, "layer to vary (default: deepest K > 1)");
  gen->add_option("--mode", mode, "marginal or conditional");
  gen->add_option("--checkpoint", checkpoint, "checkpoint prefix");
  CLI::App* self = app.add_subcommand("selfcheck", "numerical self-test");
  self->add_option("--inject-fault", inject, "break the named gradient case (must then fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const char* env_precision = std::getenv("VLAC_PRECISION");
    if (env_precision != nullptr) parse_precision(env_precision);

    if (self->parsed()) return cmd_selfcheck(inject, std::cout);

    CLI::App* sub = app.get_subcommands().front();
    auto given = [&](const std::string& name) {
      const CLI::Option* o = sub->get_option_no_throw(name);
      return o != nullptr && o->count() > 0;
    };
    RunConfig rc;
    if (!config_path.empty()) rc = RunConfig::from_file(config_path);
    if (given("--seed")) rc.set("seed", std::to_string(seed));
    if (given("--preset")) rc.set("preset", preset);
    if (given("--steps")) rc.set("train.steps", std::to_string(steps));
    if (given("--layer")) rc.set("layer", std::to_string(layer));
    if (given("--mode")) rc.set("mode", mode);
    if (given("--data")) rc.set("data.path", data_path);
    if (given("--checkpoint")) rc.set("checkpoint", checkpoint);
    if (env_precision != nullptr) rc.set("precision", env_precision);

    if (sub == synth) return cmd_synth(rc, out_dir);
    if (sub == train) return cmd_train(rc, out_dir);
    if (sub == evalc) return cmd_eval(rc, out_dir);
    if (sub == gen) return cmd_generate(rc, out_dir);
    throw std::logic_error("unreached");
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace vlac
