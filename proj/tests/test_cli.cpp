#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "vlac/commands.hpp"
#include "vlac/evaluation.hpp"

using namespace vlac;
namespace fs = std::filesystem;

namespace {

const std::string kRoot = "/tmp/vlac_cli_test";

struct Sandbox {
  Sandbox() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

std::string path(const std::string& rel) { return kRoot + "/" + rel; }

// run_cli with captured stdout; stderr is left alone so doctest failures stay visible.
struct CliResult {
  int code;
  std::string out;
};

CliResult cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"vlac"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream captured;
  std::streambuf* old = std::cout.rdbuf(captured.rdbuf());
  const int code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old);
  return {code, captured.str()};
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  out << text;
  REQUIRE(out.good());
}

// P6 header dimensions
std::pair<int, int> ppm_size(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::string magic;
  int w = 0, h = 0;
  in >> magic >> w >> h;
  REQUIRE(magic == "P6");
  return {w, h};
}

std::vector<std::string> lines_of(const std::string& p) {
  std::ifstream in(p);
  std::vector<std::string> ls;
  std::string l;
  while (std::getline(in, l)) ls.push_back(l);
  return ls;
}

std::string drop_last_column(const std::string& line) {
  const auto tab = line.rfind('\t');
  return tab == std::string::npos ? line : line.substr(0, tab);
}

// a small, fast dataset all CLI tests share
const std::string kTinyCfg =
    "data.height = 8\n"
    "data.width = 8\n"
    "data.channels = 3\n"
    "data.n = 96\n";

void make_tiny_dataset() {
  static bool done = false;
  if (done) return;
  spit(path("tiny.cfg"), kTinyCfg);
  REQUIRE(cli({"synth", "--config", path("tiny.cfg"), "--out", path("tiny"), "--seed", "21"}).code == 0);
  done = true;
}

}  // namespace

static Sandbox sandbox;

TEST_CASE("config files parse, reject unknown keys, and validate values") {
  spit(path("good.cfg"),
       "# comment line\n"
       "train.steps = 12\n"
       "\n"
       "preset = vlac-ktwo   # trailing comment\n"
       "train.lr=0.002\n");
  RunConfig rc = RunConfig::from_file(path("good.cfg"));
  CHECK(rc.integer("train.steps", 0) == 12);
  CHECK(rc.str("preset") == "vlac-ktwo");
  CHECK(rc.real("train.lr", 0) == doctest::Approx(0.002));

  spit(path("unknown.cfg"), "no.such.key = 1\n");
  CHECK_THROWS_AS(RunConfig::from_file(path("unknown.cfg")), std::invalid_argument);
  spit(path("noeq.cfg"), "train.steps 12\n");
  CHECK_THROWS_AS(RunConfig::from_file(path("noeq.cfg")), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_file(path("missing.cfg")), std::runtime_error);

  RunConfig bad;
  bad.set("train.steps", "12x");
  CHECK_THROWS_AS(bad.integer("train.steps", 0), std::invalid_argument);
  bad.set("train.lr", "fast");
  CHECK_THROWS_AS(bad.real("train.lr", 0), std::invalid_argument);
  bad.set("train.straight_through", "maybe");
  CHECK_THROWS_AS(bad.flag("train.straight_through", false), std::invalid_argument);
  CHECK_THROWS_AS(bad.set("nope", "1"), std::invalid_argument);
}

TEST_CASE("presets encode the documented architectures") {
  auto ks = [](const ModelConfig& mc) {
    std::vector<int64_t> v;
    for (const auto& l : mc.layers) v.push_back(l.K);
    return v;
  };
  CHECK(ks(preset_model("vlae", 10)) == std::vector<int64_t>{1, 1, 1, 1});
  CHECK(ks(preset_model("vlac-kone", 10)) == std::vector<int64_t>{1, 1, 50, 1});
  CHECK(ks(preset_model("vlac-ktwo", 10)) == std::vector<int64_t>{1, 5, 50, 1});
  CHECK(ks(preset_model("vlac-desk", 10)) == std::vector<int64_t>{1, 4, 4, 1});
  const ModelConfig gm = preset_model("gm-dgm", 10);
  CHECK(gm.L() == 1);
  CHECK(gm.layers[0].K == 50);
  CHECK(preset_model("vlae", 10).layers[0].d_z == 4);
  CHECK_THROWS_AS(preset_model("resnet", 10), std::invalid_argument);

  CHECK(render_layers(parse_layers("4:1:64,3:7:32")) == "4:1:64,3:7:32");
  CHECK_THROWS_AS(parse_layers("4:1"), std::invalid_argument);
  CHECK_THROWS_AS(parse_layers("4:1:64x"), std::invalid_argument);
  CHECK_THROWS_AS(parse_layers(""), std::invalid_argument);
}

TEST_CASE("synth writes a deterministic dataset and a preview sheet") {
  make_tiny_dataset();
  CHECK(fs::exists(path("tiny/dataset.vlcd")));
  CHECK(fs::exists(path("tiny/config.txt")));

  // 96 images -> preview shows the first 64 as an 8x8 grid of 8x8 tiles
  auto [w, h] = ppm_size(path("tiny/preview.ppm"));
  CHECK(w == 64);
  CHECK(h == 64);

  // echoed config names every effective data key
  const std::string echo = slurp(path("tiny/config.txt"));
  for (const char* key : {"data.height", "data.width", "data.channels", "data.shapes",
                          "data.hues", "data.jitter", "data.n", "data.path", "seed"})
    CHECK(echo.find(key) != std::string::npos);

  // same seed, same bytes; different seed, different bytes
  REQUIRE(cli({"synth", "--config", path("tiny.cfg"), "--out", path("tiny_b"), "--seed", "21"}).code == 0);
  CHECK(slurp(path("tiny_b/dataset.vlcd")) == slurp(path("tiny/dataset.vlcd")));
  REQUIRE(cli({"synth", "--config", path("tiny.cfg"), "--out", path("tiny_c"), "--seed", "22"}).code == 0);
  CHECK(slurp(path("tiny_c/dataset.vlcd")) != slurp(path("tiny/dataset.vlcd")));

  // n must be positive
  spit(path("zero.cfg"), "data.n = 0\n");
  CHECK(cli({"synth", "--config", path("zero.cfg"), "--out", path("zero")}).code == kExitUsage);
}

TEST_CASE("train smoke run, override precedence, and echoed configuration") {
  make_tiny_dataset();

  // steps=0: header-only metrics plus a final checkpoint
  REQUIRE(cli({"train", "--out", path("smoke"), "--data", path("tiny/dataset.vlcd"),
               "--preset", "vlac-desk", "--steps", "0"}).code == 0);
  const auto metrics = lines_of(path("smoke/metrics.tsv"));
  REQUIRE(metrics.size() == 1);
  CHECK(metrics[0].rfind("step\ttotal\treconstruction", 0) == 0);
  CHECK(fs::exists(path("smoke/ckpt-final.manifest")));

  // the --steps flag beats the config file's value, and the echo records it
  spit(path("steps70.cfg"), "train.steps = 70\npreset = vlac-desk\n");
  REQUIRE(cli({"train", "--config", path("steps70.cfg"), "--out", path("override"),
               "--data", path("tiny/dataset.vlcd"), "--steps", "3"}).code == 0);
  CHECK(lines_of(path("override/metrics.tsv")).size() == 4);  // header + 3 rows
  const std::string echo = slurp(path("override/config.txt"));
  CHECK(echo.find("train.steps = 3\n") != std::string::npos);
  for (const char* key : {"model.layers", "model.sigma_x", "train.lr", "train.tau_start",
                          "train.batch_size", "precision", "data.path"})
    CHECK(echo.find(key) != std::string::npos);
  CHECK(echo.find("model.layers = 4:1:64,4:4:64,4:4:64,4:1:64") != std::string::npos);

  // missing dataset path is a usage error; a bogus file is a runtime error
  CHECK(cli({"train", "--out", path("nodata")}).code == kExitUsage);
  CHECK(cli({"train", "--out", path("nodata"), "--data", path("absent.vlcd")}).code == kExitRuntime);
}

TEST_CASE("train resumes bit-exact through the command line") {
  make_tiny_dataset();
  // The temperature schedule depends on the configured horizon, so the
  // interrupted run must pin the same anneal window as the full one.
  spit(path("resume.cfg"),
       "preset = vlac-desk\n"
       "train.batch_size = 16\n"
       "train.anneal_steps = 4\n"
       "seed = 9\n");

  REQUIRE(cli({"train", "--config", path("resume.cfg"), "--out", path("full"),
               "--data", path("tiny/dataset.vlcd"), "--steps", "8"}).code == 0);

  REQUIRE(cli({"train", "--config", path("resume.cfg"), "--out", path("half"),
               "--data", path("tiny/dataset.vlcd"), "--steps", "4"}).code == 0);
  const CliResult second = cli({"train", "--config", path("resume.cfg"), "--out", path("half"),
                                "--data", path("tiny/dataset.vlcd"), "--steps", "8"});
  REQUIRE(second.code == 0);
  CHECK(second.out.find("resuming from") != std::string::npos);

  CHECK(slurp(path("full/ckpt-final.blob")) == slurp(path("half/ckpt-final.blob")));
  CHECK(slurp(path("full/ckpt-final.manifest")) == slurp(path("half/ckpt-final.manifest")));

  const auto a = lines_of(path("full/metrics.tsv"));
  const auto b = lines_of(path("half/metrics.tsv"));
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(drop_last_column(a[i]) == drop_last_column(b[i]));
}

TEST_CASE("eval reports both assignment modes and matches the brute-force oracle") {
  make_tiny_dataset();
  REQUIRE(cli({"train", "--out", path("run"), "--data", path("tiny/dataset.vlcd"),
               "--preset", "vlac-desk", "--steps", "40", "--seed", "7"}).code == 0);

  const CliResult res = cli({"eval", "--out", path("evalrun"), "--data", path("tiny/dataset.vlcd"),
                             "--preset", "vlac-desk", "--checkpoint", path("run/ckpt-final")});
  REQUIRE(res.code == 0);
  const std::string report = slurp(path("evalrun/eval_report.txt"));
  CHECK(res.out == report);
  CHECK(report.find("injective") != std::string::npos);
  CHECK(report.find("many-to-one") != std::string::npos);
  // defaulted to the deepest K>1 layer of the desk preset
  CHECK(report.rfind("layer 3 (4 clusters)", 0) == 0);
  CHECK(slurp(path("evalrun/config.txt")).find("layer = 3\n") != std::string::npos);

  // oracle: recompute each channel's accuracies by exhaustive assignment
  const Dataset ds = load_raw(path("tiny/dataset.vlcd"));
  RunConfig rc;
  rc.set("preset", "vlac-desk");
  const ModelConfig mc = model_of(rc, ds.x_dim());
  const ParamStore params = load_params(mc, path("run/ckpt-final"));
  const EvalReport rep = evaluate_model(mc, params, ds, 3);
  REQUIRE(!rep.channels.empty());
  for (const auto& ch : rep.channels) {
    const int T = ds.cardinalities[ch.channel];
    std::vector<int> truth(ds.n());
    for (int64_t i = 0; i < ds.n(); ++i) truth[i] = ds.label(i, ch.channel) + 1;
    const LabelPair pairs = make_label_pair(rep.predictions, truth, rep.K, T);
    CHECK(ch.acc_injective ==
          doctest::Approx(brute_force_accuracy(pairs, AssignMode::injective).accuracy).epsilon(1e-12));
    CHECK(ch.acc_many_to_one ==
          doctest::Approx(brute_force_accuracy(pairs, AssignMode::many_to_one).accuracy).epsilon(1e-12));
    // and the number printed in the report is exactly the computed one
    char needle[64];
    std::snprintf(needle, sizeof needle, "injective %g", ch.acc_injective);
    CHECK(report.find(needle) != std::string::npos);
  }

  // pointing eval at a Gaussian-only layer is a usage error
  CHECK(cli({"eval", "--out", path("evalbad"), "--data", path("tiny/dataset.vlcd"),
             "--preset", "vlac-desk", "--checkpoint", path("run/ckpt-final"),
             "--layer", "1"}).code == kExitUsage);
  // a model with no mixture layer at all cannot be scored
  REQUIRE(cli({"train", "--out", path("vlae_run"), "--data", path("tiny/dataset.vlcd"),
               "--preset", "vlae", "--steps", "0"}).code == 0);
  CHECK(cli({"eval", "--out", path("evalnone"), "--data", path("tiny/dataset.vlcd"),
             "--preset", "vlae", "--checkpoint", path("vlae_run/ckpt-final")}).code == kExitUsage);
}

TEST_CASE("generate writes deterministic grids with one column per component") {
  make_tiny_dataset();
  REQUIRE(fs::exists(path("run/ckpt-final.manifest")));  // trained by the eval case

  const std::vector<std::string> cond = {
      "generate", "--out", path("gen_cond"), "--preset", "vlac-desk",
      "--checkpoint", path("run/ckpt-final"), "--mode", "conditional",
      "--seed", "5", "--config", path("tiny.cfg")};
  REQUIRE(cli(cond).code == 0);
  // desk preset: designated layer 3 has K=4 -> 4 columns of 8px tiles, 6 rows
  auto [w, h] = ppm_size(path("gen_cond/grid.ppm"));
  CHECK(w == 4 * 8);
  CHECK(h == 6 * 8);

  // deterministic per seed
  auto again = cond;
  again[2] = path("gen_cond2");
  REQUIRE(cli(again).code == 0);
  CHECK(slurp(path("gen_cond2/grid.ppm")) == slurp(path("gen_cond/grid.ppm")));
  auto reseeded = cond;
  reseeded[2] = path("gen_cond3");
  reseeded[10] = "6";
  REQUIRE(cli(reseeded).code == 0);
  CHECK(slurp(path("gen_cond3/grid.ppm")) != slurp(path("gen_cond/grid.ppm")));

  // marginal grids honour generate.cols and work on Gaussian layers
  spit(path("marg.cfg"), kTinyCfg + "generate.rows = 3\ngenerate.cols = 5\n");
  REQUIRE(cli({"generate", "--out", path("gen_marg"), "--preset", "vlac-desk",
               "--checkpoint", path("run/ckpt-final"), "--mode", "marginal",
               "--layer", "4", "--config", path("marg.cfg")}).code == 0);
  auto [mw, mh] = ppm_size(path("gen_marg/grid.ppm"));
  CHECK(mw == 5 * 8);
  CHECK(mh == 3 * 8);

  // conditional generation needs a mixture layer
  CHECK(cli({"generate", "--out", path("gen_bad"), "--preset", "vlac-desk",
             "--checkpoint", path("run/ckpt-final"), "--mode", "conditional",
             "--layer", "1", "--config", path("tiny.cfg")}).code == kExitUsage);
  CHECK(cli({"generate", "--out", path("gen_bad2"), "--preset", "vlac-desk",
             "--checkpoint", path("run/ckpt-final"), "--mode", "sideways",
             "--config", path("tiny.cfg")}).code == kExitUsage);
}

TEST_CASE("selfcheck passes clean and fails on an injected fault, naming it") {
  std::ostringstream log;
  CHECK(cmd_selfcheck("", log) == 0);
  CHECK(log.str().find("[FAIL]") == std::string::npos);
  CHECK(log.str().find("all checks passed") != std::string::npos);

  std::ostringstream broken;
  CHECK(cmd_selfcheck("softplus", broken) != 0);
  CHECK(broken.str().find("[FAIL] gradients softplus") != std::string::npos);

  std::ostringstream unused;
  CHECK_THROWS_AS(cmd_selfcheck("warp_drive", unused), std::invalid_argument);

  // and through argv, where the unknown name becomes a usage exit
  CHECK(cli({"selfcheck"}).code == 0);
  CHECK(cli({"selfcheck", "--inject-fault", "tanh"}).code == kExitRuntime);
  CHECK(cli({"selfcheck", "--inject-fault", "warp_drive"}).code == kExitUsage);
}

TEST_CASE("argv surface: help, missing arguments, and the precision switch") {
  make_tiny_dataset();
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({}).code == kExitUsage);                       // a subcommand is required
  CHECK(cli({"synth"}).code == kExitUsage);                // --out is required
  CHECK(cli({"train", "--out", path("x"), "--bogus"}).code == kExitUsage);

  setenv("VLAC_PRECISION", "f32", 1);
  const int code = cli({"train", "--out", path("f32run"), "--data", path("tiny/dataset.vlcd"),
                        "--preset", "vlac-desk", "--steps", "2"}).code;
  unsetenv("VLAC_PRECISION");
  REQUIRE(code == 0);
  CHECK(slurp(path("f32run/config.txt")).find("precision = f32\n") != std::string::npos);

  setenv("VLAC_PRECISION", "f16", 1);
  const int bad = cli({"selfcheck"}).code;
  unsetenv("VLAC_PRECISION");
  CHECK(bad == kExitUsage);
}
