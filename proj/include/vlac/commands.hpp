// Command-line entry points. Each subcommand is a plain function over a
// RunConfig so the behaviour is testable without spawning a process; main()
// is a thin argv parser on top.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "vlac/data.hpp"
#include "vlac/model.hpp"
#include "vlac/training.hpp"

namespace vlac {

// Flat key=value configuration. Keys are validated against the documented
// schema on every insert, so a typo in a config file or flag fails fast
// instead of silently falling back to a default.
struct RunConfig {
  std::map<std::string, std::string> kv;

  static const std::vector<std::string>& schema();
  // Lines of `key = value`; '#' starts a comment, blank lines are skipped.
  static RunConfig from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return kv.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback = "") const;
  int64_t integer(const std::string& key, int64_t fallback) const;
  double real(const std::string& key, double fallback) const;
  bool flag(const std::string& key, bool fallback) const;

  // Sorted `key = value` lines, one per entry.
  std::string echo() const;
};

// Named architectures: vlae (every K=1), vlac-kone {1,1,50,1},
// vlac-ktwo {1,5,50,1}, vlac-desk {1,4,4,1}, gm-dgm (single layer, K=50).
ModelConfig preset_model(const std::string& name, int64_t x_dim);

// "d_z:K:hidden,d_z:K:hidden,..." <-> layer list
std::vector<LayerSpec> parse_layers(const std::string& text);
std::string render_layers(const std::vector<LayerSpec>& layers);

// Effective configs after preset + overrides. model_of needs the data width.
ModelConfig model_of(const RunConfig& rc, int64_t x_dim);
TrainConfig train_of(const RunConfig& rc);
FactorSpec factor_of(const RunConfig& rc);

// Subcommands. All of them write the effective configuration to
// <out_dir>/config.txt and return 0; failures are reported by throwing
// (std::invalid_argument for usage problems, anything else is runtime).
int cmd_synth(const RunConfig& rc, const std::string& out_dir);
int cmd_train(const RunConfig& rc, const std::string& out_dir);
int cmd_eval(const RunConfig& rc, const std::string& out_dir);
int cmd_generate(const RunConfig& rc, const std::string& out_dir);

// Numerical self-test: gradient suite, divergence Monte-Carlo cross-checks,
// Concrete sampler frequencies, assignment-solver oracle equivalence and the
// ladder-reduction identity. One line per check into `log`. A non-empty
// `inject_fault` breaks the named gradient case, which must then fail.
int cmd_selfcheck(const std::string& inject_fault, std::ostream& log);

// 0 success, 1 usage error, 2 runtime or numeric failure.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

int run_cli(int argc, const char* const* argv);

}  // namespace vlac
