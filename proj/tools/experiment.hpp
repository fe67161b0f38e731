// Experiment driver shared by the gridedge CLI and the test suites:
// versioned JSON configs, the synth/recover/evaluate/sweep pipeline, and
// hashed run manifests.
#ifndef GRIDEDGE_TOOLS_EXPERIMENT_HPP
#define GRIDEDGE_TOOLS_EXPERIMENT_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gridedge/apps.hpp"
#include "gridedge/feeder.hpp"
#include "gridedge/recover.hpp"
#include "gridedge/synth.hpp"

namespace gridedge::exp {

struct FeederSource {
  std::filesystem::path file;  // empty when generated
  bool generate = false;
  int gen_houses = 10;
  int gen_laterals = 3;
  double gen_v_base = 2400.0;
  double gen_z_scale = 1.0;
};

enum class SolverMode { Full, RankOne };
enum class HLinearization { Zero, Average, Refresh };

struct RecoveryOptions {
  SolverMode mode = SolverMode::Full;
  double lambda = -1.0;  // < 0 selects default_lambda(T)
  double tol = 1e-4;
  int max_iter = 2000;
  double rho = 1.0;
  HLinearization h_linearization = HLinearization::Zero;
  double q_pattern_scale = 0.0;
};

struct AppsOptions {
  int match_tolerance_min = 1;
  int min_gap_min = 5;
  double operating_threshold = 0.5;
  bool bandpass_enabled = false;
  double bandpass_p_min = 10.0;
  double bandpass_p_max = 35.0;
  bool night_from_pv_window = true;
  std::vector<std::pair<int, int>> night_ranges;  // half-open minute ranges
};

struct ExperimentConfig {
  FeederSource feeder;
  synth::ScenarioConfig scenario;
  RecoveryOptions recovery;
  AppsOptions apps;
  std::filesystem::path out = "runs/exp";
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Resolved canonical JSON echo of a config (used for hashing and manifests).
std::string canonical_config_json(const ExperimentConfig& cfg);

// Pipeline commands. Each writes its artifacts under `run` and a
// <command>_manifest.json referencing every file it produced.
void cmd_synth(const ExperimentConfig& cfg, const std::filesystem::path& run);
// Returns false when the solver stopped without converging (still exit 0).
bool cmd_recover(const ExperimentConfig& cfg, const std::filesystem::path& run);
void cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& run,
                  bool skip_detection);

struct SweepSpec {
  std::vector<int> kappas;
  std::vector<std::uint64_t> seeds;
  std::vector<double> lambda_multipliers;
  std::optional<SolverMode> mode;
};
void cmd_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out,
               const SweepSpec& spec);

// Helpers shared with the test suites. Feeder file paths are resolved
// against the config file's directory at load time.
feeder::FeederDescription resolve_feeder(const ExperimentConfig& cfg);
std::vector<int> night_mask_from_config(const ExperimentConfig& cfg);

}  // namespace gridedge::exp

#endif  // GRIDEDGE_TOOLS_EXPERIMENT_HPP
