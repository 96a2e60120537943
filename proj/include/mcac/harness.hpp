#pragma once

// Training loop, evaluation, diagnostics and sweeps for the navigation task.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mcac/agents.hpp"
#include "mcac/nav_env.hpp"
#include "mcac/replay.hpp"

namespace mcac {

struct DemoSource {
  int count = 20;
  double epsilon = 0.0;
  std::optional<std::filesystem::path> file;  // overrides count/epsilon
};

struct RunConfig {
  NavConfig env;
  AgentConfig agent = AgentConfig::navigation(Algorithm::sac, true);
  int total_episodes = 500;
  // Stop before an episode that could push the step count past this; 0 = off.
  std::int64_t max_env_steps = 0;
  int eval_every = 10;  // episodes; 0 disables evaluation
  int eval_rollouts = 10;
  std::uint64_t seed = 0;
  DemoSource demos;
  std::size_t replay_capacity = 0;  // 0 = unbounded
  std::filesystem::path output_dir = "runs/default";

  void validate() const;  // throws ConfigError
};

// Parses the TOML layout with [env], [agent] and [run] tables. Unknown keys
// and tables are ConfigErrors.
RunConfig parse_run_config(std::istream& in, const std::string& source_name = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);
// Writes a TOML file that parse_run_config reads back to the same config.
void write_run_config(std::ostream& out, const RunConfig& cfg);

// Fixed random streams derived from the run seed.
namespace streams {
inline constexpr std::uint64_t env = 1;
inline constexpr std::uint64_t demos = 2;
inline constexpr std::uint64_t sampling = 3;
inline constexpr std::uint64_t eval = 4;
inline constexpr std::uint64_t act = 5;
inline constexpr std::uint64_t bc = 6;
}  // namespace streams

struct MetricsRow {
  int episode = 0;
  std::int64_t env_steps = 0;
  double episode_return = 0.0;
  double smoothed_return = 0.0;
  bool success = false;
  bool collision = false;
  double mean_base_target = 0.0;  // averaged over the episode's updates (nan if none)
  double mean_mc_inf = 0.0;
  double mean_target = 0.0;
  double success_gap = 0.0;  // mean (target - base) over rows from successful trajectories
  int success_rows = 0;
  int dominance_violations = 0;
  std::optional<double> eval_return;
  std::optional<double> eval_success;
  double wall_seconds = 0.0;  // written to timing.csv only
};

inline constexpr const char* kMetricsHeader =
    "episode,env_steps,return,smoothed_return,success,collision,mean_base_target,mean_mc_inf_return,"
    "mean_mcac_target,success_gap,success_rows,dominance_violations,eval_return,eval_success";

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);

// 0.9 * previous + 0.1 * raw; the first row takes the raw value.
double smooth(std::optional<double> previous, double raw);

struct EvalResult {
  double mean_return = 0.0;
  double success_rate = 0.0;
};

// k >= 1 rollouts of `policy`; throws ConfigError otherwise.
EvalResult evaluate(const PolicyFn& policy, const NavConfig& env, int k, Rng& rng);
EvalResult evaluate(const ActorCritic& agent, const NavConfig& env, int k, Rng& rng);

struct TrainSummary {
  int demo_count = 0;
  int demo_successes = 0;
  std::size_t seeded_transitions = 0;
  int pretrain_steps = 0;
  std::optional<double> pretrain_final_critic_loss;
  int episodes = 0;
  std::int64_t env_steps = 0;
  std::int64_t updates = 0;
  std::int64_t dominance_violations = 0;
  std::optional<double> final_smoothed_return;
  // BC runs only
  std::optional<double> bc_initial_loss;
  std::optional<double> bc_final_loss;
  std::optional<EvalResult> final_eval;
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  TrainSummary summary;
};

// Runs the whole pipeline and writes into cfg.output_dir:
//   metrics.csv, timing.csv, summary.json, config.toml and checkpoint/
// (networks, config.toml and the final replay buffer as buffer.jsonl).
// A non-finite loss or parameter aborts the run after writing
// failed_batch.csv with the offending minibatch.
TrainResult train(const RunConfig& cfg);

// Demonstrations for a run, loaded from file or generated on the demo stream.
std::vector<Demo> load_or_generate_demos(const RunConfig& cfg);

// Bellman, GQE and MCAC estimates for every buffer transition. Bellman is the
// agent's one-step target, GQE uses the agent's (lambda, n), and MCAC is
// max(bellman, mc_inf_return).
BufferQs dump_buffer_qs(ActorCritic& agent, const ReplayBuffer& buf);

// Checkpoint directory helpers.
void save_buffer(const std::filesystem::path& dir, const ReplayBuffer& buf);
ReplayBuffer load_buffer(const std::filesystem::path& dir, const NavConfig& env, double gamma);

// Reads a checkpoint written by train() and writes the buffer CSV.
void dump_qs_from_checkpoint(const std::filesystem::path& checkpoint, std::ostream& out);

enum class SweepKind { demo_quality, demo_quantity, pretrain_onoff, target_family };
std::string_view to_string(SweepKind kind);
SweepKind parse_sweep_kind(std::string_view name);

struct SweepCell {
  std::string label;  // directory name
  RunConfig config;
};

// Grid values are comma separated:
//   demo_quality   epsilons        "0,0.25,0.5"
//   demo_quantity  demo counts     "1,5,20"
//   pretrain_onoff on/off or steps "on,off"
//   target_family  families, with lambda_mix:w for a mixture weight
//                  "td1,mcac,lambda_mix:0.25"
std::vector<SweepCell> expand_grid(SweepKind kind, const std::string& grid, const RunConfig& base);

struct SweepCellSummary {
  std::string label;
  int seeds_ok = 0;
  int seeds_failed = 0;
  double mean_final_smoothed = 0.0;
  double stderr_final_smoothed = 0.0;
};

// Runs every cell for every seed under `out`/<label>/seed_<s>. Failures are
// logged to failures.csv and the sweep carries on; summary.csv aggregates
// final smoothed returns across seeds.
std::vector<SweepCellSummary> sweep(SweepKind kind, const std::string& grid, const RunConfig& base,
                                    const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out);

}  // namespace mcac
