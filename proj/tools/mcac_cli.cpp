#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mcac/errors.hpp"
#include "mcac/harness.hpp"

namespace {

mcac::RunConfig base_config(const std::string& path) {
  return path.empty() ? mcac::RunConfig{} : mcac::load_run_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo augmented actor-critic experiments on the navigation task"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::optional<int> episodes;
  std::optional<std::int64_t> max_steps;

  auto* train = app.add_subcommand("train", "run one training job");
  train->add_option("--config", config_path, "TOML run configuration")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "run seed")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--episodes", episodes, "override [run].total_episodes");
  train->add_option("--max-env-steps", max_steps, "override [run].max_env_steps");

  std::string kind;
  std::string grid;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  auto* sweep = app.add_subcommand("sweep", "run a grid of training jobs across seeds");
  sweep->add_option("--kind", kind, "demo_quality | demo_quantity | pretrain_onoff | target_family")->required();
  sweep->add_option("--grid", grid, "comma separated grid values")->required();
  sweep->add_option("--config", config_path, "base TOML configuration")->check(CLI::ExistingFile);
  sweep->add_option("--seeds", seeds, "seeds per cell")->delimiter(',');
  sweep->add_option("--out", out_dir, "sweep output directory")->default_val("sweeps");

  std::string checkpoint;
  std::string csv_out;
  auto* dump = app.add_subcommand("dump-qs", "write Bellman, GQE and MCAC estimates for a checkpoint's buffer");
  dump->add_option("--checkpoint", checkpoint, "checkpoint directory written by train")
      ->required()
      ->check(CLI::ExistingDirectory);
  dump->add_option("--out", csv_out, "CSV path (default stdout)");

  int n_demos = 20;
  double epsilon = 0.0;
  std::string demo_out;
  auto* gen = app.add_subcommand("gen-demos", "generate demonstrations as JSON lines");
  gen->add_option("--n", n_demos, "number of demonstrations")->required();
  gen->add_option("--epsilon", epsilon, "probability of a uniform random action")->required();
  gen->add_option("--out", demo_out, "output file")->required();
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--config", config_path, "TOML configuration for the environment")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      mcac::RunConfig cfg = mcac::load_run_config(config_path);
      cfg.seed = seed;
      cfg.output_dir = out_dir;
      if (episodes) cfg.total_episodes = *episodes;
      if (max_steps) cfg.max_env_steps = *max_steps;
      const auto res = mcac::train(cfg);
      std::cout << fmt::format("{} episodes, {} env steps, final smoothed return {}\n", res.summary.episodes,
                               res.summary.env_steps,
                               res.summary.final_smoothed_return ? fmt::format("{:.6g}", *res.summary.final_smoothed_return)
                                                                 : std::string("n/a"));
    } else if (*sweep) {
      const auto summaries =
          mcac::sweep(mcac::parse_sweep_kind(kind), grid, base_config(config_path), seeds, out_dir);
      for (const auto& s : summaries) {
        std::cout << fmt::format("{}: {} ok, {} failed, mean {:.6g} +- {:.3g}\n", s.label, s.seeds_ok, s.seeds_failed,
                                 s.mean_final_smoothed, s.stderr_final_smoothed);
      }
    } else if (*dump) {
      if (csv_out.empty()) {
        mcac::dump_qs_from_checkpoint(checkpoint, std::cout);
      } else {
        std::ofstream out(csv_out);
        if (!out) throw std::runtime_error("cannot open " + csv_out);
        mcac::dump_qs_from_checkpoint(checkpoint, out);
      }
    } else if (*gen) {
      mcac::RunConfig cfg = base_config(config_path);
      mcac::Rng rng = mcac::make_rng(seed, mcac::streams::demos);
      const auto demos = mcac::generate_demos(cfg.env, n_demos, epsilon, rng);
      mcac::write_demos(demo_out, demos);
      int ok = 0;
      for (const auto& d : demos) ok += d.reached_goal ? 1 : 0;
      std::cout << fmt::format("wrote {} demonstrations ({} reached the goal) to {}\n", demos.size(), ok, demo_out);
    }
  } catch (const mcac::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
