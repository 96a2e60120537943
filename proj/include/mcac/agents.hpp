#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mcac/nav_env.hpp"
#include "mcac/nn.hpp"
#include "mcac/replay.hpp"
#include "mcac/targets.hpp"

namespace mcac {

enum class Algorithm { sac, td3, gqe, bc };
enum class ActMode { explore, eval };

std::string_view to_string(Algorithm algorithm);
Algorithm parse_algorithm(std::string_view name);

// TD3 noise scales are fractions of the action bound.
struct Td3Settings {
  int policy_delay = 2;
  double target_noise_std = 0.2;
  double target_noise_clip = 0.5;
  double exploration_noise_std = 0.1;
};

struct AgentConfig {
  Algorithm algorithm = Algorithm::sac;
  bool mcac = true;
  TargetSpec target;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha = 0.2;  // fixed entropy weight
  double tau = 5e-2;
  int batch_size = 256;
  int pretrain_steps = 10000;
  int updates_per_timestep = 1;
  Td3Settings td3;
  std::vector<int> hidden{256, 256};
  int obs_dim = NavConfig::obs_dim;
  int act_dim = NavConfig::act_dim;
  double action_bound = 0.5;
  double bc_lr = 1e-4;
  int bc_steps = 10000;

  double gamma() const noexcept { return target.gamma; }

  // Navigation settings: lr 3e-4, batch 256, alpha 0.2, gamma 0.99,
  // tau 5e-2, one update per step, 10000 pretraining steps, GQE lambda 0.9
  // and n 32. The target family follows from algorithm and mcac.
  static AgentConfig navigation(Algorithm algorithm, bool mcac);

  // Picks the target family implied by (algorithm, mcac).
  static TargetFamily default_family(Algorithm algorithm, bool mcac);

  void validate() const;  // throws ConfigError
};

// A sampled minibatch laid out column-wise.
struct Batch {
  std::vector<std::size_t> indices;  // buffer positions
  Matrix obs;
  Matrix actions;
  Matrix next_obs;
  Vector rewards;
  std::vector<bool> terminal;
  Vector mc_inf;
  std::vector<bool> from_success;  // owning trajectory reached the goal

  std::size_t size() const noexcept { return indices.size(); }
};

// Throws UsageError if a transition lacks its MC-infinity annotation.
Batch make_batch(const ReplayBuffer& buf, std::span<const std::size_t> indices);

struct CriticUpdateResult {
  double loss = 0.0;  // summed squared error of both critics
  Vector base_target;
  Vector target;
  Vector next_log_prob;  // SAC-style bootstrap samples only
  int dominance_violations = 0;
};

// Tanh-squashed Gaussian samples with their log-density in action space.
struct PolicySample {
  Matrix action;    // bound * tanh(u)
  Vector log_prob;  // per column
  Matrix noise;     // standard normal draws
  Matrix pre_tanh;  // u = mean + std * noise
  Matrix mean;
  Matrix log_std;
};

PolicySample sample_squashed_gaussian(const Mlp& policy, const Matrix& obs, double bound, Rng& rng,
                                      ForwardCache* cache = nullptr);

// Twin-critic actor-critic for SAC, TD3 and GQE (GQE runs on SAC).
class ActorCritic {
 public:
  ActorCritic(AgentConfig cfg, std::uint64_t seed);

  const AgentConfig& config() const noexcept { return cfg_; }

  Vector act(const Vector& obs, ActMode mode, Rng& rng) const;
  // The returned function holds a copy of the current policy network.
  PolicyFn as_policy(ActMode mode) const;

  CriticUpdateResult critic_update(const ReplayBuffer& buf, const Batch& batch);
  // nullopt when TD3 skips the step because of its policy delay.
  std::optional<double> actor_update(const Batch& batch);
  // Actor loss on `batch` and its gradient with respect to the policy
  // parameters; SAC draws its reparameterisation noise from `rng`.
  double actor_loss_gradient(const Batch& batch, Rng& rng, Params& grad) const;

  // Bootstrap estimate at s' used by the one-step target: min twin target Q
  // at a fresh policy action (minus alpha log pi for SAC), or at the smoothed
  // target action for TD3.
  Vector next_state_values(const Matrix& next_obs, Vector* log_prob = nullptr);

  // Base targets per family for arbitrary buffer positions; used by the
  // critic update and by buffer diagnostics.
  Vector one_step_targets(const Batch& batch, Vector* log_prob = nullptr);
  Vector gqe_targets(const ReplayBuffer& buf, const Batch& batch);
  Vector critic_tail_returns(const ReplayBuffer& buf, const Batch& batch);

  // Online critic values min(Q1, Q2) at (obs, actions).
  Vector min_q(const Matrix& obs, const Matrix& actions) const;

  std::int64_t critic_updates() const noexcept { return critic_updates_; }
  std::int64_t actor_updates() const noexcept { return actor_updates_; }

  const Mlp& policy_net() const noexcept { return policy_; }
  Mlp& policy_net() noexcept { return policy_; }
  const Mlp& q1() const noexcept { return q1_; }
  Mlp& q1() noexcept { return q1_; }
  const Mlp& q2() const noexcept { return q2_; }
  Mlp& q2() noexcept { return q2_; }
  const Mlp& q1_target() const noexcept { return q1_target_; }
  Mlp& q1_target() noexcept { return q1_target_; }
  const Mlp& q2_target() const noexcept { return q2_target_; }
  Mlp& q2_target() noexcept { return q2_target_; }
  const Mlp& policy_target() const noexcept { return policy_target_; }
  Mlp& policy_target() noexcept { return policy_target_; }
  Rng& rng() noexcept { return rng_; }

  void swap_twin_critics();

  // One file per network plus agent.json echoing the configuration.
  void save(const std::filesystem::path& dir) const;
  static ActorCritic load(const std::filesystem::path& dir);

 private:
  bool is_td3() const noexcept { return cfg_.algorithm == Algorithm::td3; }
  Matrix critic_input(const Matrix& obs, const Matrix& actions) const;
  Vector min_target_q(const Matrix& obs, const Matrix& actions) const;
  Matrix deterministic_action(const Mlp& net, const Matrix& obs) const;
  Matrix fresh_actions(const Matrix& obs, Vector* log_prob);

  AgentConfig cfg_;
  Rng rng_;
  Mlp policy_;
  Mlp policy_target_;  // TD3 only
  Mlp q1_, q2_, q1_target_, q2_target_;
  AdamState policy_opt_, q1_opt_, q2_opt_;
  std::int64_t critic_updates_ = 0;
  std::int64_t actor_updates_ = 0;
};

struct UpdateStats {
  double critic_loss = 0.0;
  std::optional<double> actor_loss;
  double mean_base_target = 0.0;
  double mean_mc_inf = 0.0;
  double mean_target = 0.0;
  double success_gap_sum = 0.0;  // sum of (target - base) over success rows
  int success_rows = 0;
  int dominance_violations = 0;
};

// One critic update followed by one actor update on a given batch.
UpdateStats update_on_batch(ActorCritic& agent, const ReplayBuffer& buf, const Batch& batch);
// Samples a minibatch, then update_on_batch.
UpdateStats update_step(ActorCritic& agent, const ReplayBuffer& buf, Rng& sample_rng);

// Throws UsageError on an empty buffer.
void pretrain(ActorCritic& agent, const ReplayBuffer& buf, int n_steps, Rng& sample_rng);

// Deterministic policy bound * tanh(net(obs)) regressed onto demo actions.
struct BcPolicy {
  Mlp net;
  double action_bound = 0.5;

  Vector act(const Vector& obs) const;
  PolicyFn as_policy() const;
};

struct BcResult {
  BcPolicy policy;
  double initial_loss = 0.0;  // full-dataset MSE before training
  double final_loss = 0.0;
};

BcResult bc_fit(std::span<const Trajectory> demos, const AgentConfig& cfg, Rng& rng);

}  // namespace mcac
