#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "mcac/nn.hpp"

namespace mcac {

enum class DoneReason { none, collision, horizon };

std::string_view to_string(DoneReason reason);
DoneReason parse_done_reason(std::string_view name);

struct Transition {
  Vector obs;
  Vector action;
  Vector next_obs;
  double reward = 0.0;
  bool done = false;  // episode ended on this transition
  DoneReason done_reason = DoneReason::none;
  std::optional<double> mc_inf_return;  // set when inserted into a replay buffer

  // Both collisions and the horizon cut-off mask the bootstrap.
  bool terminal() const noexcept { return done; }
};

// One episode in time order.
struct Trajectory {
  std::vector<Transition> steps;

  bool empty() const noexcept { return steps.empty(); }
  std::size_t size() const noexcept { return steps.size(); }
  double total_reward() const;
};

// Throws ValidationError at the first transition that breaks contiguity
// (next_obs[k] != obs[k+1]), marks done before the end, or disagrees with
// its done_reason.
void validate_trajectory(const Trajectory& traj);

}  // namespace mcac
