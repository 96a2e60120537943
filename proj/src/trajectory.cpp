#include "mcac/trajectory.hpp"

#include <fmt/format.h>

#include "mcac/errors.hpp"

namespace mcac {

std::string_view to_string(DoneReason reason) {
  switch (reason) {
    case DoneReason::none: return "none";
    case DoneReason::collision: return "collision";
    case DoneReason::horizon: return "horizon";
  }
  return "none";
}

DoneReason parse_done_reason(std::string_view name) {
  if (name == "none") return DoneReason::none;
  if (name == "collision") return DoneReason::collision;
  if (name == "horizon") return DoneReason::horizon;
  throw ConfigError(fmt::format("unknown done reason '{}'", name));
}

double Trajectory::total_reward() const {
  double sum = 0.0;
  for (const auto& t : steps) sum += t.reward;
  return sum;
}

void validate_trajectory(const Trajectory& traj) {
  const std::size_t n = traj.steps.size();
  for (std::size_t k = 0; k < n; ++k) {
    const Transition& t = traj.steps[k];
    if (t.obs.size() == 0 || t.obs.size() != t.next_obs.size()) {
      throw ValidationError(fmt::format("transition {}: obs/next_obs size mismatch", k), k);
    }
    if (t.done != (t.done_reason != DoneReason::none)) {
      throw ValidationError(fmt::format("transition {}: done flag disagrees with done_reason", k), k);
    }
    if (t.done && k + 1 != n) {
      throw ValidationError(fmt::format("transition {}: done before the end of the trajectory", k), k);
    }
    if (k + 1 < n && t.next_obs != traj.steps[k + 1].obs) {
      throw ValidationError(fmt::format("transition {}: next_obs does not match obs of transition {}", k, k + 1),
                            k);
    }
  }
}

}  // namespace mcac
