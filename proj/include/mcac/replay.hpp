#pragma once

// Trajectory-complete replay: only whole episodes enter the buffer, and each
// transition is annotated with its MC-infinity return on the way in.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "mcac/nn.hpp"
#include "mcac/trajectory.hpp"

namespace mcac {

// Discounted reward-to-go that treats the final reward as repeating forever:
//   G_j = sum_{k=j..T'} gamma^(k-j) r_k + gamma^(T'-j+1) r_T' / (1 - gamma)
// evaluated in one backward pass as r_T'/(1-gamma) + sum gamma^(k-j) (r_k - r_T'),
// which is exact for constant-reward trajectories. Requires 0 < gamma < 1.
Trajectory mc_inf_annotate(Trajectory traj, double gamma);

struct InsertTag {
  bool is_demo = false;
  bool reached_goal = false;
};

struct TrajectoryInfo {
  std::size_t start = 0;  // index of the first transition in the flat store
  std::size_t length = 0;
  bool is_demo = false;
  bool reached_goal = false;
  bool collided = false;  // ended by a collision rather than the horizon
};

class ReplayBuffer {
 public:
  // nullopt capacity means unbounded. Demonstrations are never evicted.
  explicit ReplayBuffer(std::optional<std::size_t> capacity = std::nullopt) : capacity_(capacity) {}

  std::size_t size() const noexcept { return store_.size(); }
  bool empty() const noexcept { return store_.empty(); }
  std::optional<std::size_t> capacity() const noexcept { return capacity_; }

  const Transition& at(std::size_t i) const { return store_.at(i); }
  std::size_t num_trajectories() const noexcept { return trajectories_.size(); }
  const TrajectoryInfo& trajectory(std::size_t id) const { return trajectories_.at(id); }
  std::size_t trajectory_of(std::size_t i) const { return owner_.at(i); }
  std::size_t offset_in_trajectory(std::size_t i) const { return i - trajectories_[owner_.at(i)].start; }

  // Validates and annotates, evicting whole old online trajectories if a
  // capacity is set. Empty trajectories are ignored with a warning.
  void insert(Trajectory traj, double gamma, InsertTag tag = {});

  // m indices drawn uniformly with replacement.
  std::vector<std::size_t> sample_indices(std::size_t m, Rng& rng) const;

 private:
  void evict_for(std::size_t incoming);

  std::optional<std::size_t> capacity_;
  std::vector<Transition> store_;
  std::vector<std::size_t> owner_;
  std::vector<TrajectoryInfo> trajectories_;
};

void insert_trajectory(ReplayBuffer& buf, Trajectory traj, double gamma, InsertTag tag = {});

// Throws UsageError if the buffer holds fewer than m transitions.
std::vector<Transition> sample_batch(const ReplayBuffer& buf, std::size_t m, Rng& rng);

// Per-transition value estimates exported next to the buffer contents.
struct BufferQs {
  std::vector<double> bellman;
  std::vector<double> gqe;
  std::vector<double> mcac;
};

// Columns: obs_0.., act_0.., reward, done, mc_inf_return, q_bellman, q_gqe,
// q_mcac. Floats at 17 significant digits.
void write_buffer_csv(std::ostream& out, const ReplayBuffer& buf, const BufferQs& qs);

}  // namespace mcac
