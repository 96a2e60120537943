#include "mcac/replay.hpp"

#include <iostream>
#include <ostream>

#include <fmt/format.h>

#include "mcac/errors.hpp"

namespace mcac {

Trajectory mc_inf_annotate(Trajectory traj, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw ConfigError(fmt::format("MC-infinity needs 0 < gamma < 1, got {}", gamma));
  }
  if (traj.empty()) throw UsageError("cannot annotate an empty trajectory");
  const double last_reward = traj.steps.back().reward;
  const double tail_value = last_reward / (1.0 - gamma);
  const long double tail_wide = static_cast<long double>(last_reward) / (1.0L - gamma);
  // sum_{k>=j} gamma^(k-j) (r_k - r_T'), carried in extended precision since
  // mixed-sign rewards can cancel down to returns near zero
  long double excess = 0.0L;
  for (std::size_t j = traj.steps.size(); j-- > 0;) {
    excess = (static_cast<long double>(traj.steps[j].reward) - last_reward) + gamma * excess;
    traj.steps[j].mc_inf_return = excess == 0.0L ? tail_value : static_cast<double>(tail_wide + excess);
  }
  return traj;
}

void ReplayBuffer::insert(Trajectory traj, double gamma, InsertTag tag) {
  if (traj.empty()) {
    std::cerr << "warning: ignoring empty trajectory\n";
    return;
  }
  validate_trajectory(traj);
  traj = mc_inf_annotate(std::move(traj), gamma);
  evict_for(traj.size());

  TrajectoryInfo info;
  info.start = store_.size();
  info.length = traj.size();
  info.is_demo = tag.is_demo;
  info.reached_goal = tag.reached_goal;
  info.collided = traj.steps.back().done_reason == DoneReason::collision;
  const std::size_t id = trajectories_.size();
  trajectories_.push_back(info);
  for (auto& t : traj.steps) {
    store_.push_back(std::move(t));
    owner_.push_back(id);
  }
}

void ReplayBuffer::evict_for(std::size_t incoming) {
  if (!capacity_ || store_.size() + incoming <= *capacity_) return;

  std::vector<TrajectoryInfo> kept;
  std::size_t size = store_.size();
  std::vector<bool> keep(trajectories_.size(), true);
  for (std::size_t id = 0; id < trajectories_.size() && size + incoming > *capacity_; ++id) {
    if (trajectories_[id].is_demo) continue;
    keep[id] = false;
    size -= trajectories_[id].length;
  }
  if (size + incoming > *capacity_) {
    throw ConfigError("replay capacity too small to hold the demonstrations and a new trajectory");
  }

  std::vector<Transition> store;
  std::vector<std::size_t> owner;
  store.reserve(size + incoming);
  owner.reserve(size + incoming);
  for (std::size_t id = 0; id < trajectories_.size(); ++id) {
    if (!keep[id]) continue;
    TrajectoryInfo info = trajectories_[id];
    const std::size_t old_start = info.start;
    info.start = store.size();
    for (std::size_t k = 0; k < info.length; ++k) {
      store.push_back(std::move(store_[old_start + k]));
      owner.push_back(kept.size());
    }
    kept.push_back(info);
  }
  store_ = std::move(store);
  owner_ = std::move(owner);
  trajectories_ = std::move(kept);
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t m, Rng& rng) const {
  if (store_.size() < m || store_.empty()) {
    throw UsageError(fmt::format("cannot sample {} transitions from a buffer of {}", m, store_.size()));
  }
  std::uniform_int_distribution<std::size_t> pick(0, store_.size() - 1);
  std::vector<std::size_t> idx(m);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

void insert_trajectory(ReplayBuffer& buf, Trajectory traj, double gamma, InsertTag tag) {
  buf.insert(std::move(traj), gamma, tag);
}

std::vector<Transition> sample_batch(const ReplayBuffer& buf, std::size_t m, Rng& rng) {
  std::vector<Transition> out;
  out.reserve(m);
  for (std::size_t i : buf.sample_indices(m, rng)) out.push_back(buf.at(i));
  return out;
}

void write_buffer_csv(std::ostream& out, const ReplayBuffer& buf, const BufferQs& qs) {
  const std::size_t n = buf.size();
  if (qs.bellman.size() != n || qs.gqe.size() != n || qs.mcac.size() != n) {
    throw ShapeError("Q columns must have one entry per buffer transition");
  }
  if (n == 0) {
    out << "reward,done,mc_inf_return,q_bellman,q_gqe,q_mcac\n";
    return;
  }
  const auto obs_dim = buf.at(0).obs.size();
  const auto act_dim = buf.at(0).action.size();
  for (Eigen::Index i = 0; i < obs_dim; ++i) out << "obs_" << i << ',';
  for (Eigen::Index i = 0; i < act_dim; ++i) out << "act_" << i << ',';
  out << "reward,done,mc_inf_return,q_bellman,q_gqe,q_mcac\n";
  for (std::size_t i = 0; i < n; ++i) {
    const Transition& t = buf.at(i);
    for (Eigen::Index k = 0; k < obs_dim; ++k) out << fmt::format("{:.17g},", t.obs(k));
    for (Eigen::Index k = 0; k < act_dim; ++k) out << fmt::format("{:.17g},", t.action(k));
    out << fmt::format("{:.17g},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", t.reward, t.done ? 1 : 0,
                       t.mc_inf_return.value(), qs.bellman[i], qs.gqe[i], qs.mcac[i]);
  }
}

}  // namespace mcac
