#pragma once

// Pointmass navigation: a 2-D point moves by clipped delta-position actions
// plus Gaussian dynamics noise, past a vertical barrier with a narrow slit,
// from a start box to a goal box.

#include <array>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <vector>

#include "mcac/nn.hpp"
#include "mcac/trajectory.hpp"

namespace mcac {

using Point = Eigen::Vector2d;

struct Rect {
  double x_min = 0.0;
  double x_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;

  bool contains(const Point& p) const noexcept {
    return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max;
  }
  Point center() const noexcept { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }
  bool intersects(const Rect& o) const noexcept {
    return x_min <= o.x_max && o.x_min <= x_max && y_min <= o.y_max && o.y_min <= y_max;
  }
};

// Closed segment p0 -> p1 against a closed rectangle.
bool segment_hits_rect(const Point& p0, const Point& p1, const Rect& r) noexcept;

struct Barrier {
  Rect body{4.8, 5.2, 0.0, 8.5};
  double slit_y_min = 4.0;
  double slit_y_max = 4.6;

  // The two solid pieces of the body, below and above the slit.
  std::array<Rect, 2> solid_parts() const noexcept;
  Point slit_center() const noexcept { return {body.center().x(), 0.5 * (slit_y_min + slit_y_max)}; }
};

struct NavConfig {
  int horizon = 100;
  Rect workspace{0.0, 10.0, 0.0, 10.0};
  Rect start_region{0.5, 1.5, 0.5, 1.5};
  Rect goal_region{8.5, 9.5, 0.5, 1.5};
  Barrier barrier;
  double action_bound = 0.5;
  double noise_std = 0.1;
  double collision_reward = -100.0;
  double step_reward = -1.0;
  double goal_reward = 0.0;

  static constexpr int obs_dim = 2;
  static constexpr int act_dim = 2;

  void validate() const;  // throws ConfigError
};

struct NavState {
  Point position = Point::Zero();
  int step_index = 0;
  bool finished = false;

  Vector observation() const { return position; }
};

struct StepResult {
  NavState next_state;
  double reward = 0.0;
  bool done = false;
  DoneReason done_reason = DoneReason::none;
};

NavState reset(const NavConfig& cfg, Rng& rng);

// Throws UsageError if `state` already finished.
StepResult step(const NavConfig& cfg, const NavState& state, const Vector& action, Rng& rng);

// Proportional waypoint controller (pre-slit point, slit exit, goal centre),
// replaced by a uniform random action with probability epsilon.
Point demo_policy(const NavConfig& cfg, const NavState& state, double epsilon, Rng& rng);

// Maps an observation to an action; used for rollouts of any controller.
using PolicyFn = std::function<Vector(const Vector& obs, Rng& rng)>;

struct Rollout {
  Trajectory trajectory;
  bool reached_goal = false;
  bool collided = false;
};

Rollout rollout(const NavConfig& cfg, const PolicyFn& policy, Rng& rng);

struct Demo {
  Trajectory trajectory;
  bool reached_goal = false;
};

std::vector<Demo> generate_demos(const NavConfig& cfg, int n, double epsilon, Rng& rng);

// JSON lines: {"obs": [[x,y],...], "act": [[dx,dy],...], "rew": [...], "done_reason": "..."}
void write_demos(std::ostream& out, const std::vector<Demo>& demos);
void write_demos(const std::filesystem::path& path, const std::vector<Demo>& demos);
// Validates |obs| = |act| + 1 = |rew| + 1; reached_goal is recomputed from
// observations against `cfg.goal_region`.
std::vector<Demo> read_demos(std::istream& in, const NavConfig& cfg);
std::vector<Demo> read_demos(const std::filesystem::path& path, const NavConfig& cfg);

}  // namespace mcac
