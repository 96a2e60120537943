#include "mcac/nav_env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "mcac/errors.hpp"

namespace mcac {

namespace {

constexpr double kControllerGain = 1.0;
constexpr double kWaypointOffset = 0.5;  // distance of pre-slit/exit points from the barrier faces
constexpr double kAlignTolerance = 0.12;

Point clip_action(const NavConfig& cfg, const Point& a) {
  return a.cwiseMax(-cfg.action_bound).cwiseMin(cfg.action_bound);
}

Point clamp_to(const Rect& r, const Point& p) {
  return {std::clamp(p.x(), r.x_min, r.x_max), std::clamp(p.y(), r.y_min, r.y_max)};
}

}  // namespace

bool segment_hits_rect(const Point& p0, const Point& p1, const Rect& r) noexcept {
  // Liang-Barsky: keep the parameter range [t0, t1] of the segment inside r.
  double t0 = 0.0;
  double t1 = 1.0;
  const Point d = p1 - p0;
  auto clip = [&](double p, double q) {
    if (p == 0.0) return q >= 0.0;
    const double t = q / p;
    if (p < 0.0) {
      if (t > t1) return false;
      t0 = std::max(t0, t);
    } else {
      if (t < t0) return false;
      t1 = std::min(t1, t);
    }
    return true;
  };
  return clip(-d.x(), p0.x() - r.x_min) && clip(d.x(), r.x_max - p0.x()) && clip(-d.y(), p0.y() - r.y_min) &&
         clip(d.y(), r.y_max - p0.y()) && t0 <= t1;
}

std::array<Rect, 2> Barrier::solid_parts() const noexcept {
  return {Rect{body.x_min, body.x_max, body.y_min, slit_y_min}, Rect{body.x_min, body.x_max, slit_y_max, body.y_max}};
}

void NavConfig::validate() const {
  if (horizon <= 0) throw ConfigError("horizon must be positive");
  if (!(action_bound > 0.0)) throw ConfigError("action_bound must be positive");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  if (!(barrier.slit_y_max > barrier.slit_y_min)) throw ConfigError("slit width must be positive");
  if (barrier.slit_y_min < barrier.body.y_min || barrier.slit_y_max > barrier.body.y_max) {
    throw ConfigError("slit must lie within the barrier");
  }
  for (const Rect* r : {&workspace, &start_region, &goal_region, &barrier.body}) {
    if (r->x_min > r->x_max || r->y_min > r->y_max) throw ConfigError("rectangle with min > max");
  }
  if (goal_region.intersects(barrier.body)) throw ConfigError("goal region overlaps the barrier");
}

NavState reset(const NavConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> ux(cfg.start_region.x_min, cfg.start_region.x_max);
  std::uniform_real_distribution<double> uy(cfg.start_region.y_min, cfg.start_region.y_max);
  NavState s;
  // degenerate boxes give back the exact corner
  const double x = cfg.start_region.x_min == cfg.start_region.x_max ? cfg.start_region.x_min : ux(rng);
  const double y = cfg.start_region.y_min == cfg.start_region.y_max ? cfg.start_region.y_min : uy(rng);
  s.position = {x, y};
  return s;
}

StepResult step(const NavConfig& cfg, const NavState& state, const Vector& action, Rng& rng) {
  if (state.finished) throw UsageError("step called on a finished episode; call reset first");
  if (action.size() != NavConfig::act_dim) {
    throw ShapeError(fmt::format("action has length {}, expected {}", action.size(), NavConfig::act_dim));
  }
  if (!action.allFinite()) throw NumericError("non-finite action");

  Point next = state.position + clip_action(cfg, Point(action(0), action(1)));
  if (cfg.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    next.x() += noise(rng);
    next.y() += noise(rng);
  }
  next = clamp_to(cfg.workspace, next);

  StepResult r;
  r.next_state.position = next;
  r.next_state.step_index = state.step_index + 1;

  bool collided = false;
  for (const Rect& part : cfg.barrier.solid_parts()) {
    collided = collided || segment_hits_rect(state.position, next, part);
  }
  if (collided) {
    r.reward = cfg.collision_reward;
    r.done = true;
    r.done_reason = DoneReason::collision;
  } else {
    r.reward = cfg.goal_region.contains(next) ? cfg.goal_reward : cfg.step_reward;
    if (r.next_state.step_index >= cfg.horizon) {
      r.done = true;
      r.done_reason = DoneReason::horizon;
    }
  }
  r.next_state.finished = r.done;
  return r;
}

Point demo_policy(const NavConfig& cfg, const NavState& state, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ConfigError(fmt::format("epsilon must be in [0, 1], got {}", epsilon));
  }
  if (epsilon > 0.0) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < epsilon) {
      std::uniform_real_distribution<double> u(-cfg.action_bound, cfg.action_bound);
      const double ax = u(rng);
      return {ax, u(rng)};
    }
  }

  const Barrier& b = cfg.barrier;
  const double slit_y = b.slit_center().y();
  const Point pre_slit{b.body.x_min - kWaypointOffset, slit_y};
  const Point slit_exit{b.body.x_max + kWaypointOffset, slit_y};
  const Point& p = state.position;

  Point waypoint;
  if (p.x() > b.body.x_max) {
    waypoint = cfg.goal_region.center();
  } else if (p.x() >= b.body.x_min) {
    waypoint = slit_exit;
  } else if (std::abs(p.y() - slit_y) <= kAlignTolerance && p.x() >= pre_slit.x() - kAlignTolerance) {
    waypoint = slit_exit;
  } else {
    waypoint = pre_slit;
  }
  return clip_action(cfg, kControllerGain * (waypoint - p));
}

Rollout rollout(const NavConfig& cfg, const PolicyFn& policy, Rng& rng) {
  Rollout out;
  NavState s = reset(cfg, rng);
  while (!s.finished) {
    Vector obs = s.observation();
    Vector a = policy(obs, rng);
    StepResult r = step(cfg, s, a, rng);
    Transition t;
    t.obs = std::move(obs);
    t.action = clip_action(cfg, Point(a(0), a(1)));
    t.next_obs = r.next_state.observation();
    t.reward = r.reward;
    t.done = r.done;
    t.done_reason = r.done_reason;
    out.reached_goal = out.reached_goal || cfg.goal_region.contains(r.next_state.position);
    out.collided = out.collided || r.done_reason == DoneReason::collision;
    out.trajectory.steps.push_back(std::move(t));
    s = r.next_state;
  }
  return out;
}

std::vector<Demo> generate_demos(const NavConfig& cfg, int n, double epsilon, Rng& rng) {
  if (n < 1) throw ConfigError("number of demonstrations must be at least 1");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ConfigError(fmt::format("epsilon must be in [0, 1], got {}", epsilon));
  }
  PolicyFn demonstrator = [&cfg, epsilon](const Vector& obs, Rng& r) -> Vector {
    NavState s;
    s.position = Point(obs(0), obs(1));
    return demo_policy(cfg, s, epsilon, r);
  };
  std::vector<Demo> demos;
  demos.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rollout r = rollout(cfg, demonstrator, rng);
    demos.push_back({std::move(r.trajectory), r.reached_goal});
  }
  return demos;
}

void write_demos(std::ostream& out, const std::vector<Demo>& demos) {
  using nlohmann::json;
  for (const Demo& d : demos) {
    const auto& steps = d.trajectory.steps;
    json obs = json::array();
    json act = json::array();
    json rew = json::array();
    for (const Transition& t : steps) {
      obs.push_back({t.obs(0), t.obs(1)});
      act.push_back({t.action(0), t.action(1)});
      rew.push_back(t.reward);
    }
    if (!steps.empty()) obs.push_back({steps.back().next_obs(0), steps.back().next_obs(1)});
    json line;
    line["obs"] = std::move(obs);
    line["act"] = std::move(act);
    line["rew"] = std::move(rew);
    line["done_reason"] = steps.empty() ? "none" : std::string(to_string(steps.back().done_reason));
    out << line.dump() << '\n';
  }
}

void write_demos(const std::filesystem::path& path, const std::vector<Demo>& demos) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot open {} for writing", path.string()));
  write_demos(out, demos);
}

std::vector<Demo> read_demos(std::istream& in, const NavConfig& cfg) {
  using nlohmann::json;
  std::vector<Demo> demos;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(fmt::format("demo line {}: {}", lineno, e.what()), lineno - 1);
    }
    for (const char* key : {"obs", "act", "rew", "done_reason"}) {
      if (!j.contains(key)) throw ValidationError(fmt::format("demo line {}: missing '{}'", lineno, key), lineno - 1);
    }
    const auto& obs = j["obs"];
    const auto& act = j["act"];
    const auto& rew = j["rew"];
    if (obs.size() != act.size() + 1 || rew.size() != act.size()) {
      throw ValidationError(fmt::format("demo line {}: need |obs| = |act| + 1 = |rew| + 1 (got {}, {}, {})", lineno,
                                        obs.size(), act.size(), rew.size()),
                            lineno - 1);
    }
    const DoneReason reason = parse_done_reason(j["done_reason"].get<std::string>());
    auto to_vec = [&](const json& pt) {
      if (!pt.is_array() || pt.size() != 2) {
        throw ValidationError(fmt::format("demo line {}: points must have two coordinates", lineno), lineno - 1);
      }
      Vector v(2);
      v << pt[0].get<double>(), pt[1].get<double>();
      return v;
    };
    Demo d;
    for (std::size_t k = 0; k < act.size(); ++k) {
      Transition t;
      t.obs = to_vec(obs[k]);
      t.action = to_vec(act[k]);
      t.next_obs = to_vec(obs[k + 1]);
      t.reward = rew[k].get<double>();
      const bool last = k + 1 == act.size();
      t.done_reason = last ? reason : DoneReason::none;
      t.done = t.done_reason != DoneReason::none;
      d.reached_goal = d.reached_goal || cfg.goal_region.contains(Point(t.next_obs(0), t.next_obs(1)));
      d.trajectory.steps.push_back(std::move(t));
    }
    demos.push_back(std::move(d));
  }
  return demos;
}

std::vector<Demo> read_demos(const std::filesystem::path& path, const NavConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  return read_demos(in, cfg);
}

}  // namespace mcac
