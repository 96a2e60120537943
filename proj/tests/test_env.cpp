#include <doctest.h>

#include <sstream>

#include "mcac/errors.hpp"
#include "mcac/nav_env.hpp"

using namespace mcac;

namespace {

NavState at(double x, double y, int step_index = 0) {
  NavState s;
  s.position = Point(x, y);
  s.step_index = step_index;
  return s;
}

Vector action(double dx, double dy) {
  Vector a(2);
  a << dx, dy;
  return a;
}

}  // namespace

TEST_SUITE("env") {
  TEST_CASE("default geometry is valid") {
    NavConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK_FALSE(cfg.goal_region.intersects(cfg.barrier.body));
    NavConfig bad = cfg;
    bad.barrier.slit_y_max = bad.barrier.slit_y_min;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.horizon = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("reset samples the start region and is reproducible") {
    NavConfig cfg;
    Rng a = make_rng(5, 1), b = make_rng(5, 1);
    for (int i = 0; i < 1000; ++i) {
      const NavState s = reset(cfg, a);
      CHECK(cfg.start_region.contains(s.position));
      CHECK(s.step_index == 0);
      CHECK(reset(cfg, b).position == s.position);
    }
    cfg.start_region = Rect{2.0, 2.0, 3.0, 3.0};
    CHECK(reset(cfg, a).position == Point(2.0, 3.0));
  }

  TEST_CASE("zero action without noise stays put") {
    NavConfig cfg;
    cfg.noise_std = 0.0;
    Rng rng = make_rng(0, 1);
    const StepResult r = step(cfg, at(2.0, 2.0), action(0, 0), rng);
    CHECK(r.next_state.position == Point(2.0, 2.0));
    CHECK(r.reward == -1.0);
    CHECK_FALSE(r.done);
    CHECK(r.done_reason == DoneReason::none);
  }

  TEST_CASE("goal gives zero reward") {
    NavConfig cfg;
    cfg.noise_std = 0.0;
    Rng rng = make_rng(0, 1);
    const StepResult r = step(cfg, at(8.8, 1.0), action(0.2, 0.0), rng);
    CHECK(r.reward == 0.0);
    CHECK_FALSE(r.done);
  }

  TEST_CASE("hitting the barrier terminates with the collision penalty") {
    NavConfig cfg;
    cfg.noise_std = 0.0;
    Rng rng = make_rng(0, 1);
    const StepResult r = step(cfg, at(4.6, 2.0), action(0.4, 0.0), rng);
    CHECK(r.reward == -100.0);
    CHECK(r.done);
    CHECK(r.done_reason == DoneReason::collision);
    CHECK(r.next_state.finished);
    CHECK_THROWS_AS(step(cfg, r.next_state, action(0, 0), rng), UsageError);
  }

  TEST_CASE("segments cannot tunnel through the barrier") {
    NavConfig cfg;
    cfg.noise_std = 0.0;
    cfg.action_bound = 1.0;
    Rng rng = make_rng(0, 1);
    // both endpoints outside the 0.4-wide barrier, segment crosses it
    const StepResult r = step(cfg, at(4.7, 2.0), action(0.6, 0.0), rng);
    CHECK(r.done_reason == DoneReason::collision);
    // the same move through the slit is fine
    const StepResult s = step(cfg, at(4.7, 4.3), action(0.6, 0.0), rng);
    CHECK(s.done_reason == DoneReason::none);
    CHECK(s.reward == -1.0);
  }

  TEST_CASE("actions are clipped to the bound") {
    NavConfig cfg;
    cfg.noise_std = 0.0;
    Rng rng = make_rng(0, 1);
    const StepResult r = step(cfg, at(2.0, 2.0), action(3.0, -3.0), rng);
    CHECK(r.next_state.position.x() == doctest::Approx(2.5));
    CHECK(r.next_state.position.y() == doctest::Approx(1.5));
  }

  TEST_CASE("horizon ends the episode") {
    NavConfig cfg;
    Rng rng = make_rng(0, 1);
    const StepResult r = step(cfg, at(2.0, 2.0, cfg.horizon - 1), action(0, 0), rng);
    CHECK(r.done);
    CHECK(r.done_reason == DoneReason::horizon);
    const StepResult e = step(cfg, at(2.0, 2.0, cfg.horizon - 2), action(0, 0), rng);
    CHECK_FALSE(e.done);
  }

  TEST_CASE("bad actions are rejected") {
    NavConfig cfg;
    Rng rng = make_rng(0, 1);
    CHECK_THROWS_AS(step(cfg, at(1, 1), Vector::Zero(3), rng), ShapeError);
    CHECK_THROWS(step(cfg, at(1, 1), action(std::nan(""), 0), rng));
  }

  TEST_CASE("rewards are always in the documented set and episodes are bounded") {
    NavConfig cfg;
    Rng rng = make_rng(9, 1);
    const PolicyFn random_policy = [](const Vector&, Rng& r) {
      std::uniform_real_distribution<double> u(-0.5, 0.5);
      return action(u(r), u(r));
    };
    for (int i = 0; i < 50; ++i) {
      const Rollout ro = rollout(cfg, random_policy, rng);
      CHECK(ro.trajectory.size() <= 100);
      CHECK_NOTHROW(validate_trajectory(ro.trajectory));
      for (const auto& t : ro.trajectory.steps) CHECK((t.reward == -100.0 || t.reward == -1.0 || t.reward == 0.0));
    }
  }

  TEST_CASE("demo controller") {
    NavConfig cfg;
    Rng rng = make_rng(0, 2);
    const Point at_goal = cfg.goal_region.center();
    NavState s;
    s.position = at_goal;
    CHECK(demo_policy(cfg, s, 0.0, rng).norm() < 1e-9);
    CHECK_THROWS_AS(demo_policy(cfg, s, 1.5, rng), ConfigError);

    double mx = 0.0, my = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const Point a = demo_policy(cfg, s, 1.0, rng);
      CHECK(std::abs(a.x()) <= cfg.action_bound);
      CHECK(std::abs(a.y()) <= cfg.action_bound);
      mx += a.x();
      my += a.y();
    }
    CHECK(std::abs(mx / 10000) < 0.01);
    CHECK(std::abs(my / 10000) < 0.01);
  }

  TEST_CASE("epsilon 0 demos are nearly optimal") {
    NavConfig cfg;
    Rng rng = make_rng(0, 2);
    const auto demos = generate_demos(cfg, 20, 0.0, rng);
    REQUIRE(demos.size() == 20);
    int ok = 0;
    for (const auto& d : demos) {
      ok += d.reached_goal ? 1 : 0;
      CHECK(d.trajectory.steps.back().done_reason != DoneReason::collision);
      CHECK(d.trajectory.size() <= 100);
    }
    CHECK(ok >= 18);
    CHECK_THROWS_AS(generate_demos(cfg, 0, 0.0, rng), ConfigError);
  }

  TEST_CASE("noise-free demos are deterministic and single demos work") {
    NavConfig cfg;
    cfg.noise_std = 0.0;
    cfg.start_region = Rect{1.0, 1.0, 1.0, 1.0};
    Rng a = make_rng(1, 2), b = make_rng(2, 2);
    const auto da = generate_demos(cfg, 1, 0.0, a);
    const auto db = generate_demos(cfg, 1, 0.0, b);
    REQUIRE(da.size() == 1);
    CHECK(da[0].reached_goal);
    REQUIRE(da[0].trajectory.size() == db[0].trajectory.size());
    for (std::size_t k = 0; k < da[0].trajectory.size(); ++k) CHECK(da[0].trajectory.steps[k].obs == db[0].trajectory.steps[k].obs);
  }

  TEST_CASE("demo files round trip and are validated") {
    NavConfig cfg;
    Rng rng = make_rng(4, 2);
    const auto demos = generate_demos(cfg, 3, 0.3, rng);
    std::stringstream ss;
    write_demos(ss, demos);
    const std::string text = ss.str();
    std::stringstream again(text);
    const auto back = read_demos(again, cfg);
    REQUIRE(back.size() == demos.size());
    for (std::size_t i = 0; i < demos.size(); ++i) {
      CHECK(back[i].reached_goal == demos[i].reached_goal);
      REQUIRE(back[i].trajectory.size() == demos[i].trajectory.size());
      for (std::size_t k = 0; k < back[i].trajectory.size(); ++k) {
        const auto& x = back[i].trajectory.steps[k];
        const auto& y = demos[i].trajectory.steps[k];
        CHECK(x.obs == y.obs);
        CHECK(x.action == y.action);
        CHECK(x.reward == y.reward);
        CHECK(x.done_reason == y.done_reason);
      }
    }
    std::stringstream same;
    Rng rng2 = make_rng(4, 2);
    write_demos(same, generate_demos(cfg, 3, 0.3, rng2));
    CHECK(same.str() == text);

    std::stringstream bad(R"({"obs": [[0,0],[1,1]], "act": [], "rew": [], "done_reason": "horizon"})");
    CHECK_THROWS_AS(read_demos(bad, cfg), ValidationError);
    std::stringstream missing(R"({"obs": [[0,0]], "act": []})");
    CHECK_THROWS_AS(read_demos(missing, cfg), ValidationError);
  }
}
