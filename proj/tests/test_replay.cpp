#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <sstream>

#include "mcac/errors.hpp"
#include "mcac/replay.hpp"
#include "oracles.hpp"

using namespace mcac;

namespace {

// A chain trajectory on the real line with the given rewards; the last step
// ends with `reason`.
Trajectory chain(const std::vector<double>& rewards, DoneReason reason = DoneReason::horizon) {
  Trajectory t;
  for (std::size_t k = 0; k < rewards.size(); ++k) {
    Transition tr;
    tr.obs = Vector::Constant(2, static_cast<double>(k));
    tr.action = Vector::Constant(2, 0.1);
    tr.next_obs = Vector::Constant(2, static_cast<double>(k + 1));
    tr.reward = rewards[k];
    const bool last = k + 1 == rewards.size();
    tr.done_reason = last ? reason : DoneReason::none;
    tr.done = tr.done_reason != DoneReason::none;
    t.steps.push_back(tr);
  }
  return t;
}

std::vector<double> mc_of(const Trajectory& t) {
  std::vector<double> v;
  for (const auto& s : t.steps) v.push_back(s.mc_inf_return.value());
  return v;
}

}  // namespace

TEST_SUITE("replay") {
  TEST_CASE("constant rewards give r / (1 - gamma) exactly") {
    for (double r : {-1.0, 0.0, -100.0, 0.5}) {
      for (std::size_t len : {1u, 2u, 17u, 100u}) {
        const auto t = mc_inf_annotate(chain(std::vector<double>(len, r)), 0.99);
        for (double v : mc_of(t)) CHECK(v == r / (1.0 - 0.99));
      }
    }
    for (double v : mc_of(mc_inf_annotate(chain(std::vector<double>(30, -1.0)), 0.99))) CHECK(v == doctest::Approx(-100.0));
  }

  TEST_CASE("hand example rewards -1, -1, 0") {
    const auto v = mc_of(mc_inf_annotate(chain({-1.0, -1.0, 0.0}), 0.9));
    CHECK(v[2] == 0.0);
    CHECK(v[1] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(v[0] == doctest::Approx(-1.9).epsilon(1e-12));
    const auto ref = oracle::mc_inf({-1.0, -1.0, 0.0}, 0.9);
    for (int i = 0; i < 3; ++i) CHECK(oracle::rel_err(v[static_cast<std::size_t>(i)], ref[static_cast<std::size_t>(i)]) <= 1e-12);
  }

  TEST_CASE("annotation agrees with the term-by-term oracle on random trajectories") {
    Rng rng = make_rng(8, 0);
    std::uniform_int_distribution<int> len(1, 100);
    std::uniform_int_distribution<int> pick(0, 2);
    const double choices[3] = {-100.0, -1.0, 0.0};
    std::uniform_real_distribution<double> cont(-2.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      std::vector<double> r(static_cast<std::size_t>(len(rng)));
      for (auto& x : r) x = i % 2 ? choices[pick(rng)] : cont(rng);
      const auto got = mc_of(mc_inf_annotate(chain(r), 0.99));
      const auto ref = oracle::mc_inf(r, 0.99);
      for (std::size_t k = 0; k < r.size(); ++k) worst = std::max(worst, oracle::rel_err(got[k], ref[k]));
    }
    CHECK(worst <= 1e-12);
  }

  TEST_CASE("annotation preconditions") {
    CHECK_THROWS_AS(mc_inf_annotate(chain({-1.0}), 1.0), ConfigError);
    CHECK_THROWS_AS(mc_inf_annotate(chain({-1.0}), 0.0), ConfigError);
    CHECK_THROWS_AS(mc_inf_annotate(Trajectory{}, 0.9), UsageError);
  }

  TEST_CASE("insertion grows by trajectory length and annotates everything") {
    ReplayBuffer buf;
    std::size_t total = 0;
    for (int i = 0; i < 20; ++i) {
      const std::size_t len = 10 + static_cast<std::size_t>(i) * 4;
      insert_trajectory(buf, chain(std::vector<double>(len, -1.0)), 0.99, {true, true});
      total += len;
      CHECK(buf.size() == total);
    }
    CHECK(buf.num_trajectories() == 20);
    Rng rng = make_rng(1, 0);
    for (const auto& t : sample_batch(buf, 256, rng)) CHECK(t.mc_inf_return.has_value());
    CHECK(buf.trajectory_of(0) == 0);
    CHECK(buf.offset_in_trajectory(12) == 2);
  }

  TEST_CASE("empty trajectories are ignored and broken ones rejected with the index") {
    ReplayBuffer buf;
    buf.insert(Trajectory{}, 0.99);
    CHECK(buf.empty());

    Trajectory t = chain({-1, -1, -1, -1});
    t.steps[2].obs(0) += 1e-9;
    try {
      buf.insert(t, 0.99);
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(e.index() == 1);
    }
    Trajectory early = chain({-1, -1, -1});
    early.steps[0].done = true;
    early.steps[0].done_reason = DoneReason::collision;
    CHECK_THROWS_AS(buf.insert(early, 0.99), ValidationError);
    CHECK(buf.empty());
  }

  TEST_CASE("sampling needs enough transitions and stays in the support") {
    ReplayBuffer buf;
    buf.insert(chain(std::vector<double>(8, -1.0)), 0.99);
    Rng rng = make_rng(2, 0);
    CHECK_THROWS_AS(buf.sample_indices(9, rng), UsageError);
    for (std::size_t i : buf.sample_indices(8, rng)) CHECK(i < 8);
  }

  TEST_CASE("uniform sampling passes a chi-squared test") {
    ReplayBuffer buf;
    buf.insert(chain(std::vector<double>(10, -1.0)), 0.99);
    Rng rng = make_rng(3, 0);
    std::vector<int> counts(10, 0);
    const int draws = 100000;
    for (int round = 0; round < draws / 10; ++round) {
      for (std::size_t i : buf.sample_indices(10, rng)) ++counts[i];
    }
    double stat = 0.0;
    const double expected = draws / 10.0;
    for (int c : counts) stat += (c - expected) * (c - expected) / expected;
    const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(9.0), stat));
    CHECK(p > 0.001);
  }

  TEST_CASE("capacity evicts whole online trajectories and keeps demos") {
    ReplayBuffer buf(25);
    buf.insert(chain(std::vector<double>(10, 0.0)), 0.99, {true, true});
    buf.insert(chain(std::vector<double>(10, -1.0)), 0.99, {false, false});
    buf.insert(chain(std::vector<double>(10, -2.0)), 0.99, {false, false});
    CHECK(buf.size() == 20);
    CHECK(buf.num_trajectories() == 2);
    CHECK(buf.trajectory(0).is_demo);
    CHECK(buf.at(10).reward == -2.0);
    CHECK_THROWS_AS(buf.insert(chain(std::vector<double>(20, -1.0)), 0.99), ConfigError);
  }

  TEST_CASE("buffer csv layout") {
    ReplayBuffer buf;
    buf.insert(chain({-1.0, 0.0}), 0.5);
    BufferQs qs{{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}};
    std::ostringstream out;
    write_buffer_csv(out, buf, qs);
    std::istringstream in(out.str());
    std::string header, row;
    std::getline(in, header);
    CHECK(header == "obs_0,obs_1,act_0,act_1,reward,done,mc_inf_return,q_bellman,q_gqe,q_mcac");
    std::getline(in, row);
    CHECK(row == "0,0,0.10000000000000001,0.10000000000000001,-1,0,-1,1,3,5");
    BufferQs short_qs{{1.0}, {1.0}, {1.0}};
    CHECK_THROWS_AS(write_buffer_csv(out, buf, short_qs), ShapeError);
  }
}
