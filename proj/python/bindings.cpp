#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>
#include <memory>
#include <sstream>

#include "mcac/errors.hpp"
#include "mcac/harness.hpp"
#include "mcac/replay.hpp"
#include "mcac/targets.hpp"

namespace py = pybind11;
using namespace mcac;

namespace {

double gqe_from_lists(const std::vector<double>& rewards, const std::vector<bool>& terminals, double gamma,
                      double lambda, int n, const std::vector<double>& q_lookahead) {
  std::unique_ptr<bool[]> flags(new bool[terminals.size()]);
  for (std::size_t i = 0; i < terminals.size(); ++i) flags[i] = terminals[i];
  return gqe_target(rewards, std::span<const bool>(flags.get(), terminals.size()), gamma, lambda, n, q_lookahead);
}

std::vector<double> mc_inf_returns(const std::vector<double>& rewards, double gamma) {
  Trajectory t;
  for (std::size_t k = 0; k < rewards.size(); ++k) {
    Transition tr;
    tr.obs = Vector::Constant(2, static_cast<double>(k));
    tr.next_obs = Vector::Constant(2, static_cast<double>(k + 1));
    tr.action = Vector::Zero(2);
    tr.reward = rewards[k];
    tr.done = k + 1 == rewards.size();
    tr.done_reason = tr.done ? DoneReason::horizon : DoneReason::none;
    t.steps.push_back(tr);
  }
  std::vector<double> out;
  for (const auto& s : mc_inf_annotate(std::move(t), gamma).steps) out.push_back(*s.mc_inf_return);
  return out;
}

py::dict demo_to_dict(const Demo& d) {
  const auto& steps = d.trajectory.steps;
  Matrix obs(static_cast<Eigen::Index>(steps.size() + 1), 2), act(static_cast<Eigen::Index>(steps.size()), 2);
  std::vector<double> rew;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    obs.row(static_cast<Eigen::Index>(k)) = steps[k].obs.transpose();
    act.row(static_cast<Eigen::Index>(k)) = steps[k].action.transpose();
    rew.push_back(steps[k].reward);
  }
  if (!steps.empty()) obs.row(static_cast<Eigen::Index>(steps.size())) = steps.back().next_obs.transpose();
  py::dict out;
  out["obs"] = obs;
  out["act"] = act;
  out["rew"] = rew;
  out["done_reason"] = steps.empty() ? std::string("none") : std::string(to_string(steps.back().done_reason));
  out["reached_goal"] = d.reached_goal;
  return out;
}

// Stateful wrapper for interactive use.
class NavEnv {
 public:
  explicit NavEnv(std::uint64_t seed) : rng_(make_rng(seed, streams::env)) {}

  Vector reset() {
    state_ = mcac::reset(cfg_, rng_);
    return state_.observation();
  }

  py::tuple step(const Vector& action) {
    const StepResult r = mcac::step(cfg_, state_, action, rng_);
    state_ = r.next_state;
    return py::make_tuple(state_.observation(), r.reward, r.done, std::string(to_string(r.done_reason)));
  }

  int horizon() const { return cfg_.horizon; }

 private:
  NavConfig cfg_;
  NavState state_;
  Rng rng_;
};

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  m.def("td1_target", &td1_target, py::arg("reward"), py::arg("done"), py::arg("gamma"), py::arg("next_q"));
  m.def("mcac_combine", &mcac_combine, py::arg("base_target"), py::arg("mc_inf_return"));
  m.def("gqe_target", &gqe_from_lists, py::arg("rewards"), py::arg("terminals"), py::arg("gamma"), py::arg("lam"),
        py::arg("n"), py::arg("q_lookahead"));
  m.def("lambda_mix_target", &lambda_mix_target, py::arg("base_target"), py::arg("mc_inf_return"), py::arg("lam"));
  m.def(
      "critic_tail_mc_target",
      [](const std::vector<double>& rewards, double gamma, double tail_q) { return critic_tail_mc_target(rewards, gamma, tail_q); },
      py::arg("rewards"), py::arg("gamma"), py::arg("tail_q"));
  m.def("mc_inf_returns", &mc_inf_returns, py::arg("rewards"), py::arg("gamma"),
        "MC-infinity return for every step of one trajectory with these rewards.");

  py::class_<NavEnv>(m, "NavEnv")
      .def(py::init<std::uint64_t>(), py::arg("seed") = 0)
      .def("reset", &NavEnv::reset)
      .def("step", &NavEnv::step, py::arg("action"), "Returns (obs, reward, done, done_reason).")
      .def_property_readonly("horizon", &NavEnv::horizon);

  m.def(
      "generate_demos",
      [](int n, double epsilon, std::uint64_t seed) {
        Rng rng = make_rng(seed, streams::demos);
        py::list out;
        for (const Demo& d : generate_demos(NavConfig{}, n, epsilon, rng)) out.append(demo_to_dict(d));
        return out;
      },
      py::arg("n"), py::arg("epsilon") = 0.0, py::arg("seed") = 0);

  m.def(
      "train",
      [](const std::filesystem::path& config, std::uint64_t seed, const std::filesystem::path& out,
         std::optional<int> episodes) {
        RunConfig cfg = load_run_config(config);
        cfg.seed = seed;
        cfg.output_dir = out;
        if (episodes) cfg.total_episodes = *episodes;
        {
          py::gil_scoped_release release;
          train(cfg);
        }
        return py::module_::import("json").attr("loads")(read_file(out / "summary.json"));
      },
      py::arg("config"), py::arg("seed"), py::arg("out"), py::arg("episodes") = py::none(),
      "Runs one training job and returns the parsed summary.json.");

  m.def(
      "dump_qs",
      [](const std::filesystem::path& checkpoint) {
        std::ostringstream out;
        dump_qs_from_checkpoint(checkpoint, out);
        return out.str();
      },
      py::arg("checkpoint"), "Buffer CSV text for a checkpoint directory.");

  m.attr("METRICS_HEADER") = kMetricsHeader;
}
