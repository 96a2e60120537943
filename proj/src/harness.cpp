#include "mcac/harness.hpp"

#include <chrono>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "mcac/errors.hpp"

namespace mcac {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Batch matrices are large enough that glibc would otherwise mmap and unmap
// them on every update.
void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

// Reads keys from one TOML table and remembers which ones were consumed so
// that leftovers can be reported as unknown.
class TableReader {
 public:
  TableReader(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  template <typename T>
  void get(const char* key, T& out) {
    const toml::node* node = lookup(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node->value_exact<bool>();
      if (!v) throw type_error(key, "a boolean");
      out = *v;
    } else if constexpr (std::is_floating_point_v<T>) {
      auto v = node->value<double>();
      if (!v || !(node->is_floating_point() || node->is_integer())) throw type_error(key, "a number");
      out = *v;
    } else if constexpr (std::is_integral_v<T>) {
      auto v = node->value_exact<std::int64_t>();
      if (!v) throw type_error(key, "an integer");
      if (*v < static_cast<std::int64_t>(std::numeric_limits<T>::min()) ||
          static_cast<std::uint64_t>(std::max<std::int64_t>(*v, 0)) > std::numeric_limits<T>::max()) {
        throw ConfigError(fmt::format("[{}].{} = {} is out of range", name_, key, *v));
      }
      out = static_cast<T>(*v);
    } else {
      auto v = node->value_exact<std::string>();
      if (!v) throw type_error(key, "a string");
      out = *v;
    }
  }

  void get_numbers(const char* key, std::vector<double>& out, std::size_t expected) {
    const toml::node* node = lookup(key);
    if (!node) return;
    const toml::array* arr = node->as_array();
    if (!arr || arr->size() != expected) throw type_error(key, fmt::format("an array of {} numbers", expected).c_str());
    out.clear();
    for (const auto& el : *arr) {
      auto v = el.value<double>();
      if (!v) throw type_error(key, "an array of numbers");
      out.push_back(*v);
    }
  }

  void get_rect(const char* key, Rect& r) {
    std::vector<double> v;
    get_numbers(key, v, 4);
    if (!v.empty()) r = Rect{v[0], v[1], v[2], v[3]};
  }

  void get_ints(const char* key, std::vector<int>& out) {
    const toml::node* node = lookup(key);
    if (!node) return;
    const toml::array* arr = node->as_array();
    if (!arr) throw type_error(key, "an array of integers");
    out.clear();
    for (const auto& el : *arr) {
      auto v = el.value_exact<std::int64_t>();
      if (!v) throw type_error(key, "an array of integers");
      out.push_back(static_cast<int>(*v));
    }
  }

  bool has(const char* key) const { return table_ && table_->contains(key); }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      if (!used_.count(std::string(k.str()))) throw ConfigError(fmt::format("unknown key [{}].{}", name_, k.str()));
    }
  }

 private:
  const toml::node* lookup(const char* key) {
    used_.insert(key);
    return table_ ? table_->get(key) : nullptr;
  }
  ConfigError type_error(const char* key, const char* what) const {
    return ConfigError(fmt::format("[{}].{} must be {}", name_, key, what));
  }

  const toml::table* table_;
  std::string name_;
  std::set<std::string> used_;
};

std::string num(double x) { return fmt::format("{:.17g}", x); }

std::string opt_num(const std::optional<double>& x) { return x ? num(*x) : num(kNaN); }

std::string rect_toml(const Rect& r) {
  return fmt::format("[{}, {}, {}, {}]", num(r.x_min), num(r.x_max), num(r.y_min), num(r.y_max));
}

std::string toml_string(const std::string& s) {
  std::ostringstream os;
  os << toml::value<std::string>(s);
  return os.str();
}

double parse_number(const std::string& text, const char* what) {
  const char* begin = text.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (text.empty() || end != begin + text.size() || !std::isfinite(v)) {
    throw ConfigError(fmt::format("bad {} '{}'", what, text));
  }
  return v;
}

int parse_int(const std::string& text, const char* what) {
  const double v = parse_number(text, what);
  if (v != std::floor(v) || v < 0 || v > std::numeric_limits<int>::max()) {
    throw ConfigError(fmt::format("bad {} '{}'", what, text));
  }
  return static_cast<int>(v);
}

std::vector<std::string> split_grid(const std::string& grid) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(grid);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, e - b + 1));
  }
  if (out.empty()) throw ConfigError("sweep grid is empty");
  return out;
}

void write_failed_batch(const std::filesystem::path& path, const Batch& batch) {
  std::ofstream out(path);
  out << "buffer_index";
  for (Eigen::Index i = 0; i < batch.obs.rows(); ++i) out << ",obs_" << i;
  for (Eigen::Index i = 0; i < batch.actions.rows(); ++i) out << ",act_" << i;
  for (Eigen::Index i = 0; i < batch.next_obs.rows(); ++i) out << ",next_obs_" << i;
  out << ",reward,terminal,mc_inf_return\n";
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    out << batch.indices[j];
    for (Eigen::Index i = 0; i < batch.obs.rows(); ++i) out << ',' << num(batch.obs(i, c));
    for (Eigen::Index i = 0; i < batch.actions.rows(); ++i) out << ',' << num(batch.actions(i, c));
    for (Eigen::Index i = 0; i < batch.next_obs.rows(); ++i) out << ',' << num(batch.next_obs(i, c));
    out << ',' << num(batch.rewards(c)) << ',' << (batch.terminal[j] ? 1 : 0) << ',' << num(batch.mc_inf(c)) << '\n';
  }
}

// Update on a freshly sampled batch; numeric failures leave the batch on disk.
UpdateStats guarded_update(ActorCritic& agent, const ReplayBuffer& buf, Rng& rng, const std::filesystem::path& out) {
  const auto idx = buf.sample_indices(static_cast<std::size_t>(agent.config().batch_size), rng);
  const Batch batch = make_batch(buf, idx);
  try {
    return update_on_batch(agent, buf, batch);
  } catch (const NumericError& e) {
    write_failed_batch(out / "failed_batch.csv", batch);
    throw NumericError(fmt::format("{} (batch written to {})", e.what(), (out / "failed_batch.csv").string()));
  }
}

nlohmann::json summary_json(const TrainSummary& s) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json { return v ? nlohmann::json(*v) : nlohmann::json(); };
  nlohmann::json j{
      {"demo_count", s.demo_count},
      {"demo_successes", s.demo_successes},
      {"seeded_transitions", s.seeded_transitions},
      {"pretrain_steps", s.pretrain_steps},
      {"pretrain_final_critic_loss", opt(s.pretrain_final_critic_loss)},
      {"episodes", s.episodes},
      {"env_steps", s.env_steps},
      {"updates", s.updates},
      {"dominance_violations", s.dominance_violations},
      {"final_smoothed_return", opt(s.final_smoothed_return)},
      {"bc_initial_loss", opt(s.bc_initial_loss)},
      {"bc_final_loss", opt(s.bc_final_loss)},
  };
  if (s.final_eval) {
    j["final_eval"] = {{"mean_return", s.final_eval->mean_return}, {"success_rate", s.final_eval->success_rate}};
  } else {
    j["final_eval"] = nullptr;
  }
  return j;
}

}  // namespace

void RunConfig::validate() const {
  env.validate();
  agent.validate();
  if (agent.action_bound != env.action_bound) throw ConfigError("agent and env action bounds differ");
  if (agent.obs_dim != NavConfig::obs_dim || agent.act_dim != NavConfig::act_dim) {
    throw ConfigError("agent dimensions do not match the navigation task");
  }
  if (total_episodes < 0) throw ConfigError("total_episodes must be non-negative");
  if (max_env_steps < 0) throw ConfigError("max_env_steps must be non-negative");
  if (eval_every < 0) throw ConfigError("eval_every must be non-negative");
  if (eval_every > 0 && eval_rollouts < 1) throw ConfigError("eval_rollouts must be >= 1");
  if (!demos.file) {
    if (demos.count < 0) throw ConfigError("demo_count must be non-negative");
    if (!(demos.epsilon >= 0.0 && demos.epsilon <= 1.0)) throw ConfigError("demo_epsilon must be in [0, 1]");
  }
}

RunConfig parse_run_config(std::istream& in, const std::string& source_name) {
  toml::table root;
  try {
    root = toml::parse(in, source_name);
  } catch (const toml::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", source_name, e.description()));
  }
  for (const auto& [k, v] : root) {
    if (k != "env" && k != "agent" && k != "run") throw ConfigError(fmt::format("unknown table [{}]", k.str()));
    if (!v.is_table()) throw ConfigError(fmt::format("[{}] must be a table", k.str()));
  }

  RunConfig cfg;
  TableReader env(root["env"].as_table(), "env");
  env.get("horizon", cfg.env.horizon);
  env.get("action_bound", cfg.env.action_bound);
  env.get("noise_std", cfg.env.noise_std);
  env.get("collision_reward", cfg.env.collision_reward);
  env.get("step_reward", cfg.env.step_reward);
  env.get("goal_reward", cfg.env.goal_reward);
  env.get_rect("workspace", cfg.env.workspace);
  env.get_rect("start_region", cfg.env.start_region);
  env.get_rect("goal_region", cfg.env.goal_region);
  env.get_rect("barrier", cfg.env.barrier.body);
  std::vector<double> slit;
  env.get_numbers("slit", slit, 2);
  if (!slit.empty()) {
    cfg.env.barrier.slit_y_min = slit[0];
    cfg.env.barrier.slit_y_max = slit[1];
  }
  env.finish();

  TableReader ag(root["agent"].as_table(), "agent");
  AgentConfig& a = cfg.agent;
  std::string algorithm = std::string(to_string(a.algorithm));
  ag.get("algorithm", algorithm);
  a.algorithm = parse_algorithm(algorithm);
  ag.get("mcac", a.mcac);
  std::string family = std::string(to_string(AgentConfig::default_family(a.algorithm, a.mcac)));
  ag.get("target_family", family);
  a.target.family = parse_target_family(family);
  ag.get("gamma", a.target.gamma);
  ag.get("gqe_lambda", a.target.gqe_lambda);
  ag.get("gqe_n", a.target.gqe_n);
  ag.get("mix_lambda", a.target.mix_lambda);
  ag.get("actor_lr", a.actor_lr);
  ag.get("critic_lr", a.critic_lr);
  ag.get("alpha", a.alpha);
  bool auto_entropy = false;
  ag.get("automatic_entropy_tuning", auto_entropy);
  if (auto_entropy) throw ConfigError("automatic entropy tuning is not supported; alpha is fixed");
  ag.get("tau", a.tau);
  ag.get("batch_size", a.batch_size);
  ag.get("pretrain_steps", a.pretrain_steps);
  ag.get("updates_per_timestep", a.updates_per_timestep);
  ag.get("policy_delay", a.td3.policy_delay);
  ag.get("target_noise_std", a.td3.target_noise_std);
  ag.get("target_noise_clip", a.td3.target_noise_clip);
  ag.get("exploration_noise_std", a.td3.exploration_noise_std);
  ag.get_ints("hidden", a.hidden);
  ag.get("bc_lr", a.bc_lr);
  ag.get("bc_steps", a.bc_steps);
  ag.finish();
  a.action_bound = cfg.env.action_bound;

  TableReader run(root["run"].as_table(), "run");
  run.get("total_episodes", cfg.total_episodes);
  run.get("max_env_steps", cfg.max_env_steps);
  run.get("eval_every", cfg.eval_every);
  run.get("eval_rollouts", cfg.eval_rollouts);
  run.get("seed", cfg.seed);
  run.get("demo_count", cfg.demos.count);
  run.get("demo_epsilon", cfg.demos.epsilon);
  if (run.has("demo_file")) {
    std::string file;
    run.get("demo_file", file);
    cfg.demos.file = file;
  }
  run.get("replay_capacity", cfg.replay_capacity);
  std::string out_dir = cfg.output_dir.string();
  run.get("output_dir", out_dir);
  cfg.output_dir = out_dir;
  run.finish();

  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
  return parse_run_config(in, path.string());
}

void write_run_config(std::ostream& out, const RunConfig& cfg) {
  const NavConfig& e = cfg.env;
  const AgentConfig& a = cfg.agent;
  out << "[env]\n"
      << "horizon = " << e.horizon << '\n'
      << "action_bound = " << num(e.action_bound) << '\n'
      << "noise_std = " << num(e.noise_std) << '\n'
      << "collision_reward = " << num(e.collision_reward) << '\n'
      << "step_reward = " << num(e.step_reward) << '\n'
      << "goal_reward = " << num(e.goal_reward) << '\n'
      << "workspace = " << rect_toml(e.workspace) << '\n'
      << "start_region = " << rect_toml(e.start_region) << '\n'
      << "goal_region = " << rect_toml(e.goal_region) << '\n'
      << "barrier = " << rect_toml(e.barrier.body) << '\n'
      << "slit = [" << num(e.barrier.slit_y_min) << ", " << num(e.barrier.slit_y_max) << "]\n\n";
  out << "[agent]\n"
      << "algorithm = \"" << to_string(a.algorithm) << "\"\n"
      << "mcac = " << (a.mcac ? "true" : "false") << '\n'
      << "target_family = \"" << to_string(a.target.family) << "\"\n"
      << "gamma = " << num(a.target.gamma) << '\n'
      << "gqe_lambda = " << num(a.target.gqe_lambda) << '\n'
      << "gqe_n = " << a.target.gqe_n << '\n'
      << "mix_lambda = " << num(a.target.mix_lambda) << '\n'
      << "actor_lr = " << num(a.actor_lr) << '\n'
      << "critic_lr = " << num(a.critic_lr) << '\n'
      << "alpha = " << num(a.alpha) << '\n'
      << "automatic_entropy_tuning = false\n"
      << "tau = " << num(a.tau) << '\n'
      << "batch_size = " << a.batch_size << '\n'
      << "pretrain_steps = " << a.pretrain_steps << '\n'
      << "updates_per_timestep = " << a.updates_per_timestep << '\n'
      << "policy_delay = " << a.td3.policy_delay << '\n'
      << "target_noise_std = " << num(a.td3.target_noise_std) << '\n'
      << "target_noise_clip = " << num(a.td3.target_noise_clip) << '\n'
      << "exploration_noise_std = " << num(a.td3.exploration_noise_std) << '\n'
      << "hidden = [" << fmt::format("{}", fmt::join(a.hidden, ", ")) << "]\n"
      << "bc_lr = " << num(a.bc_lr) << '\n'
      << "bc_steps = " << a.bc_steps << "\n\n";
  out << "[run]\n"
      << "total_episodes = " << cfg.total_episodes << '\n'
      << "max_env_steps = " << cfg.max_env_steps << '\n'
      << "eval_every = " << cfg.eval_every << '\n'
      << "eval_rollouts = " << cfg.eval_rollouts << '\n'
      << "seed = " << cfg.seed << '\n'
      << "demo_count = " << cfg.demos.count << '\n'
      << "demo_epsilon = " << num(cfg.demos.epsilon) << '\n';
  if (cfg.demos.file) out << "demo_file = " << toml_string(cfg.demos.file->string()) << '\n';
  out << "replay_capacity = " << cfg.replay_capacity << '\n'
      << "output_dir = " << toml_string(cfg.output_dir.string()) << '\n';
}

void write_metrics_header(std::ostream& out) { out << kMetricsHeader << '\n'; }

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  out << r.episode << ',' << r.env_steps << ',' << num(r.episode_return) << ',' << num(r.smoothed_return) << ','
      << (r.success ? 1 : 0) << ',' << (r.collision ? 1 : 0) << ',' << num(r.mean_base_target) << ','
      << num(r.mean_mc_inf) << ',' << num(r.mean_target) << ',' << num(r.success_gap) << ',' << r.success_rows << ','
      << r.dominance_violations << ',' << opt_num(r.eval_return) << ',' << opt_num(r.eval_success) << '\n';
}

double smooth(std::optional<double> previous, double raw) {
  return previous ? 0.9 * *previous + 0.1 * raw : raw;
}

EvalResult evaluate(const PolicyFn& policy, const NavConfig& env, int k, Rng& rng) {
  if (k < 1) throw ConfigError(fmt::format("evaluation needs k >= 1 rollouts, got {}", k));
  EvalResult res;
  for (int i = 0; i < k; ++i) {
    const Rollout r = rollout(env, policy, rng);
    res.mean_return += r.trajectory.total_reward();
    res.success_rate += r.reached_goal ? 1.0 : 0.0;
  }
  res.mean_return /= k;
  res.success_rate /= k;
  return res;
}

EvalResult evaluate(const ActorCritic& agent, const NavConfig& env, int k, Rng& rng) {
  return evaluate(agent.as_policy(ActMode::eval), env, k, rng);
}

std::vector<Demo> load_or_generate_demos(const RunConfig& cfg) {
  if (cfg.demos.file) return read_demos(*cfg.demos.file, cfg.env);
  if (cfg.demos.count == 0) return {};
  Rng rng = make_rng(cfg.seed, streams::demos);
  return generate_demos(cfg.env, cfg.demos.count, cfg.demos.epsilon, rng);
}

void save_buffer(const std::filesystem::path& dir, const ReplayBuffer& buf) {
  std::filesystem::create_directories(dir);
  std::vector<Demo> trajs;
  nlohmann::json tags = nlohmann::json::array();
  for (std::size_t id = 0; id < buf.num_trajectories(); ++id) {
    const TrajectoryInfo& info = buf.trajectory(id);
    Demo d;
    d.reached_goal = info.reached_goal;
    for (std::size_t k = 0; k < info.length; ++k) d.trajectory.steps.push_back(buf.at(info.start + k));
    trajs.push_back(std::move(d));
    tags.push_back(info.is_demo);
  }
  write_demos(dir / "buffer.jsonl", trajs);
  std::ofstream(dir / "buffer_tags.json") << nlohmann::json{{"is_demo", tags}}.dump() << '\n';
}

ReplayBuffer load_buffer(const std::filesystem::path& dir, const NavConfig& env, double gamma) {
  const auto trajs = read_demos(dir / "buffer.jsonl", env);
  std::ifstream tag_in(dir / "buffer_tags.json");
  if (!tag_in) throw std::runtime_error(fmt::format("no buffer_tags.json in {}", dir.string()));
  const auto tags = nlohmann::json::parse(tag_in).at("is_demo").get<std::vector<bool>>();
  if (tags.size() != trajs.size()) throw ValidationError("buffer_tags.json does not match buffer.jsonl", tags.size());
  ReplayBuffer buf;
  for (std::size_t i = 0; i < trajs.size(); ++i) buf.insert(trajs[i].trajectory, gamma, {tags[i], trajs[i].reached_goal});
  return buf;
}

BufferQs dump_buffer_qs(ActorCritic& agent, const ReplayBuffer& buf) {
  BufferQs qs;
  constexpr std::size_t kChunk = 1024;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < buf.size(); start += kChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(buf.size(), start + kChunk); ++i) idx.push_back(i);
    const Batch batch = make_batch(buf, idx);
    const Vector bellman = agent.one_step_targets(batch);
    const Vector gqe = agent.gqe_targets(buf, batch);
    for (Eigen::Index j = 0; j < bellman.size(); ++j) {
      qs.bellman.push_back(bellman(j));
      qs.gqe.push_back(gqe(j));
      qs.mcac.push_back(mcac_combine(bellman(j), batch.mc_inf(j)));
    }
  }
  return qs;
}

void dump_qs_from_checkpoint(const std::filesystem::path& checkpoint, std::ostream& out) {
  const RunConfig cfg = load_run_config(checkpoint / "config.toml");
  ActorCritic agent = ActorCritic::load(checkpoint);
  const ReplayBuffer buf = load_buffer(checkpoint, cfg.env, cfg.agent.gamma());
  write_buffer_csv(out, buf, dump_buffer_qs(agent, buf));
}

TrainResult train(const RunConfig& cfg) {
  cfg.validate();
  keep_large_blocks_on_heap();
  const auto& out = cfg.output_dir;
  std::filesystem::create_directories(out);
  {
    std::ofstream c(out / "config.toml");
    write_run_config(c, cfg);
  }

  TrainResult result;
  TrainSummary& summary = result.summary;
  const double gamma = cfg.agent.gamma();

  const std::vector<Demo> demos = load_or_generate_demos(cfg);
  ReplayBuffer buf(cfg.replay_capacity ? std::optional<std::size_t>(cfg.replay_capacity) : std::nullopt);
  for (const auto& d : demos) {
    buf.insert(d.trajectory, gamma, {true, d.reached_goal});
    summary.demo_successes += d.reached_goal ? 1 : 0;
  }
  summary.demo_count = static_cast<int>(demos.size());
  summary.seeded_transitions = buf.size();

  std::ofstream metrics(out / "metrics.csv");
  write_metrics_header(metrics);
  std::ofstream timing(out / "timing.csv");
  timing << "episode,wall_seconds\n";
  auto write_summary = [&] { std::ofstream(out / "summary.json") << summary_json(summary).dump(2) << '\n'; };

  Rng eval_rng = make_rng(cfg.seed, streams::eval);

  if (cfg.agent.algorithm == Algorithm::bc) {
    std::vector<Trajectory> trajs;
    for (const auto& d : demos) trajs.push_back(d.trajectory);
    Rng bc_rng = make_rng(cfg.seed, streams::bc);
    const BcResult bc = bc_fit(trajs, cfg.agent, bc_rng);
    summary.bc_initial_loss = bc.initial_loss;
    summary.bc_final_loss = bc.final_loss;
    summary.final_eval = evaluate(bc.policy.as_policy(), cfg.env, std::max(cfg.eval_rollouts, 1), eval_rng);
    std::filesystem::create_directories(out / "checkpoint");
    save_mlp(out / "checkpoint" / "policy.mlp", bc.policy.net);
    write_summary();
    return result;
  }

  ActorCritic agent(cfg.agent, cfg.seed);
  Rng sample_rng = make_rng(cfg.seed, streams::sampling);
  Rng env_rng = make_rng(cfg.seed, streams::env);
  Rng act_rng = make_rng(cfg.seed, streams::act);

  if (cfg.agent.pretrain_steps > 0) {
    if (buf.empty()) throw UsageError("pretraining needs demonstrations in the buffer");
    for (int i = 0; i < cfg.agent.pretrain_steps; ++i) {
      const UpdateStats st = guarded_update(agent, buf, sample_rng, out);
      summary.dominance_violations += st.dominance_violations;
      summary.pretrain_final_critic_loss = st.critic_loss;
    }
  }
  summary.pretrain_steps = cfg.agent.pretrain_steps;

  const auto clock_start = std::chrono::steady_clock::now();
  std::optional<double> smoothed;
  const auto batch = static_cast<std::size_t>(cfg.agent.batch_size);
  for (int ep = 0; ep < cfg.total_episodes; ++ep) {
    if (cfg.max_env_steps > 0 && summary.env_steps + cfg.env.horizon > cfg.max_env_steps) break;

    MetricsRow row;
    row.episode = ep;
    double base_sum = 0.0, mc_sum = 0.0, target_sum = 0.0, gap_sum = 0.0;
    int updates = 0;

    Trajectory traj;
    NavState s = reset(cfg.env, env_rng);
    while (!s.finished) {
      Transition t;
      t.obs = s.observation();
      t.action = agent.act(t.obs, ActMode::explore, act_rng);
      const StepResult r = step(cfg.env, s, t.action, env_rng);
      t.next_obs = r.next_state.observation();
      t.reward = r.reward;
      t.done = r.done;
      t.done_reason = r.done_reason;
      row.success = row.success || cfg.env.goal_region.contains(r.next_state.position);
      row.collision = row.collision || r.done_reason == DoneReason::collision;
      traj.steps.push_back(std::move(t));

      for (int u = 0; u < cfg.agent.updates_per_timestep && buf.size() >= batch; ++u) {
        const UpdateStats st = guarded_update(agent, buf, sample_rng, out);
        base_sum += st.mean_base_target;
        mc_sum += st.mean_mc_inf;
        target_sum += st.mean_target;
        gap_sum += st.success_gap_sum;
        row.success_rows += st.success_rows;
        row.dominance_violations += st.dominance_violations;
        ++updates;
      }
      s = r.next_state;
    }

    row.episode_return = traj.total_reward();
    summary.env_steps += static_cast<std::int64_t>(traj.size());
    row.env_steps = summary.env_steps;
    buf.insert(std::move(traj), gamma, {false, row.success});

    row.mean_base_target = updates ? base_sum / updates : kNaN;
    row.mean_mc_inf = updates ? mc_sum / updates : kNaN;
    row.mean_target = updates ? target_sum / updates : kNaN;
    row.success_gap = row.success_rows ? gap_sum / row.success_rows : kNaN;
    smoothed = smooth(smoothed, row.episode_return);
    row.smoothed_return = *smoothed;
    summary.updates += updates;
    summary.dominance_violations += row.dominance_violations;

    if (cfg.eval_every > 0 && (ep + 1) % cfg.eval_every == 0) {
      const EvalResult ev = evaluate(agent, cfg.env, cfg.eval_rollouts, eval_rng);
      row.eval_return = ev.mean_return;
      row.eval_success = ev.success_rate;
      summary.final_eval = ev;
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();

    write_metrics_row(metrics, row);
    metrics.flush();
    timing << ep << ',' << num(row.wall_seconds) << '\n';
    timing.flush();
    result.rows.push_back(row);
    summary.episodes = ep + 1;
  }
  summary.final_smoothed_return = smoothed;

  const auto ckpt = out / "checkpoint";
  agent.save(ckpt);
  {
    std::ofstream c(ckpt / "config.toml");
    write_run_config(c, cfg);
  }
  save_buffer(ckpt, buf);
  write_summary();
  return result;
}

std::string_view to_string(SweepKind kind) {
  switch (kind) {
    case SweepKind::demo_quality: return "demo_quality";
    case SweepKind::demo_quantity: return "demo_quantity";
    case SweepKind::pretrain_onoff: return "pretrain_onoff";
    case SweepKind::target_family: return "target_family";
  }
  return "demo_quality";
}

SweepKind parse_sweep_kind(std::string_view name) {
  for (auto k : {SweepKind::demo_quality, SweepKind::demo_quantity, SweepKind::pretrain_onoff, SweepKind::target_family}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError(fmt::format("unknown sweep kind '{}'", name));
}

std::vector<SweepCell> expand_grid(SweepKind kind, const std::string& grid, const RunConfig& base) {
  std::vector<SweepCell> cells;
  for (const std::string& v : split_grid(grid)) {
    SweepCell cell{"", base};
    RunConfig& c = cell.config;
    switch (kind) {
      case SweepKind::demo_quality:
        c.demos.file.reset();
        c.demos.epsilon = parse_number(v, "epsilon");
        cell.label = "epsilon_" + v;
        break;
      case SweepKind::demo_quantity:
        c.demos.file.reset();
        c.demos.count = parse_int(v, "demo count");
        cell.label = "demos_" + v;
        break;
      case SweepKind::pretrain_onoff:
        if (v == "on") {
          if (c.agent.pretrain_steps == 0) c.agent.pretrain_steps = 10000;
        } else if (v == "off") {
          c.agent.pretrain_steps = 0;
        } else {
          c.agent.pretrain_steps = parse_int(v, "pretrain steps");
        }
        cell.label = "pretrain_" + v;
        break;
      case SweepKind::target_family: {
        const auto colon = v.find(':');
        const TargetFamily family = parse_target_family(v.substr(0, colon));
        c.agent.target.family = family;
        if (colon != std::string::npos) {
          if (family != TargetFamily::lambda_mix) throw ConfigError(fmt::format("only lambda_mix takes a weight: '{}'", v));
          c.agent.target.mix_lambda = parse_number(v.substr(colon + 1), "mixture weight");
        }
        c.agent.mcac = c.agent.target.uses_mcac_max();
        if (c.agent.target.uses_gqe()) {
          c.agent.algorithm = Algorithm::gqe;
        } else if (c.agent.algorithm == Algorithm::gqe || c.agent.algorithm == Algorithm::bc) {
          c.agent.algorithm = Algorithm::sac;
        }
        cell.label = "family_" + v;
        for (char& ch : cell.label) ch = ch == ':' ? '_' : ch;
        break;
      }
    }
    c.validate();
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::vector<SweepCellSummary> sweep(SweepKind kind, const std::string& grid, const RunConfig& base,
                                    const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out) {
  if (seeds.empty()) throw ConfigError("sweep needs at least one seed");
  const auto cells = expand_grid(kind, grid, base);
  std::filesystem::create_directories(out);
  std::ofstream failures(out / "failures.csv");
  failures << "cell,seed,error\n";

  std::vector<SweepCellSummary> summaries;
  for (const auto& cell : cells) {
    SweepCellSummary s;
    s.label = cell.label;
    std::vector<double> finals;
    for (std::uint64_t seed : seeds) {
      RunConfig c = cell.config;
      c.seed = seed;
      c.output_dir = out / cell.label / fmt::format("seed_{}", seed);
      try {
        const TrainResult r = train(c);
        const auto final_value = r.summary.final_smoothed_return;
        if (final_value) {
          finals.push_back(*final_value);
        } else if (r.summary.final_eval) {
          finals.push_back(r.summary.final_eval->mean_return);
        }
        ++s.seeds_ok;
      } catch (const std::exception& e) {
        ++s.seeds_failed;
        std::string msg = e.what();
        for (char& ch : msg) ch = (ch == ',' || ch == '\n') ? ' ' : ch;
        failures << cell.label << ',' << seed << ',' << msg << '\n';
        failures.flush();
        std::cerr << fmt::format("sweep cell {} seed {} failed: {}\n", cell.label, seed, e.what());
      }
    }
    if (!finals.empty()) {
      double mean = 0.0;
      for (double f : finals) mean += f;
      mean /= static_cast<double>(finals.size());
      double var = 0.0;
      for (double f : finals) var += (f - mean) * (f - mean);
      s.mean_final_smoothed = mean;
      s.stderr_final_smoothed =
          finals.size() > 1 ? std::sqrt(var / static_cast<double>(finals.size() - 1) / static_cast<double>(finals.size()))
                            : 0.0;
    } else {
      s.mean_final_smoothed = kNaN;
      s.stderr_final_smoothed = kNaN;
    }
    summaries.push_back(s);
  }

  std::ofstream summary(out / "summary.csv");
  summary << "cell,seeds_ok,seeds_failed,mean_final_smoothed_return,stderr_final_smoothed_return\n";
  for (const auto& s : summaries) {
    summary << s.label << ',' << s.seeds_ok << ',' << s.seeds_failed << ',' << num(s.mean_final_smoothed) << ','
            << num(s.stderr_final_smoothed) << '\n';
  }
  return summaries;
}

}  // namespace mcac
