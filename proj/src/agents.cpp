#include "mcac/agents.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "mcac/errors.hpp"

namespace mcac {

namespace {

constexpr std::uint64_t kInitStream = 100;
constexpr std::uint64_t kUpdateStream = 101;

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// log(1 - tanh(u)^2), stable for large |u|
double log_one_minus_tanh_sq(double u) { return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u)); }

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n01(rng);
  }
  return m;
}

std::vector<int> policy_widths(const AgentConfig& cfg, bool gaussian) {
  std::vector<int> w{cfg.obs_dim};
  w.insert(w.end(), cfg.hidden.begin(), cfg.hidden.end());
  w.push_back(gaussian ? 2 * cfg.act_dim : cfg.act_dim);
  return w;
}

std::vector<int> critic_widths(const AgentConfig& cfg) {
  std::vector<int> w{cfg.obs_dim + cfg.act_dim};
  w.insert(w.end(), cfg.hidden.begin(), cfg.hidden.end());
  w.push_back(1);
  return w;
}

nlohmann::json config_to_json(const AgentConfig& c) {
  return {
      {"algorithm", to_string(c.algorithm)},
      {"mcac", c.mcac},
      {"target_family", to_string(c.target.family)},
      {"gamma", c.target.gamma},
      {"gqe_lambda", c.target.gqe_lambda},
      {"gqe_n", c.target.gqe_n},
      {"mix_lambda", c.target.mix_lambda},
      {"actor_lr", c.actor_lr},
      {"critic_lr", c.critic_lr},
      {"alpha", c.alpha},
      {"tau", c.tau},
      {"batch_size", c.batch_size},
      {"pretrain_steps", c.pretrain_steps},
      {"updates_per_timestep", c.updates_per_timestep},
      {"policy_delay", c.td3.policy_delay},
      {"target_noise_std", c.td3.target_noise_std},
      {"target_noise_clip", c.td3.target_noise_clip},
      {"exploration_noise_std", c.td3.exploration_noise_std},
      {"hidden", c.hidden},
      {"obs_dim", c.obs_dim},
      {"act_dim", c.act_dim},
      {"action_bound", c.action_bound},
      {"bc_lr", c.bc_lr},
      {"bc_steps", c.bc_steps},
  };
}

AgentConfig config_from_json(const nlohmann::json& j) {
  AgentConfig c;
  c.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
  c.mcac = j.at("mcac").get<bool>();
  c.target.family = parse_target_family(j.at("target_family").get<std::string>());
  c.target.gamma = j.at("gamma").get<double>();
  c.target.gqe_lambda = j.at("gqe_lambda").get<double>();
  c.target.gqe_n = j.at("gqe_n").get<int>();
  c.target.mix_lambda = j.at("mix_lambda").get<double>();
  c.actor_lr = j.at("actor_lr").get<double>();
  c.critic_lr = j.at("critic_lr").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.tau = j.at("tau").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.pretrain_steps = j.at("pretrain_steps").get<int>();
  c.updates_per_timestep = j.at("updates_per_timestep").get<int>();
  c.td3.policy_delay = j.at("policy_delay").get<int>();
  c.td3.target_noise_std = j.at("target_noise_std").get<double>();
  c.td3.target_noise_clip = j.at("target_noise_clip").get<double>();
  c.td3.exploration_noise_std = j.at("exploration_noise_std").get<double>();
  c.hidden = j.at("hidden").get<std::vector<int>>();
  c.obs_dim = j.at("obs_dim").get<int>();
  c.act_dim = j.at("act_dim").get<int>();
  c.action_bound = j.at("action_bound").get<double>();
  c.bc_lr = j.at("bc_lr").get<double>();
  c.bc_steps = j.at("bc_steps").get<int>();
  return c;
}

}  // namespace

std::string_view to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::sac: return "sac";
    case Algorithm::td3: return "td3";
    case Algorithm::gqe: return "gqe";
    case Algorithm::bc: return "bc";
  }
  return "sac";
}

Algorithm parse_algorithm(std::string_view name) {
  for (auto a : {Algorithm::sac, Algorithm::td3, Algorithm::gqe, Algorithm::bc}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError(fmt::format("unknown algorithm '{}'", name));
}

TargetFamily AgentConfig::default_family(Algorithm algorithm, bool mcac) {
  if (algorithm == Algorithm::gqe) return mcac ? TargetFamily::gqe_mcac : TargetFamily::gqe;
  return mcac ? TargetFamily::mcac : TargetFamily::td1;
}

AgentConfig AgentConfig::navigation(Algorithm algorithm, bool mcac) {
  AgentConfig c;
  c.algorithm = algorithm;
  c.mcac = mcac;
  c.target.family = default_family(algorithm, mcac);
  c.target.gamma = 0.99;
  c.target.gqe_lambda = 0.9;
  c.target.gqe_n = 32;
  return c;
}

void AgentConfig::validate() const {
  target.validate();
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0) || !(bc_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must be in [0, 1]");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (pretrain_steps < 0) throw ConfigError("pretrain_steps must be non-negative");
  if (updates_per_timestep < 0) throw ConfigError("updates_per_timestep must be non-negative");
  if (bc_steps < 0) throw ConfigError("bc_steps must be non-negative");
  if (td3.policy_delay < 1) throw ConfigError("policy_delay must be >= 1");
  if (!(td3.target_noise_std >= 0.0) || !(td3.target_noise_clip >= 0.0) || !(td3.exploration_noise_std >= 0.0)) {
    throw ConfigError("TD3 noise settings must be non-negative");
  }
  if (obs_dim < 1 || act_dim < 1 || !(action_bound > 0.0)) throw ConfigError("bad observation/action dimensions");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("hidden widths must be positive");
  }
  if (algorithm == Algorithm::bc) return;
  if (mcac != target.uses_mcac_max() && target.family != TargetFamily::lambda_mix) {
    throw ConfigError(fmt::format("mcac = {} is inconsistent with target family '{}'", mcac, to_string(target.family)));
  }
  if (target.family == TargetFamily::lambda_mix && mcac) {
    throw ConfigError("lambda_mix replaces the MCAC max; set mcac = false");
  }
  if ((algorithm == Algorithm::gqe) != target.uses_gqe()) {
    throw ConfigError(
        fmt::format("algorithm '{}' is inconsistent with target family '{}'", to_string(algorithm), to_string(target.family)));
  }
}

Batch make_batch(const ReplayBuffer& buf, std::span<const std::size_t> indices) {
  Batch b;
  const auto n = static_cast<Eigen::Index>(indices.size());
  if (n == 0) throw UsageError("empty batch");
  const auto& first = buf.at(indices[0]);
  const auto od = first.obs.size();
  const auto ad = first.action.size();
  b.indices.assign(indices.begin(), indices.end());
  b.obs.resize(od, n);
  b.actions.resize(ad, n);
  b.next_obs.resize(od, n);
  b.rewards.resize(n);
  b.mc_inf.resize(n);
  b.terminal.resize(static_cast<std::size_t>(n));
  b.from_success.resize(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    const std::size_t idx = indices[static_cast<std::size_t>(j)];
    const Transition& t = buf.at(idx);
    if (!t.mc_inf_return) {
      throw UsageError(fmt::format("transition {} has no MC-infinity annotation", idx));
    }
    b.obs.col(j) = t.obs;
    b.actions.col(j) = t.action;
    b.next_obs.col(j) = t.next_obs;
    b.rewards(j) = t.reward;
    b.mc_inf(j) = *t.mc_inf_return;
    b.terminal[static_cast<std::size_t>(j)] = t.terminal();
    b.from_success[static_cast<std::size_t>(j)] = buf.trajectory(buf.trajectory_of(idx)).reached_goal;
  }
  return b;
}

PolicySample sample_squashed_gaussian(const Mlp& policy, const Matrix& obs, double bound, Rng& rng,
                                      ForwardCache* cache) {
  const Matrix out = policy.forward_batch(obs, cache);
  const Eigen::Index k = out.rows() / 2;
  const Eigen::Index n = out.cols();
  PolicySample s;
  s.mean = out.topRows(k);
  s.log_std = out.bottomRows(k);
  s.noise = standard_normal(k, n, rng);
  s.pre_tanh = s.mean.array() + s.log_std.array().exp() * s.noise.array();
  s.action = bound * s.pre_tanh.array().tanh();
  s.log_prob.resize(n);
  const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi) + std::log(bound);
  for (Eigen::Index j = 0; j < n; ++j) {
    double lp = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
      const double e = s.noise(i, j);
      lp += -0.5 * e * e - s.log_std(i, j) - log_norm - log_one_minus_tanh_sq(s.pre_tanh(i, j));
    }
    s.log_prob(j) = lp;
  }
  return s;
}

ActorCritic::ActorCritic(AgentConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), rng_(make_rng(seed, kUpdateStream)) {
  cfg_.validate();
  if (cfg_.algorithm == Algorithm::bc) throw ConfigError("behaviour cloning has no actor-critic; use bc_fit");
  Rng init = make_rng(seed, kInitStream);
  policy_ = Mlp(policy_widths(cfg_, !is_td3()), is_td3() ? OutputHead::tanh : OutputHead::gaussian, init);
  q1_ = Mlp(critic_widths(cfg_), OutputHead::linear, init);
  q2_ = Mlp(critic_widths(cfg_), OutputHead::linear, init);
  q1_target_ = q1_;
  q2_target_ = q2_;
  if (is_td3()) policy_target_ = policy_;
  policy_opt_ = AdamState::for_net(policy_, cfg_.actor_lr);
  q1_opt_ = AdamState::for_net(q1_, cfg_.critic_lr);
  q2_opt_ = AdamState::for_net(q2_, cfg_.critic_lr);
}

Matrix ActorCritic::critic_input(const Matrix& obs, const Matrix& actions) const {
  Matrix x(obs.rows() + actions.rows(), obs.cols());
  x << obs, actions;
  return x;
}

Vector ActorCritic::min_target_q(const Matrix& obs, const Matrix& actions) const {
  const Matrix x = critic_input(obs, actions);
  return q1_target_.forward_batch(x).row(0).cwiseMin(q2_target_.forward_batch(x).row(0)).transpose();
}

Vector ActorCritic::min_q(const Matrix& obs, const Matrix& actions) const {
  const Matrix x = critic_input(obs, actions);
  return q1_.forward_batch(x).row(0).cwiseMin(q2_.forward_batch(x).row(0)).transpose();
}

Matrix ActorCritic::deterministic_action(const Mlp& net, const Matrix& obs) const {
  return cfg_.action_bound * net.forward_batch(obs).array();
}

Vector ActorCritic::act(const Vector& obs, ActMode mode, Rng& rng) const {
  if (obs.size() != cfg_.obs_dim) {
    throw ShapeError(fmt::format("observation has length {}, expected {}", obs.size(), cfg_.obs_dim));
  }
  const double b = cfg_.action_bound;
  if (is_td3()) {
    Vector a = b * policy_.forward(obs).array();
    if (mode == ActMode::explore && cfg_.td3.exploration_noise_std > 0.0) {
      std::normal_distribution<double> noise(0.0, cfg_.td3.exploration_noise_std * b);
      for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = std::clamp(a(i) + noise(rng), -b, b);
    }
    return a;
  }
  const Vector out = policy_.forward(obs);
  const Eigen::Index k = cfg_.act_dim;
  if (mode == ActMode::eval) return b * out.head(k).array().tanh();
  std::normal_distribution<double> n01(0.0, 1.0);
  Vector a(k);
  for (Eigen::Index i = 0; i < k; ++i) a(i) = b * std::tanh(out(i) + std::exp(out(k + i)) * n01(rng));
  return a;
}

PolicyFn ActorCritic::as_policy(ActMode mode) const {
  auto frozen = std::make_shared<const ActorCritic>(*this);
  return [frozen, mode](const Vector& obs, Rng& rng) { return frozen->act(obs, mode, rng); };
}

Matrix ActorCritic::fresh_actions(const Matrix& obs, Vector* log_prob) {
  if (is_td3()) {
    if (log_prob) *log_prob = Vector::Zero(obs.cols());
    return deterministic_action(policy_, obs);
  }
  PolicySample s = sample_squashed_gaussian(policy_, obs, cfg_.action_bound, rng_);
  if (log_prob) *log_prob = s.log_prob;
  return s.action;
}

Vector ActorCritic::next_state_values(const Matrix& next_obs, Vector* log_prob) {
  const double b = cfg_.action_bound;
  if (is_td3()) {
    Matrix a = deterministic_action(policy_target_, next_obs);
    if (cfg_.td3.target_noise_std > 0.0) {
      const double clip = cfg_.td3.target_noise_clip * b;
      Matrix noise = standard_normal(a.rows(), a.cols(), rng_) * (cfg_.td3.target_noise_std * b);
      a = (a.array() + noise.array().cwiseMax(-clip).cwiseMin(clip)).cwiseMax(-b).cwiseMin(b);
    }
    if (log_prob) *log_prob = Vector::Zero(next_obs.cols());
    return min_target_q(next_obs, a);
  }
  PolicySample s = sample_squashed_gaussian(policy_, next_obs, b, rng_);
  if (log_prob) *log_prob = s.log_prob;
  return min_target_q(next_obs, s.action) - cfg_.alpha * s.log_prob;
}

Vector ActorCritic::one_step_targets(const Batch& batch, Vector* log_prob) {
  const Vector next_v = next_state_values(batch.next_obs, log_prob);
  Vector base(static_cast<Eigen::Index>(batch.size()));
  for (Eigen::Index j = 0; j < base.size(); ++j) {
    base(j) = td1_target(batch.rewards(j), batch.terminal[static_cast<std::size_t>(j)], cfg_.gamma(), next_v(j));
  }
  return base;
}

Vector ActorCritic::gqe_targets(const ReplayBuffer& buf, const Batch& batch) {
  // Look-ahead estimates Q(s_{t+k}, a_{t+k}) use the stored action for
  // interior steps and a fresh policy action where the window bootstraps
  // (k = n, or the last state of a trajectory cut by the horizon).
  const int n = cfg_.target.gqe_n;
  const auto od = batch.obs.rows();
  const auto ad = batch.actions.rows();

  struct Window {
    std::vector<double> rewards;
    std::vector<bool> terminals;
    std::vector<double> q;
    std::vector<std::pair<bool, Eigen::Index>> source;  // (fresh, column)
  };
  std::vector<Window> windows(batch.size());
  std::vector<std::size_t> stored_points;  // buffer index whose (obs, action) is evaluated
  std::vector<std::size_t> fresh_points;   // buffer index whose next_obs is evaluated

  for (std::size_t j = 0; j < batch.size(); ++j) {
    const std::size_t idx = batch.indices[j];
    const TrajectoryInfo& info = buf.trajectory(buf.trajectory_of(idx));
    const std::size_t remaining = info.start + info.length - idx;
    const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(n), remaining);
    Window& w = windows[j];
    for (std::size_t k = 1; k <= m; ++k) {
      const Transition& t = buf.at(idx + k - 1);
      w.rewards.push_back(t.reward);
      w.terminals.push_back(t.terminal());
      if (t.terminal()) {
        w.source.emplace_back(false, -1);
      } else if (k < static_cast<std::size_t>(n) && k < remaining) {
        w.source.emplace_back(false, static_cast<Eigen::Index>(stored_points.size()));
        stored_points.push_back(idx + k);
      } else {
        w.source.emplace_back(true, static_cast<Eigen::Index>(fresh_points.size()));
        fresh_points.push_back(idx + k - 1);
      }
    }
  }

  Vector stored_q;
  if (!stored_points.empty()) {
    Matrix s(od, static_cast<Eigen::Index>(stored_points.size()));
    Matrix a(ad, s.cols());
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      s.col(c) = buf.at(stored_points[static_cast<std::size_t>(c)]).obs;
      a.col(c) = buf.at(stored_points[static_cast<std::size_t>(c)]).action;
    }
    stored_q = min_target_q(s, a);
  }
  Vector fresh_v;
  if (!fresh_points.empty()) {
    Matrix s(od, static_cast<Eigen::Index>(fresh_points.size()));
    for (Eigen::Index c = 0; c < s.cols(); ++c) s.col(c) = buf.at(fresh_points[static_cast<std::size_t>(c)]).next_obs;
    fresh_v = next_state_values(s);
  }

  Vector out(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    Window& w = windows[j];
    w.q.reserve(w.source.size());
    for (const auto& [fresh, col] : w.source) {
      if (col < 0) {
        w.q.push_back(0.0);
      } else {
        w.q.push_back(fresh ? fresh_v(col) : stored_q(col));
      }
    }
    std::vector<char> term(w.terminals.begin(), w.terminals.end());
    std::unique_ptr<bool[]> flags(new bool[term.size()]);
    for (std::size_t i = 0; i < term.size(); ++i) flags[i] = term[i] != 0;
    out(static_cast<Eigen::Index>(j)) =
        gqe_target(w.rewards, std::span<const bool>(flags.get(), term.size()), cfg_.gamma(), cfg_.target.gqe_lambda,
                   n, w.q);
  }
  return out;
}

Vector ActorCritic::critic_tail_returns(const ReplayBuffer& buf, const Batch& batch) {
  std::vector<std::size_t> tail_cols(batch.size(), 0);
  std::vector<std::size_t> end_points;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const TrajectoryInfo& info = buf.trajectory(buf.trajectory_of(batch.indices[j]));
    if (!info.collided) {
      tail_cols[j] = end_points.size();
      end_points.push_back(info.start + info.length - 1);
    }
  }
  Vector tail_q;
  if (!end_points.empty()) {
    Matrix s(batch.obs.rows(), static_cast<Eigen::Index>(end_points.size()));
    for (Eigen::Index c = 0; c < s.cols(); ++c) s.col(c) = buf.at(end_points[static_cast<std::size_t>(c)]).next_obs;
    tail_q = min_target_q(s, fresh_actions(s, nullptr));
  }
  Vector out(static_cast<Eigen::Index>(batch.size()));
  std::vector<double> suffix;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const std::size_t idx = batch.indices[j];
    const TrajectoryInfo& info = buf.trajectory(buf.trajectory_of(idx));
    suffix.clear();
    for (std::size_t i = idx; i < info.start + info.length; ++i) suffix.push_back(buf.at(i).reward);
    // the horizon cut-off still bootstraps from the critic, a collision does not
    const double tail = info.collided ? 0.0 : tail_q(static_cast<Eigen::Index>(tail_cols[j]));
    out(static_cast<Eigen::Index>(j)) = critic_tail_mc_target(suffix, cfg_.gamma(), tail);
  }
  return out;
}

CriticUpdateResult ActorCritic::critic_update(const ReplayBuffer& buf, const Batch& batch) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  CriticUpdateResult res;
  res.base_target = cfg_.target.uses_gqe() ? gqe_targets(buf, batch) : one_step_targets(batch, &res.next_log_prob);

  res.target.resize(n);
  switch (cfg_.target.family) {
    case TargetFamily::td1:
    case TargetFamily::gqe:
      res.target = res.base_target;
      break;
    case TargetFamily::mcac:
    case TargetFamily::gqe_mcac:
      for (Eigen::Index j = 0; j < n; ++j) res.target(j) = mcac_combine(res.base_target(j), batch.mc_inf(j));
      break;
    case TargetFamily::lambda_mix:
      for (Eigen::Index j = 0; j < n; ++j) {
        res.target(j) = lambda_mix_target(res.base_target(j), batch.mc_inf(j), cfg_.target.mix_lambda);
      }
      break;
    case TargetFamily::critic_tail_mcac: {
      const Vector tails = critic_tail_returns(buf, batch);
      for (Eigen::Index j = 0; j < n; ++j) res.target(j) = mcac_combine(res.base_target(j), tails(j));
      break;
    }
  }
  if (cfg_.target.uses_mcac_max()) {
    for (Eigen::Index j = 0; j < n; ++j) res.dominance_violations += res.target(j) < res.base_target(j) ? 1 : 0;
  }
  if (!res.target.allFinite()) throw NumericError("non-finite critic target");

  const Matrix x = critic_input(batch.obs, batch.actions);
  for (auto [net, opt] : {std::pair{&q1_, &q1_opt_}, std::pair{&q2_, &q2_opt_}}) {
    ForwardCache cache;
    const Matrix q = net->forward_batch(x, &cache);
    const Vector diff = q.row(0).transpose() - res.target;
    res.loss += diff.squaredNorm() / static_cast<double>(n);
    const Matrix adjoint = (2.0 / static_cast<double>(n)) * diff.transpose();
    Params grad;
    net->backward(cache, adjoint, &grad, nullptr);
    adam_step(*net, grad, *opt);
  }
  if (!std::isfinite(res.loss)) throw NumericError("non-finite critic loss");
  ++critic_updates_;
  if (!is_td3()) {
    polyak_update(q1_target_, q1_, cfg_.tau);
    polyak_update(q2_target_, q2_, cfg_.tau);
  }
  return res;
}

double ActorCritic::actor_loss_gradient(const Batch& batch, Rng& rng, Params& grad) const {
  const auto n = static_cast<Eigen::Index>(batch.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  const double b = cfg_.action_bound;
  const auto k = cfg_.act_dim;

  if (is_td3()) {
    ForwardCache pc;
    const Matrix squashed = policy_.forward_batch(batch.obs, &pc);
    const Matrix x = critic_input(batch.obs, b * squashed);
    ForwardCache qc;
    const Matrix q = q1_.forward_batch(x, &qc);
    Matrix dx;
    q1_.backward(qc, Matrix::Constant(1, n, -inv_n), nullptr, &dx);
    policy_.backward(pc, b * dx.bottomRows(k), &grad, nullptr);
    return -q.mean();
  }

  ForwardCache pc;
  const PolicySample s = sample_squashed_gaussian(policy_, batch.obs, b, rng, &pc);
  const Matrix x = critic_input(batch.obs, s.action);
  ForwardCache c1, c2;
  const Matrix q1v = q1_.forward_batch(x, &c1);
  const Matrix q2v = q2_.forward_batch(x, &c2);

  Matrix adj1 = Matrix::Zero(1, n);
  Matrix adj2 = Matrix::Zero(1, n);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const bool first = q1v(0, j) <= q2v(0, j);
    loss += cfg_.alpha * s.log_prob(j) - (first ? q1v(0, j) : q2v(0, j));
    (first ? adj1 : adj2)(0, j) = -inv_n;
  }
  loss *= inv_n;

  Matrix dx1, dx2;
  q1_.backward(c1, adj1, nullptr, &dx1);
  q2_.backward(c2, adj2, nullptr, &dx2);
  const Matrix d_action = dx1.bottomRows(k) + dx2.bottomRows(k);

  const Eigen::ArrayXXd t = s.pre_tanh.array().tanh();
  // d/du of alpha * log_prob is alpha * 2 tanh(u); the action is b * tanh(u)
  const Eigen::ArrayXXd d_pre = (cfg_.alpha * inv_n) * 2.0 * t + d_action.array() * b * (1.0 - t.square());
  Matrix adjoint(2 * k, n);
  adjoint.topRows(k) = d_pre.matrix();
  adjoint.bottomRows(k) = (d_pre * s.log_std.array().exp() * s.noise.array() - cfg_.alpha * inv_n).matrix();
  policy_.backward(pc, adjoint, &grad, nullptr);
  return loss;
}

std::optional<double> ActorCritic::actor_update(const Batch& batch) {
  if (is_td3() && critic_updates_ % cfg_.td3.policy_delay != 0) return std::nullopt;
  Params grad;
  const double loss = actor_loss_gradient(batch, rng_, grad);
  adam_step(policy_, grad, policy_opt_);
  if (is_td3()) {
    polyak_update(q1_target_, q1_, cfg_.tau);
    polyak_update(q2_target_, q2_, cfg_.tau);
    polyak_update(policy_target_, policy_, cfg_.tau);
  }
  ++actor_updates_;
  return loss;
}

void ActorCritic::swap_twin_critics() {
  std::swap(q1_, q2_);
  std::swap(q1_target_, q2_target_);
  std::swap(q1_opt_, q2_opt_);
}

void ActorCritic::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_mlp(dir / "policy.mlp", policy_);
  save_mlp(dir / "q1.mlp", q1_);
  save_mlp(dir / "q2.mlp", q2_);
  save_mlp(dir / "q1_target.mlp", q1_target_);
  save_mlp(dir / "q2_target.mlp", q2_target_);
  if (is_td3()) save_mlp(dir / "policy_target.mlp", policy_target_);
  std::ofstream out(dir / "agent.json");
  out << config_to_json(cfg_).dump(2) << '\n';
}

ActorCritic ActorCritic::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "agent.json");
  if (!in) throw std::runtime_error(fmt::format("no agent.json in {}", dir.string()));
  const AgentConfig cfg = config_from_json(nlohmann::json::parse(in));
  ActorCritic agent(cfg, 0);
  auto replace = [&](Mlp& slot, const char* name) {
    Mlp net = load_mlp(dir / name);
    if (!same_architecture(net, slot)) throw ShapeError(fmt::format("{} does not match agent.json", name));
    slot = std::move(net);
  };
  replace(agent.policy_, "policy.mlp");
  replace(agent.q1_, "q1.mlp");
  replace(agent.q2_, "q2.mlp");
  replace(agent.q1_target_, "q1_target.mlp");
  replace(agent.q2_target_, "q2_target.mlp");
  if (agent.is_td3()) replace(agent.policy_target_, "policy_target.mlp");
  return agent;
}

UpdateStats update_step(ActorCritic& agent, const ReplayBuffer& buf, Rng& sample_rng) {
  const auto idx = buf.sample_indices(static_cast<std::size_t>(agent.config().batch_size), sample_rng);
  return update_on_batch(agent, buf, make_batch(buf, idx));
}

UpdateStats update_on_batch(ActorCritic& agent, const ReplayBuffer& buf, const Batch& batch) {
  const CriticUpdateResult cr = agent.critic_update(buf, batch);
  UpdateStats st;
  st.critic_loss = cr.loss;
  st.actor_loss = agent.actor_update(batch);
  st.mean_base_target = cr.base_target.mean();
  st.mean_mc_inf = batch.mc_inf.mean();
  st.mean_target = cr.target.mean();
  st.dominance_violations = cr.dominance_violations;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    if (!batch.from_success[j]) continue;
    const auto c = static_cast<Eigen::Index>(j);
    st.success_gap_sum += cr.target(c) - cr.base_target(c);
    ++st.success_rows;
  }
  return st;
}

void pretrain(ActorCritic& agent, const ReplayBuffer& buf, int n_steps, Rng& sample_rng) {
  if (buf.empty()) throw UsageError("pretraining needs a buffer seeded with demonstrations");
  for (int i = 0; i < n_steps; ++i) update_step(agent, buf, sample_rng);
}

Vector BcPolicy::act(const Vector& obs) const { return action_bound * net.forward(obs).array(); }

PolicyFn BcPolicy::as_policy() const {
  auto frozen = std::make_shared<const BcPolicy>(*this);
  return [frozen](const Vector& obs, Rng&) { return frozen->act(obs); };
}

BcResult bc_fit(std::span<const Trajectory> demos, const AgentConfig& cfg, Rng& rng) {
  std::size_t count = 0;
  for (const auto& d : demos) count += d.size();
  if (count == 0) throw UsageError("behaviour cloning needs at least one demonstration transition");

  Matrix obs(cfg.obs_dim, static_cast<Eigen::Index>(count));
  Matrix act(cfg.act_dim, static_cast<Eigen::Index>(count));
  Eigen::Index c = 0;
  for (const auto& d : demos) {
    for (const auto& t : d.steps) {
      obs.col(c) = t.obs;
      act.col(c) = t.action;
      ++c;
    }
  }

  BcResult res;
  res.policy.action_bound = cfg.action_bound;
  res.policy.net = Mlp(policy_widths(cfg, false), OutputHead::tanh, rng);
  const double b = cfg.action_bound;
  auto dataset_mse = [&](const Mlp& net) {
    return (b * net.forward_batch(obs).array() - act.array()).square().mean();
  };
  res.initial_loss = dataset_mse(res.policy.net);

  AdamState opt = AdamState::for_net(res.policy.net, cfg.bc_lr);
  std::uniform_int_distribution<Eigen::Index> pick(0, static_cast<Eigen::Index>(count) - 1);
  const Eigen::Index m = cfg.batch_size;
  Matrix bo(cfg.obs_dim, m);
  Matrix ba(cfg.act_dim, m);
  for (int step = 0; step < cfg.bc_steps; ++step) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const Eigen::Index i = pick(rng);
      bo.col(j) = obs.col(i);
      ba.col(j) = act.col(i);
    }
    ForwardCache cache;
    const Matrix out = res.policy.net.forward_batch(bo, &cache);
    const Matrix diff = b * out - ba;
    const Matrix adjoint = (2.0 * b / static_cast<double>(diff.size())) * diff;
    Params grad;
    res.policy.net.backward(cache, adjoint, &grad, nullptr);
    adam_step(res.policy.net, grad, opt);
  }
  res.final_loss = dataset_mse(res.policy.net);
  return res;
}

}  // namespace mcac
