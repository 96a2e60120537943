#include "mcac/targets.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mcac/errors.hpp"

namespace mcac {

std::string_view to_string(TargetFamily family) {
  switch (family) {
    case TargetFamily::td1: return "td1";
    case TargetFamily::mcac: return "mcac";
    case TargetFamily::gqe: return "gqe";
    case TargetFamily::gqe_mcac: return "gqe_mcac";
    case TargetFamily::lambda_mix: return "lambda_mix";
    case TargetFamily::critic_tail_mcac: return "critic_tail_mcac";
  }
  return "td1";
}

TargetFamily parse_target_family(std::string_view name) {
  for (auto f : {TargetFamily::td1, TargetFamily::mcac, TargetFamily::gqe, TargetFamily::gqe_mcac,
                 TargetFamily::lambda_mix, TargetFamily::critic_tail_mcac}) {
    if (to_string(f) == name) return f;
  }
  throw ConfigError(fmt::format("unknown target family '{}'", name));
}

void TargetSpec::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError(fmt::format("gamma must be in (0, 1), got {}", gamma));
  if (uses_gqe()) {
    if (gqe_n < 1) throw ConfigError(fmt::format("gqe_n must be >= 1, got {}", gqe_n));
    if (!(gqe_lambda > 0.0 && gqe_lambda < 1.0)) {
      throw ConfigError(fmt::format("gqe_lambda must be in (0, 1), got {}", gqe_lambda));
    }
  }
  if (family == TargetFamily::lambda_mix && !(mix_lambda >= 0.0 && mix_lambda <= 1.0)) {
    throw ConfigError(fmt::format("mix_lambda must be in [0, 1], got {}", mix_lambda));
  }
}

bool TargetSpec::uses_mcac_max() const noexcept {
  return family == TargetFamily::mcac || family == TargetFamily::gqe_mcac || family == TargetFamily::critic_tail_mcac;
}

bool TargetSpec::uses_gqe() const noexcept {
  return family == TargetFamily::gqe || family == TargetFamily::gqe_mcac;
}

double td1_target(double reward, bool done, double gamma, double next_q) {
  return reward + gamma * (done ? 0.0 : 1.0) * next_q;
}

double mcac_combine(double base_target, double mc_inf_return) {
  if (!std::isfinite(base_target) || !std::isfinite(mc_inf_return)) {
    throw NumericError(fmt::format("mcac_combine on non-finite input ({}, {})", base_target, mc_inf_return));
  }
  return std::max(base_target, mc_inf_return);
}

double gqe_target(std::span<const double> rewards, std::span<const bool> terminals, double gamma, double lambda,
                  int n, std::span<const double> q_lookahead) {
  if (n < 1) throw ConfigError(fmt::format("gqe n must be >= 1, got {}", n));
  if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError(fmt::format("gqe lambda must be in (0, 1), got {}", lambda));
  const std::size_t m = rewards.size();
  if (m == 0 || m > static_cast<std::size_t>(n) || terminals.size() != m) {
    throw ShapeError("gqe window must hold 1..n rewards with matching terminal flags");
  }

  // weights (1 - lambda) / (1 - lambda^n) * lambda^(k-1)
  double lambda_n = 1.0;
  for (int k = 0; k < n; ++k) lambda_n *= lambda;
  const double norm = (1.0 - lambda) / (1.0 - lambda_n);

  double partial = 0.0;   // sum_{i<k} gamma^i r_{t+i}
  double discount = 1.0;  // gamma^(k-1), then gamma^k after the reward is added
  double estimate = 0.0;
  bool frozen = false;
  double weight = norm;
  double total = 0.0;
  for (int k = 1; k <= n; ++k) {
    const std::size_t i = static_cast<std::size_t>(k - 1);
    if (!frozen && i < m) {
      partial += discount * rewards[i];
      discount *= gamma;
      if (terminals[i]) {
        estimate = partial;
        frozen = true;
      } else {
        if (q_lookahead.size() <= i) throw ShapeError("gqe look-ahead estimate missing");
        estimate = partial + discount * q_lookahead[i];
        if (i + 1 == m) frozen = true;  // trajectory exhausted, later k repeat Q^(m)
      }
    }
    total += weight * estimate;
    weight *= lambda;
  }
  return total;
}

double lambda_mix_target(double base_target, double mc_inf_return, double mix_lambda) {
  if (!(mix_lambda >= 0.0 && mix_lambda <= 1.0)) {
    throw ConfigError(fmt::format("mix lambda must be in [0, 1], got {}", mix_lambda));
  }
  if (mix_lambda == 0.0) return base_target;
  if (mix_lambda == 1.0) return mc_inf_return;
  return (1.0 - mix_lambda) * base_target + mix_lambda * mc_inf_return;
}

double critic_tail_mc_target(std::span<const double> suffix_rewards, double gamma, double tail_q) {
  double value = tail_q;
  for (std::size_t k = suffix_rewards.size(); k-- > 0;) value = suffix_rewards[k] + gamma * value;
  return value;
}

}  // namespace mcac
