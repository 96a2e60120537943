#pragma once

// Q regression targets. Every function here is pure.

#include <span>
#include <string>
#include <string_view>

namespace mcac {

enum class TargetFamily {
  td1,               // base algorithm target
  mcac,              // max(base, MC-infinity)
  gqe,               // lambda-weighted k-step look-aheads
  gqe_mcac,          // max(gqe, MC-infinity)
  lambda_mix,        // (1 - w) base + w MC-infinity
  critic_tail_mcac,  // max(base, rewards-to-go + discounted critic tail)
};

std::string_view to_string(TargetFamily family);
TargetFamily parse_target_family(std::string_view name);

struct TargetSpec {
  TargetFamily family = TargetFamily::mcac;
  double gamma = 0.99;
  double gqe_lambda = 0.9;
  int gqe_n = 32;
  double mix_lambda = 0.5;

  void validate() const;  // throws ConfigError
  bool uses_mcac_max() const noexcept;
  bool uses_gqe() const noexcept;
};

// r + gamma (1 - done) next_q
double td1_target(double reward, bool done, double gamma, double next_q);

// max(base, mc); throws NumericError on non-finite input.
double mcac_combine(double base_target, double mc_inf_return);

// Normalised lambda-weighted average of k-step estimates, k = 1..n:
//   Q^(k) = sum_{i<k} gamma^i r_{t+i} + gamma^k q_lookahead[k-1]
//   Q     = (1 - lambda) / (1 - lambda^n) sum_k lambda^(k-1) Q^(k)
// `rewards`/`terminals` cover the m <= n transitions t..t+m-1 that exist in
// the trajectory; q_lookahead[k-1] is the estimate at s_{t+k} for k <= m.
// After a terminal transition the bootstrap is dropped, and for k > m the
// estimate stays at Q^(m).
double gqe_target(std::span<const double> rewards, std::span<const bool> terminals, double gamma, double lambda,
                  int n, std::span<const double> q_lookahead);

// (1 - w) base + w mc, w in [0, 1].
double lambda_mix_target(double base_target, double mc_inf_return, double mix_lambda);

// sum_k gamma^k r_k + gamma^L tail_q for a suffix of length L.
double critic_tail_mc_target(std::span<const double> suffix_rewards, double gamma, double tail_q);

}  // namespace mcac
