#pragma once

// Minimal feedforward networks with hand-written reverse accumulation, Adam,
// and Polyak-averaged target copies. Batches are stored column-wise: a batch
// of B inputs of width d is a (d x B) matrix.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace mcac {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

// Independent generator for (seed, stream); streams separate env, demos,
// network init, sampling and evaluation so they never perturb each other.
Rng make_rng(std::uint64_t seed, std::uint64_t stream);

enum class OutputHead {
  linear,
  tanh,      // deterministic squashed output in [-1, 1]
  gaussian,  // [mean (k rows); log-std (k rows)], log-std clamped
};

std::string_view to_string(OutputHead head);
OutputHead parse_output_head(std::string_view name);

struct DenseLayer {
  Matrix weight;  // (fan_out x fan_in)
  Vector bias;    // (fan_out)
};

// One entry per layer. Used for parameters, gradients and Adam moments alike.
using Params = std::vector<DenseLayer>;

Params zeros_like(const Params& like);
bool same_shape(const Params& a, const Params& b);
bool all_finite(const Params& p);
std::size_t parameter_count(const Params& p);

// Activations recorded by forward_batch, consumed by backward.
struct ForwardCache {
  std::vector<Matrix> inputs;  // inputs[l] feeds layer l
  Matrix head_pre;             // pre-activation of the output layer
  Matrix output;
};

class Mlp {
 public:
  static constexpr double kLogStdMin = -20.0;
  static constexpr double kLogStdMax = 2.0;

  Mlp() = default;

  // Uniform init in +-1/sqrt(fan_in) for weights and biases.
  Mlp(std::vector<int> widths, OutputHead head, Rng& rng);

  static Mlp zeros(std::vector<int> widths, OutputHead head);

  const std::vector<int>& widths() const noexcept { return widths_; }
  int input_dim() const noexcept { return widths_.front(); }
  int output_dim() const noexcept { return widths_.back(); }
  std::size_t num_layers() const noexcept { return params_.size(); }
  OutputHead head() const noexcept { return head_; }

  const Params& params() const noexcept { return params_; }
  Params& params() noexcept { return params_; }

  Vector forward(const Vector& input) const;
  Matrix forward_batch(const Matrix& inputs, ForwardCache* cache = nullptr) const;

  // Propagates d(loss)/d(output) back through the cached pass. Either output
  // may be null; skipping `param_grad` avoids the weight-gradient products.
  void backward(const ForwardCache& cache, const Matrix& output_adjoint,
                Params* param_grad, Matrix* input_grad = nullptr) const;

 private:
  Mlp(std::vector<int> widths, OutputHead head);

  std::vector<int> widths_;
  OutputHead head_ = OutputHead::linear;
  Params params_;
};

bool same_architecture(const Mlp& a, const Mlp& b);

// d(loss)/d(params) for a batch, given d(loss)/d(outputs). Does not mutate net.
Params gradient(const Mlp& net, const Matrix& inputs, const Matrix& output_adjoint);

struct AdamState {
  Params first_moment;
  Params second_moment;
  std::int64_t step = 0;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_net(const Mlp& net, double learning_rate);
};

// Bias-corrected Adam. Throws NumericError naming the layer if `grad` is not
// finite, and if any parameter becomes non-finite.
void adam_step(Mlp& net, const Params& grad, AdamState& state);

// target <- (1 - tau) * target + tau * online
void polyak_update(Mlp& target, const Mlp& online, double tau);

// Text checkpoint: header, layer shapes, then row-major values at 17
// significant digits so that save -> load is bit-exact.
void save_mlp(std::ostream& out, const Mlp& net);
Mlp load_mlp(std::istream& in);
void save_mlp(const std::filesystem::path& path, const Mlp& net);
Mlp load_mlp(const std::filesystem::path& path);

}  // namespace mcac
