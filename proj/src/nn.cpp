#include "mcac/nn.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "mcac/errors.hpp"

namespace mcac {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x6d636163u};
  return Rng(seq);
}

std::string_view to_string(OutputHead head) {
  switch (head) {
    case OutputHead::linear: return "linear";
    case OutputHead::tanh: return "tanh";
    case OutputHead::gaussian: return "gaussian";
  }
  return "linear";
}

OutputHead parse_output_head(std::string_view name) {
  if (name == "linear") return OutputHead::linear;
  if (name == "tanh") return OutputHead::tanh;
  if (name == "gaussian") return OutputHead::gaussian;
  throw ConfigError(fmt::format("unknown output head '{}'", name));
}

Params zeros_like(const Params& like) {
  Params out;
  out.reserve(like.size());
  for (const auto& layer : like) {
    out.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                   Vector::Zero(layer.bias.size())});
  }
  return out;
}

bool same_shape(const Params& a, const Params& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (a[l].weight.rows() != b[l].weight.rows() || a[l].weight.cols() != b[l].weight.cols() ||
        a[l].bias.size() != b[l].bias.size()) {
      return false;
    }
  }
  return true;
}

bool all_finite(const Params& p) {
  for (const auto& layer : p) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

std::size_t parameter_count(const Params& p) {
  std::size_t n = 0;
  for (const auto& layer : p) n += layer.weight.size() + layer.bias.size();
  return n;
}

Mlp::Mlp(std::vector<int> widths, OutputHead head) : widths_(std::move(widths)), head_(head) {
  if (widths_.size() < 2) throw ShapeError("an Mlp needs at least input and output widths");
  for (int w : widths_) {
    if (w <= 0) throw ShapeError("layer widths must be positive");
  }
  if (head_ == OutputHead::gaussian && widths_.back() % 2 != 0) {
    throw ShapeError("gaussian head needs an even output width (mean and log-std)");
  }
  params_.reserve(widths_.size() - 1);
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    params_.push_back({Matrix::Zero(widths_[l + 1], widths_[l]), Vector::Zero(widths_[l + 1])});
  }
}

Mlp::Mlp(std::vector<int> widths, OutputHead head, Rng& rng) : Mlp(std::move(widths), head) {
  for (auto& layer : params_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = dist(rng);
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = dist(rng);
  }
}

Mlp Mlp::zeros(std::vector<int> widths, OutputHead head) { return Mlp(std::move(widths), head); }

Vector Mlp::forward(const Vector& input) const {
  if (input.size() != input_dim()) {
    throw ShapeError(fmt::format("input has length {}, network expects {}", input.size(), input_dim()));
  }
  Matrix out = forward_batch(input, nullptr);
  return out.col(0);
}

Matrix Mlp::forward_batch(const Matrix& inputs, ForwardCache* cache) const {
  if (inputs.rows() != input_dim()) {
    throw ShapeError(fmt::format("input has {} rows, network expects {}", inputs.rows(), input_dim()));
  }
  if (cache) cache->inputs.assign(1, inputs);

  Matrix act = inputs;
  const std::size_t last = params_.size() - 1;
  for (std::size_t l = 0; l < params_.size(); ++l) {
    Matrix z = params_[l].weight * act;
    z.colwise() += params_[l].bias;
    if (l < last) {
      act = z.cwiseMax(0.0);
      if (cache) cache->inputs.push_back(act);
    } else {
      if (cache) cache->head_pre = z;
      act = std::move(z);
    }
  }

  switch (head_) {
    case OutputHead::linear: break;
    case OutputHead::tanh: act = act.array().tanh().matrix(); break;
    case OutputHead::gaussian: {
      const Eigen::Index k = act.rows() / 2;
      act.bottomRows(k) = act.bottomRows(k).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
      break;
    }
  }
  if (cache) cache->output = act;
  return act;
}

void Mlp::backward(const ForwardCache& cache, const Matrix& output_adjoint, Params* param_grad,
                   Matrix* input_grad) const {
  if (cache.inputs.size() != params_.size()) throw ShapeError("forward cache does not match network depth");
  if (output_adjoint.rows() != output_dim() || output_adjoint.cols() != cache.output.cols()) {
    throw ShapeError(fmt::format("adjoint is {}x{}, expected {}x{}", output_adjoint.rows(), output_adjoint.cols(),
                                 output_dim(), cache.output.cols()));
  }

  Matrix delta = output_adjoint;
  switch (head_) {
    case OutputHead::linear: break;
    case OutputHead::tanh:
      delta.array() *= 1.0 - cache.output.array().square();
      break;
    case OutputHead::gaussian: {
      const Eigen::Index k = delta.rows() / 2;
      const auto pre = cache.head_pre.bottomRows(k).array();
      delta.bottomRows(k).array() *= ((pre >= kLogStdMin) && (pre <= kLogStdMax)).cast<double>();
      break;
    }
  }

  if (param_grad) *param_grad = zeros_like(params_);
  for (std::size_t l = params_.size(); l-- > 0;) {
    const Matrix& in = cache.inputs[l];
    if (param_grad) {
      (*param_grad)[l].weight.noalias() = delta * in.transpose();
      (*param_grad)[l].bias = delta.rowwise().sum();
    }
    if (l == 0) {
      if (input_grad) *input_grad = params_[0].weight.transpose() * delta;
      break;
    }
    Matrix prev = params_[l].weight.transpose() * delta;
    // rectifier derivative: the cached post-activation is positive iff active
    prev.array() *= (in.array() > 0.0).cast<double>();
    delta = std::move(prev);
  }
}

bool same_architecture(const Mlp& a, const Mlp& b) {
  return a.widths() == b.widths() && a.head() == b.head();
}

Params gradient(const Mlp& net, const Matrix& inputs, const Matrix& output_adjoint) {
  ForwardCache cache;
  net.forward_batch(inputs, &cache);
  Params grad;
  net.backward(cache, output_adjoint, &grad, nullptr);
  return grad;
}

AdamState AdamState::for_net(const Mlp& net, double learning_rate) {
  AdamState s;
  s.first_moment = zeros_like(net.params());
  s.second_moment = zeros_like(net.params());
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(Mlp& net, const Params& grad, AdamState& state) {
  Params& params = net.params();
  if (!same_shape(params, grad)) throw ShapeError("gradient shape does not match network");
  if (!same_shape(params, state.first_moment) || !same_shape(params, state.second_moment)) {
    throw ShapeError("optimizer state shape does not match network");
  }
  for (std::size_t l = 0; l < grad.size(); ++l) {
    if (!grad[l].weight.allFinite() || !grad[l].bias.allFinite()) {
      throw NumericError(fmt::format("non-finite gradient in layer {}", l));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double lr = state.learning_rate;
  const double eps = state.epsilon;

  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m.array() = b1 * m.array() + (1.0 - b1) * g.array();
    v.array() = b2 * v.array() + (1.0 - b2) * g.array().square();
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < grad.size(); ++l) {
    update(params[l].weight, state.first_moment[l].weight, state.second_moment[l].weight, grad[l].weight);
    update(params[l].bias, state.first_moment[l].bias, state.second_moment[l].bias, grad[l].bias);
    if (!params[l].weight.allFinite() || !params[l].bias.allFinite()) {
      throw NumericError(fmt::format("non-finite parameter in layer {} after Adam step {}", l, state.step));
    }
  }
}

void polyak_update(Mlp& target, const Mlp& online, double tau) {
  if (!same_architecture(target, online)) throw ShapeError("polyak update between different architectures");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError(fmt::format("tau must be in [0, 1], got {}", tau));
  if (tau == 1.0) {
    target.params() = online.params();
    return;
  }
  if (tau == 0.0) return;
  for (std::size_t l = 0; l < target.params().size(); ++l) {
    auto& t = target.params()[l];
    const auto& o = online.params()[l];
    t.weight = (1.0 - tau) * t.weight + tau * o.weight;
    t.bias = (1.0 - tau) * t.bias + tau * o.bias;
  }
}

namespace {

void write_values(std::ostream& out, const double* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    out << fmt::format("{:.17g}", data[i]) << (i + 1 == n ? '\n' : ' ');
  }
}

template <typename T>
T read_token(std::istream& in, const char* what) {
  T v;
  if (!(in >> v)) throw ValidationError(fmt::format("checkpoint: failed to read {}", what), 0);
  return v;
}

double parse_double(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size()) throw ValidationError(fmt::format("checkpoint: bad number '{}'", tok), 0);
  return v;
}

void expect_token(std::istream& in, std::string_view expected) {
  const auto tok = read_token<std::string>(in, "keyword");
  if (tok != expected) {
    throw ValidationError(fmt::format("checkpoint: expected '{}', found '{}'", expected, tok), 0);
  }
}

}  // namespace

void save_mlp(std::ostream& out, const Mlp& net) {
  out << "mcac-mlp 1\n";
  out << "head " << to_string(net.head()) << '\n';
  out << "widths " << net.widths().size();
  for (int w : net.widths()) out << ' ' << w;
  out << '\n';
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& layer = net.params()[l];
    out << "weight " << layer.weight.rows() << ' ' << layer.weight.cols() << '\n';
    // row-major on disk
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = layer.weight;
    write_values(out, rm.data(), rm.size());
    out << "bias " << layer.bias.size() << '\n';
    write_values(out, layer.bias.data(), layer.bias.size());
  }
}

Mlp load_mlp(std::istream& in) {
  expect_token(in, "mcac-mlp");
  if (read_token<int>(in, "version") != 1) throw ValidationError("checkpoint: unsupported version", 0);
  expect_token(in, "head");
  const OutputHead head = parse_output_head(read_token<std::string>(in, "head"));
  expect_token(in, "widths");
  const auto n = read_token<std::size_t>(in, "width count");
  std::vector<int> widths(n);
  for (auto& w : widths) w = read_token<int>(in, "width");
  Mlp net = Mlp::zeros(widths, head);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    auto& layer = net.params()[l];
    expect_token(in, "weight");
    const auto rows = read_token<Eigen::Index>(in, "rows");
    const auto cols = read_token<Eigen::Index>(in, "cols");
    if (rows != layer.weight.rows() || cols != layer.weight.cols()) {
      throw ValidationError(fmt::format("checkpoint: layer {} weight shape mismatch", l), l);
    }
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        layer.weight(i, j) = parse_double(read_token<std::string>(in, "weight value"));
      }
    }
    expect_token(in, "bias");
    if (read_token<Eigen::Index>(in, "bias size") != layer.bias.size()) {
      throw ValidationError(fmt::format("checkpoint: layer {} bias shape mismatch", l), l);
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
      layer.bias(i) = parse_double(read_token<std::string>(in, "bias value"));
    }
  }
  return net;
}

void save_mlp(const std::filesystem::path& path, const Mlp& net) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot open {} for writing", path.string()));
  save_mlp(out, net);
}

Mlp load_mlp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  return load_mlp(in);
}

}  // namespace mcac
