#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mcac/errors.hpp"
#include "mcac/nn.hpp"
#include "oracles.hpp"

using namespace mcac;

namespace {

Mlp random_net(std::vector<int> widths, OutputHead head, std::uint64_t seed) {
  Rng rng = make_rng(seed, 7);
  return Mlp(std::move(widths), head, rng);
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
  }
  return m;
}

double weighted_output(const Mlp& net, const Matrix& x, const Matrix& adj) {
  return (net.forward_batch(x).array() * adj.array()).sum();
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("zero weights return the bias") {
    Mlp net = Mlp::zeros({3, 5, 2}, OutputHead::linear);
    net.params()[1].bias << 0.25, -1.5;
    Vector x(3);
    x << 4.0, -2.0, 9.0;
    const Vector y = net.forward(x);
    CHECK(y(0) == 0.25);
    CHECK(y(1) == -1.5);
  }

  TEST_CASE("unit 1-1-1 net passes a positive input through") {
    Mlp net = Mlp::zeros({1, 1, 1}, OutputHead::linear);
    net.params()[0].weight(0, 0) = 1.0;
    net.params()[1].weight(0, 0) = 1.0;
    Vector x(1);
    x << 2.0;
    CHECK(net.forward(x)(0) == 2.0);
  }

  TEST_CASE("forward agrees with a loop re-evaluation") {
    Rng rng = make_rng(11, 0);
    for (int draw = 0; draw < 50; ++draw) {
      for (OutputHead head : {OutputHead::linear, OutputHead::tanh, OutputHead::gaussian}) {
        const Mlp net = random_net({4, 8, 8, head == OutputHead::gaussian ? 2 : 1}, head, 100 + draw);
        const Matrix x = random_matrix(4, 3, rng, 2.0);
        const Matrix y = net.forward_batch(x);
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
          const std::vector<double> ref = oracle::forward(net, x.col(c));
          for (Eigen::Index r = 0; r < y.rows(); ++r) {
            CHECK(std::abs(y(r, c) - ref[static_cast<std::size_t>(r)]) <=
                  1e-12 * std::max(1.0, std::abs(ref[static_cast<std::size_t>(r)])));
          }
        }
      }
    }
  }

  TEST_CASE("forward rejects inputs of the wrong length") {
    const Mlp net = random_net({4, 8, 1}, OutputHead::linear, 1);
    CHECK_THROWS_AS(net.forward(Vector::Zero(3)), ShapeError);
  }

  TEST_CASE("gaussian head clamps log-std") {
    Mlp net = Mlp::zeros({1, 2, 4}, OutputHead::gaussian);
    net.params()[1].bias << 0.0, 0.0, 50.0, -50.0;
    const Vector y = net.forward(Vector::Ones(1));
    CHECK(y(2) == Mlp::kLogStdMax);
    CHECK(y(3) == Mlp::kLogStdMin);
  }

  TEST_CASE("zero adjoint gives a zero gradient and leaves the net alone") {
    const Mlp net = random_net({3, 6, 2}, OutputHead::linear, 5);
    const Mlp before = net;
    Rng rng = make_rng(3, 0);
    const Params g = gradient(net, random_matrix(3, 4, rng), Matrix::Zero(2, 4));
    for (const auto& layer : g) {
      CHECK(layer.weight.isZero(0.0));
      CHECK(layer.bias.isZero(0.0));
    }
    for (std::size_t l = 0; l < net.num_layers(); ++l) CHECK(net.params()[l].weight == before.params()[l].weight);
  }

  TEST_CASE("single linear layer squared error has the closed-form gradient") {
    Rng rng = make_rng(4, 0);
    Mlp net = Mlp::zeros({3, 1}, OutputHead::linear);
    net.params()[0].weight = random_matrix(1, 3, rng);
    net.params()[0].bias = random_matrix(1, 1, rng).col(0);
    Vector x = random_matrix(3, 1, rng).col(0);
    const double target = 0.7;
    const double pred = net.forward(x)(0);
    const Params g = gradient(net, x, Matrix::Constant(1, 1, 2.0 * (pred - target)));
    for (int i = 0; i < 3; ++i) CHECK(g[0].weight(0, i) == doctest::Approx(2.0 * (pred - target) * x(i)).epsilon(1e-14));
    CHECK(g[0].bias(0) == doctest::Approx(2.0 * (pred - target)).epsilon(1e-14));
  }

  TEST_CASE("gradient shape mismatch is an error") {
    const Mlp net = random_net({3, 6, 2}, OutputHead::linear, 5);
    CHECK_THROWS_AS(gradient(net, Matrix::Zero(3, 4), Matrix::Zero(1, 4)), ShapeError);
  }

  TEST_CASE("finite differences match parameter and input gradients for every head") {
    // 120 draws per head, each draw a fresh network, batch and adjoint.
    constexpr int kDraws = 120;
    constexpr double kStep = 1e-5;
    constexpr double kTol = 1e-4;
    Rng rng = make_rng(21, 0);
    for (OutputHead head : {OutputHead::linear, OutputHead::tanh, OutputHead::gaussian}) {
      CAPTURE(to_string(head));
      double worst = 0.0;
      for (int draw = 0; draw < kDraws; ++draw) {
        const int out = head == OutputHead::gaussian ? 4 : 2;
        Mlp net = random_net({3, 7, 5, out}, head, 1000 + static_cast<std::uint64_t>(draw));
        const Matrix x = random_matrix(3, 4, rng, 1.5);
        const Matrix adj = random_matrix(out, 4, rng);
        ForwardCache cache;
        net.forward_batch(x, &cache);
        Params g;
        Matrix gx;
        net.backward(cache, adj, &g, &gx);

        std::uniform_int_distribution<std::size_t> pick_layer(0, net.num_layers() - 1);
        const std::size_t l = pick_layer(rng);
        auto& w = net.params()[l].weight;
        std::uniform_int_distribution<Eigen::Index> pr(0, w.rows() - 1), pc(0, w.cols() - 1);
        const Eigen::Index r = pr(rng), c = pc(rng);
        const double orig = w(r, c);
        w(r, c) = orig + kStep;
        const double up = weighted_output(net, x, adj);
        w(r, c) = orig - kStep;
        const double down = weighted_output(net, x, adj);
        w(r, c) = orig;
        worst = std::max(worst, oracle::rel_err((up - down) / (2 * kStep), g[l].weight(r, c)));

        auto& b = net.params()[l].bias;
        const double ob = b(r);
        b(r) = ob + kStep;
        const double bu = weighted_output(net, x, adj);
        b(r) = ob - kStep;
        const double bd = weighted_output(net, x, adj);
        b(r) = ob;
        worst = std::max(worst, oracle::rel_err((bu - bd) / (2 * kStep), g[l].bias(r)));

        Matrix xp = x, xm = x;
        xp(c % 3, 1) += kStep;
        xm(c % 3, 1) -= kStep;
        const double fd_x = (weighted_output(net, xp, adj) - weighted_output(net, xm, adj)) / (2 * kStep);
        worst = std::max(worst, oracle::rel_err(fd_x, gx(c % 3, 1)));
      }
      CHECK(worst <= kTol);
    }
  }

  TEST_CASE("adam matches the hand-computed update") {
    Mlp net = Mlp::zeros({1, 1}, OutputHead::linear);
    net.params()[0].weight(0, 0) = 0.5;
    AdamState st = AdamState::for_net(net, 1e-3);
    Params g = zeros_like(net.params());
    g[0].weight(0, 0) = 0.2;
    g[0].bias(0) = -3.0;
    adam_step(net, g, st);
    // step 1: m = 0.1 g, v = 0.001 g^2, bias correction restores g and g^2
    CHECK(net.params()[0].weight(0, 0) == doctest::Approx(0.5 - 1e-3 * 0.2 / (0.2 + 1e-8)).epsilon(1e-12));
    CHECK(net.params()[0].bias(0) == doctest::Approx(0.0 + 1e-3 * 3.0 / (3.0 + 1e-8)).epsilon(1e-12));

    g[0].weight(0, 0) = -0.1;
    const double w1 = net.params()[0].weight(0, 0);
    adam_step(net, g, st);
    const double m = 0.9 * 0.02 + 0.1 * -0.1;
    const double v = 0.999 * 0.001 * 0.04 + 0.001 * 0.01;
    const double mhat = m / (1 - 0.81);
    const double vhat = v / (1 - 0.999 * 0.999);
    CHECK(net.params()[0].weight(0, 0) == doctest::Approx(w1 - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8)).epsilon(1e-12));
    CHECK(st.step == 2);
    CHECK(st.first_moment[0].weight(0, 0) == doctest::Approx(m).epsilon(1e-14));
    CHECK(st.second_moment[0].weight(0, 0) == doctest::Approx(v).epsilon(1e-14));
  }

  TEST_CASE("adam with zero gradient keeps parameters and decays moments") {
    Mlp net = random_net({2, 3, 1}, OutputHead::linear, 9);
    AdamState st = AdamState::for_net(net, 1e-3);
    Params g = zeros_like(net.params());
    g[0].weight(0, 0) = 1.0;
    adam_step(net, g, st);
    const Mlp after_one = net;
    const double m1 = st.first_moment[0].weight(0, 0);
    adam_step(net, zeros_like(net.params()), st);
    CHECK(st.first_moment[0].weight(0, 0) == doctest::Approx(0.9 * m1));
    // parameters with no gradient history are untouched
    CHECK(net.params()[1].weight == after_one.params()[1].weight);
  }

  TEST_CASE("adam step size approaches the learning rate under a constant gradient") {
    Mlp net = Mlp::zeros({1, 1}, OutputHead::linear);
    AdamState st = AdamState::for_net(net, 1e-2);
    Params g = zeros_like(net.params());
    g[0].weight(0, 0) = -4.0;
    double prev = 0.0;
    for (int i = 0; i < 2000; ++i) {
      prev = net.params()[0].weight(0, 0);
      adam_step(net, g, st);
    }
    CHECK(net.params()[0].weight(0, 0) - prev == doctest::Approx(1e-2).epsilon(1e-6));
  }

  TEST_CASE("adam rejects non-finite gradients naming the layer") {
    Mlp net = random_net({2, 3, 1}, OutputHead::linear, 9);
    AdamState st = AdamState::for_net(net, 1e-3);
    Params g = zeros_like(net.params());
    g[1].bias(0) = std::nan("");
    try {
      adam_step(net, g, st);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
    CHECK(st.step == 0);
  }

  TEST_CASE("polyak endpoints and one-step arithmetic") {
    const Mlp online = random_net({2, 4, 1}, OutputHead::linear, 1);
    Mlp target = random_net({2, 4, 1}, OutputHead::linear, 2);
    const Mlp original = target;
    polyak_update(target, online, 0.0);
    CHECK(target.params()[0].weight == original.params()[0].weight);
    polyak_update(target, online, 1.0);
    CHECK(target.params()[0].weight == online.params()[0].weight);
    CHECK(target.params()[1].bias == online.params()[1].bias);

    Mlp t = Mlp::zeros({1, 1}, OutputHead::linear);
    Mlp o = Mlp::zeros({1, 1}, OutputHead::linear);
    o.params()[0].weight(0, 0) = 1.0;
    polyak_update(t, o, 0.05);
    CHECK(t.params()[0].weight(0, 0) == doctest::Approx(0.05).epsilon(1e-15));

    Mlp other = random_net({2, 5, 1}, OutputHead::linear, 3);
    CHECK_THROWS_AS(polyak_update(other, online, 0.5), ShapeError);
  }

  TEST_CASE("checkpoint text round trip is bit exact") {
    for (OutputHead head : {OutputHead::linear, OutputHead::tanh, OutputHead::gaussian}) {
      const Mlp net = random_net({3, 16, 16, 4}, head, 77);
      std::stringstream ss;
      save_mlp(ss, net);
      const Mlp back = load_mlp(ss);
      CHECK(same_architecture(net, back));
      for (std::size_t l = 0; l < net.num_layers(); ++l) {
        CHECK(net.params()[l].weight == back.params()[l].weight);
        CHECK(net.params()[l].bias == back.params()[l].bias);
      }
    }
  }

  TEST_CASE("malformed checkpoints are rejected") {
    std::stringstream bad("mcac-mlp 1\nhead linear\nwidths 2 1 1\nweight 1 1\nnot-a-number\n");
    CHECK_THROWS(load_mlp(bad));
    std::stringstream wrong("something else\n");
    CHECK_THROWS(load_mlp(wrong));
  }

  TEST_CASE("identical seeds give identical parameters") {
    const Mlp a = random_net({2, 8, 1}, OutputHead::linear, 5);
    const Mlp b = random_net({2, 8, 1}, OutputHead::linear, 5);
    CHECK(a.params()[0].weight == b.params()[0].weight);
    const double bound = 1.0 / std::sqrt(2.0);
    CHECK(a.params()[0].weight.cwiseAbs().maxCoeff() <= bound);
  }
}
