#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "atlas/error.hpp"
#include "atlas/lstm.hpp"

using namespace atlas;

namespace {

std::vector<LstmSample> random_samples(std::size_t n, std::size_t window, std::size_t input,
                                       std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<LstmSample> out(n);
  for (auto& s : out) {
    for (std::size_t w = 0; w < window; ++w) {
      Vector x(static_cast<Eigen::Index>(input));
      for (auto& v : x) v = nd(rng);
      s.inputs.push_back(x);
    }
    s.target = nd(rng);
  }
  return out;
}

double max_gradient_error(std::uint64_t seed, std::size_t input) {
  std::mt19937_64 rng(seed);
  // T = 20 with window 4 gives 16 samples.
  const auto samples = random_samples(16, 4, input, rng);
  LstmNetwork net(input, 3);
  std::normal_distribution<double> nd(0.0, 0.5);
  Vector p(static_cast<Eigen::Index>(net.n_params()));
  for (auto& v : p) v = nd(rng);
  net.set_params(p);
  Vector grad;
  net.loss(samples, &grad);
  double worst = 0.0;
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Vector q = p;
    q[i] = p[i] + h;
    net.set_params(q);
    const double up = net.loss(samples);
    q[i] = p[i] - h;
    net.set_params(q);
    const double down = net.loss(samples);
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max(1e-6, std::abs(fd) + std::abs(grad[i]));
    worst = std::max(worst, std::abs(fd - grad[i]) / denom);
  }
  return worst;
}

std::vector<double> sine(std::size_t T, double period, double phase = 0.0) {
  std::vector<double> x(T);
  for (std::size_t t = 0; t < T; ++t)
    x[t] = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase);
  return x;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("analytic gradient matches central differences") {
  CHECK(max_gradient_error(1, 1) < 1e-4);
}

TEST_CASE("gradient check over 50 random parameter draws") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    CAPTURE(seed);
    CHECK(max_gradient_error(100 + seed, seed % 2 ? 1 : 3) < 1e-4);
  }
}

TEST_CASE("constant series") {
  LstmSpec spec;
  const std::vector<double> x(60, 7.5);
  const auto fit = lstm_train({x}, spec, 3);
  const auto f = lstm_forecast(fit, 0, x, 8);
  for (double v : f) {
    CHECK(std::abs(v - 7.5) < 1e-2);
    CHECK(std::abs(v - 7.5) < 0.05 * 7.5);
  }
}

TEST_CASE("determinism and one-step definition") {
  LstmSpec spec;
  spec.epochs = 20;
  const auto x = sine(40, 6.0);
  const auto a = lstm_train({x, sine(40, 9.0)}, spec, 11);
  const auto b = lstm_train({x, sine(40, 9.0)}, spec, 11);
  REQUIRE(a.networks.size() == 2);
  CHECK(a.networks[0].params() == b.networks[0].params());
  CHECK(a.networks[1].params() == b.networks[1].params());
  CHECK(a.loss_trace == b.loss_trace);
  CHECK_FALSE(lstm_train({x}, spec, 12).networks[0].params() == a.networks[0].params());

  std::vector<Vector> window;
  for (std::size_t t = x.size() - spec.window; t < x.size(); ++t) {
    Vector v(1);
    v[0] = (x[t] - a.mean[0]) / a.scale[0];
    window.push_back(v);
  }
  const double one = a.mean[0] + a.scale[0] * a.networks[0].predict(window);
  CHECK(lstm_forecast(a, 0, x, 1).front() == one);
  CHECK(lstm_forecast(a, 0, x, 3).front() == one);
}

TEST_CASE("sine wave forecast tracks the truth") {
  LstmSpec spec;
  spec.hidden = 8;
  const auto full = sine(128, 12.0, 0.3);
  const std::vector<double> train(full.begin(), full.end() - 8);
  const std::vector<double> truth(full.end() - 8, full.end());
  const auto fit = lstm_train({train}, spec, 5);
  CHECK(correlation(lstm_forecast(fit, 0, train, 8), truth) > 0.8);
  CHECK(fit.loss_trace.back() < fit.loss_trace.front());
}

TEST_CASE("shared network with dimension id") {
  LstmSpec spec;
  spec.shared = true;
  spec.epochs = 30;
  const auto fit = lstm_train({sine(50, 6.0), sine(50, 10.0), sine(50, 7.0)}, spec, 2);
  REQUIRE(fit.networks.size() == 1);
  CHECK(fit.networks[0].input_size() == 4);
  CHECK(lstm_forecast(fit, 2, sine(50, 7.0), 4).size() == 4);
}

TEST_CASE("gate ranges and finiteness after training") {
  LstmSpec spec;
  spec.epochs = 50;
  const auto fit = lstm_train({sine(60, 8.0)}, spec, 9);
  CHECK(fit.networks[0].params().allFinite());
}

TEST_CASE("errors") {
  LstmSpec spec;
  CHECK_THROWS_AS(lstm_train({std::vector<double>(8, 1.0)}, spec, 0), ArgumentError);
  CHECK_THROWS_AS(lstm_train({}, spec, 0), ArgumentError);
  spec.learning_rate = 0.0;
  CHECK_THROWS_AS(lstm_train({std::vector<double>(20, 1.0)}, spec, 0), ArgumentError);

  spec = {};
  spec.learning_rate = 1e300;
  spec.clip_norm = 1e300;
  spec.epochs = 50;
  try {
    lstm_train({sine(40, 5.0)}, spec, 0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}
