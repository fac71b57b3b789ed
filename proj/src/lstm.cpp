#include "atlas/lstm.hpp"

#include <cmath>
#include <string>

#include "atlas/error.hpp"
#include "atlas/parallel.hpp"
#include "atlas/random.hpp"

namespace atlas {

namespace {

using Index = Eigen::Index;
using ConstMap = Eigen::Map<const Matrix>;
using Map = Eigen::Map<Matrix>;

Vector sigmoid(const Vector& a) { return (1.0 + (-a.array()).exp()).inverse().matrix(); }

struct Layout {
  Index I, H;
  Index w() const { return 0; }
  Index u() const { return 4 * H * I; }
  Index b() const { return u() + 4 * H * H; }
  Index v() const { return b() + 4 * H; }
  Index c() const { return v() + H; }
  Index size() const { return c() + 1; }
};

}  // namespace

void LstmSpec::validate() const {
  if (window == 0) throw ArgumentError("LSTM window must be >= 1");
  if (hidden == 0) throw ArgumentError("LSTM hidden size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ArgumentError("LSTM learning rate must be positive");
  if (!(clip_norm > 0.0)) throw ArgumentError("LSTM clip norm must be positive");
}

LstmNetwork::LstmNetwork(std::size_t input_size, std::size_t hidden)
    : input_(input_size), hidden_(hidden) {
  const Layout L{static_cast<Index>(input_size), static_cast<Index>(hidden)};
  params_ = Vector::Zero(L.size());
}

void LstmNetwork::set_params(const Vector& p) {
  if (p.size() != params_.size()) throw ArgumentError("LSTM parameter vector has the wrong size");
  params_ = p;
}

void LstmNetwork::initialize(std::uint64_t seed) {
  const Layout L{static_cast<Index>(input_), static_cast<Index>(hidden_)};
  auto rng = rng_stream(seed, 0x15f3);
  const double r = 1.0 / std::sqrt(static_cast<double>(hidden_));
  std::uniform_real_distribution<double> unif(-r, r);
  for (Index p = 0; p < L.size(); ++p) params_[p] = unif(rng);
  params_.segment(L.b(), 4 * L.H).setZero();
  params_.segment(L.b() + L.H, L.H).setOnes();
  params_[L.c()] = 0.0;
}

double LstmNetwork::predict(const std::vector<Vector>& inputs) const {
  const Layout L{static_cast<Index>(input_), static_cast<Index>(hidden_)};
  const Index H = L.H;
  const ConstMap W(params_.data() + L.w(), 4 * H, L.I);
  const ConstMap U(params_.data() + L.u(), 4 * H, H);
  const auto b = params_.segment(L.b(), 4 * H);
  const auto v = params_.segment(L.v(), H);
  Vector h = Vector::Zero(H), c = Vector::Zero(H);
  for (const auto& x : inputs) {
    const Vector a = W * x + U * h + b;
    const Vector i = sigmoid(a.segment(0, H));
    const Vector f = sigmoid(a.segment(H, H));
    const Vector o = sigmoid(a.segment(2 * H, H));
    const Vector g = a.segment(3 * H, H).array().tanh();
    c = f.cwiseProduct(c) + i.cwiseProduct(g);
    h = o.cwiseProduct(c.array().tanh().matrix());
  }
  return v.dot(h) + params_[L.c()];
}

double LstmNetwork::loss(const std::vector<LstmSample>& samples, Vector* grad) const {
  if (samples.empty()) throw ArgumentError("LSTM loss needs at least one sample");
  const Layout L{static_cast<Index>(input_), static_cast<Index>(hidden_)};
  const Index H = L.H;
  const ConstMap W(params_.data() + L.w(), 4 * H, L.I);
  const ConstMap U(params_.data() + L.u(), 4 * H, H);
  const auto b = params_.segment(L.b(), 4 * H);
  const auto v = params_.segment(L.v(), H);
  const double c0 = params_[L.c()];
  const double scale = 1.0 / static_cast<double>(samples.size());

  if (grad) grad->setZero(L.size());
  Matrix dW, dU;
  Vector db, dv;
  double dc0 = 0.0;
  if (grad) {
    dW = Matrix::Zero(4 * H, L.I);
    dU = Matrix::Zero(4 * H, H);
    db = Vector::Zero(4 * H);
    dv = Vector::Zero(H);
  }

  double total = 0.0;
  for (const auto& sample : samples) {
    const Index S = static_cast<Index>(sample.inputs.size());
    // Column s holds the state after step s; column 0 of hs/cs is the zero start.
    Matrix gates(4 * H, S), hs(H, S + 1), cs(H, S + 1);
    hs.col(0).setZero();
    cs.col(0).setZero();
    for (Index s = 0; s < S; ++s) {
      Vector a = W * sample.inputs[static_cast<std::size_t>(s)] + U * hs.col(s) + b;
      a.segment(0, 3 * H) = sigmoid(a.segment(0, 3 * H));
      a.segment(3 * H, H) = a.segment(3 * H, H).array().tanh();
      gates.col(s) = a;
      cs.col(s + 1) = a.segment(H, H).cwiseProduct(cs.col(s)) +
                      a.segment(0, H).cwiseProduct(a.segment(3 * H, H));
      hs.col(s + 1) = a.segment(2 * H, H).cwiseProduct(cs.col(s + 1).array().tanh().matrix());
    }
    const double y = v.dot(hs.col(S)) + c0;
    const double err = y - sample.target;
    total += err * err;
    if (!grad) continue;

    const double dy = 2.0 * err * scale;
    dv += dy * hs.col(S);
    dc0 += dy;
    Vector dh = dy * v;
    Vector dc = Vector::Zero(H);
    Vector da(4 * H);
    for (Index s = S - 1; s >= 0; --s) {
      const auto i = gates.col(s).segment(0, H);
      const auto f = gates.col(s).segment(H, H);
      const auto o = gates.col(s).segment(2 * H, H);
      const auto g = gates.col(s).segment(3 * H, H);
      const Vector tc = cs.col(s + 1).array().tanh();
      dc += dh.cwiseProduct(o).cwiseProduct((1.0 - tc.array().square()).matrix());
      da.segment(0, H) = dc.cwiseProduct(g).cwiseProduct(i.cwiseProduct((1.0 - i.array()).matrix()));
      da.segment(H, H) =
          dc.cwiseProduct(cs.col(s)).cwiseProduct(f.cwiseProduct((1.0 - f.array()).matrix()));
      da.segment(2 * H, H) =
          dh.cwiseProduct(tc).cwiseProduct(o.cwiseProduct((1.0 - o.array()).matrix()));
      da.segment(3 * H, H) = dc.cwiseProduct(i).cwiseProduct((1.0 - g.array().square()).matrix());
      dW.noalias() += da * sample.inputs[static_cast<std::size_t>(s)].transpose();
      dU.noalias() += da * hs.col(s).transpose();
      db += da;
      dh = U.transpose() * da;
      dc = dc.cwiseProduct(f);
    }
  }
  if (grad) {
    Map(grad->data() + L.w(), 4 * H, L.I) = dW;
    Map(grad->data() + L.u(), 4 * H, H) = dU;
    grad->segment(L.b(), 4 * H) = db;
    grad->segment(L.v(), H) = dv;
    (*grad)[L.c()] = dc0;
  }
  return total * scale;
}

namespace {

Vector step_input(double value, std::size_t dim, std::size_t input_size) {
  Vector x = Vector::Zero(static_cast<Index>(input_size));
  x[0] = value;
  if (input_size > 1) x[static_cast<Index>(1 + dim)] = 1.0;
  return x;
}

std::vector<LstmSample> windows(const std::vector<double>& z, std::size_t window, std::size_t dim,
                                std::size_t input_size) {
  std::vector<LstmSample> out;
  for (std::size_t t = window; t < z.size(); ++t) {
    LstmSample s;
    for (std::size_t u = t - window; u < t; ++u) s.inputs.push_back(step_input(z[u], dim, input_size));
    s.target = z[t];
    out.push_back(std::move(s));
  }
  return out;
}

struct Adam {
  Vector m, v;
  std::size_t t = 0;
  explicit Adam(Index n) : m(Vector::Zero(n)), v(Vector::Zero(n)) {}
  void step(Vector& params, const Vector& g, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

std::vector<double> train_network(LstmNetwork& net, const std::vector<LstmSample>& samples,
                                  const LstmSpec& spec) {
  std::vector<double> trace;
  trace.reserve(spec.epochs);
  Adam adam(static_cast<Index>(net.n_params()));
  Vector params = net.params();
  Vector grad;
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    net.set_params(params);
    const double loss = net.loss(samples, &grad);
    if (!std::isfinite(loss) || !grad.allFinite())
      throw NumericError("LSTM training loss became non-finite at epoch " + std::to_string(epoch));
    trace.push_back(loss);
    const double norm = grad.norm();
    if (norm > spec.clip_norm) grad *= spec.clip_norm / norm;
    adam.step(params, grad, spec.learning_rate);
  }
  if (!params.allFinite())
    throw NumericError("LSTM parameters became non-finite at epoch " + std::to_string(spec.epochs));
  net.set_params(params);
  return trace;
}

}  // namespace

LstmFit lstm_train(const std::vector<std::vector<double>>& series, const LstmSpec& spec,
                   std::uint64_t seed) {
  spec.validate();
  if (series.empty()) throw ArgumentError("lstm_train needs at least one series");
  const std::size_t k = series.size();
  LstmFit fit;
  fit.spec = spec;
  fit.mean.resize(k);
  fit.scale.resize(k);
  std::vector<std::vector<double>> z(k);
  for (std::size_t l = 0; l < k; ++l) {
    const auto& x = series[l];
    if (x.size() <= spec.window)
      throw ArgumentError("series of length " + std::to_string(x.size()) +
                          " is too short for LSTM window " + std::to_string(spec.window));
    double mean = 0.0, var = 0.0, level = 0.0;
    for (double v : x) {
      if (!std::isfinite(v)) throw ArgumentError("LSTM series contains non-finite values");
      mean += v;
      level = std::max(level, std::abs(v));
    }
    mean /= static_cast<double>(x.size());
    for (double v : x) var += (v - mean) * (v - mean);
    double sd = std::sqrt(var / static_cast<double>(x.size()));
    if (sd <= 1e-12 * std::max(1.0, level)) sd = 1.0;
    fit.mean[l] = mean;
    fit.scale[l] = sd;
    z[l].resize(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) z[l][t] = (x[t] - mean) / sd;
  }

  if (spec.shared) {
    const std::size_t input = 1 + k;
    std::vector<LstmSample> samples;
    for (std::size_t l = 0; l < k; ++l) {
      auto w = windows(z[l], spec.window, l, input);
      samples.insert(samples.end(), std::make_move_iterator(w.begin()),
                     std::make_move_iterator(w.end()));
    }
    LstmNetwork net(input, spec.hidden);
    net.initialize(seed);
    fit.loss_trace = train_network(net, samples, spec);
    fit.networks.push_back(std::move(net));
    return fit;
  }

  fit.networks.assign(k, LstmNetwork(1, spec.hidden));
  std::vector<std::vector<double>> traces(k);
  parallel_for(k, [&](std::size_t l) {
    fit.networks[l].initialize(derive_seed(seed, l + 1));
    traces[l] = train_network(fit.networks[l], windows(z[l], spec.window, 0, 1), spec);
  });
  fit.loss_trace.assign(spec.epochs, 0.0);
  for (const auto& tr : traces)
    for (std::size_t e = 0; e < tr.size(); ++e) fit.loss_trace[e] += tr[e];
  return fit;
}

std::vector<double> lstm_forecast(const LstmFit& fit, std::size_t dim,
                                  const std::vector<double>& series, std::size_t horizon) {
  if (dim >= fit.mean.size()) throw ArgumentError("lstm_forecast: dimension out of range");
  const std::size_t window = fit.spec.window;
  if (series.size() < window) throw ArgumentError("lstm_forecast: series shorter than the window");
  const LstmNetwork& net = fit.spec.shared ? fit.networks.front() : fit.networks[dim];
  const std::size_t input = net.input_size();
  const double mean = fit.mean[dim], sd = fit.scale[dim];
  std::vector<double> recent;
  for (std::size_t t = series.size() - window; t < series.size(); ++t)
    recent.push_back((series[t] - mean) / sd);
  std::vector<double> out;
  out.reserve(horizon);
  for (std::size_t h = 0; h < horizon; ++h) {
    std::vector<Vector> inputs;
    for (std::size_t u = recent.size() - window; u < recent.size(); ++u)
      inputs.push_back(step_input(recent[u], dim, input));
    const double next = net.predict(inputs);
    recent.push_back(next);
    out.push_back(mean + sd * next);
  }
  return out;
}

}  // namespace atlas
