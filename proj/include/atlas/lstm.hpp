#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "atlas/penalty.hpp"

namespace atlas {

struct LstmSpec {
  std::size_t window = 8;
  std::size_t hidden = 16;
  std::size_t epochs = 200;
  double learning_rate = 1e-2;
  double clip_norm = 5.0;
  /// One network for all dimensions, with a one-hot dimension id appended to
  /// every input step. Off: one network per dimension.
  bool shared = false;

  void validate() const;
};

/// One training pair: `window` input steps (each of network input size) and
/// the next value.
struct LstmSample {
  std::vector<Vector> inputs;
  double target = 0.0;
};

/// Single-layer LSTM with a linear read-out of the last hidden state.
/// Gate order in the stacked weights: input, forget, output, candidate.
class LstmNetwork {
 public:
  LstmNetwork() = default;
  LstmNetwork(std::size_t input_size, std::size_t hidden);

  std::size_t input_size() const { return input_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t n_params() const { return static_cast<std::size_t>(params_.size()); }

  /// Flat layout: W (4H x I, column-major), U (4H x H), b (4H), v (H), c.
  const Vector& params() const { return params_; }
  void set_params(const Vector& p);

  /// Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget bias 1, zero read-out bias.
  void initialize(std::uint64_t seed);

  double predict(const std::vector<Vector>& inputs) const;

  /// Mean squared error over the samples; fills `grad` (same layout as
  /// params) by backpropagation through time when non-null.
  double loss(const std::vector<LstmSample>& samples, Vector* grad = nullptr) const;

 private:
  std::size_t input_ = 0, hidden_ = 0;
  Vector params_;
};

struct LstmFit {
  LstmSpec spec;
  std::vector<LstmNetwork> networks;  // one per dimension, or one if shared
  std::vector<double> mean, scale;    // per-dimension standardization
  std::vector<double> loss_trace;     // per epoch, summed over networks
};

/// Trains on every (window -> next value) pair of each standardized series
/// with full-batch Adam and gradient-norm clipping. Throws NumericError
/// naming the epoch if the loss becomes non-finite.
LstmFit lstm_train(const std::vector<std::vector<double>>& series, const LstmSpec& spec,
                   std::uint64_t seed);

/// Iterated one-step forecasts of dimension `dim`, fed back as inputs.
std::vector<double> lstm_forecast(const LstmFit& fit, std::size_t dim,
                                  const std::vector<double>& series, std::size_t horizon);

}  // namespace atlas
