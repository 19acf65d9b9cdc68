#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "pbo/random.hpp"

namespace pbo {

template <typename Scalar = double>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar = double>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Feed-forward network with tanh hidden layers and an identity output layer.
// forward() caches per-layer activations so backward() can run reverse
// accumulation without re-evaluating the net.
template <typename Scalar = double>
struct Network {
  std::vector<int> layer_sizes;
  std::vector<MatrixX<Scalar>> weights;  // weights[l] has shape (out_l, in_l)
  std::vector<VectorX<Scalar>> biases;

  std::vector<VectorX<Scalar>> activations;  // activations[0] = input
  bool cached = false;

  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }

  int parameter_count() const {
    int count = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
      count += static_cast<int>(weights[l].size() + biases[l].size());
    return count;
  }
};

template <typename Scalar = double>
struct Gradients {
  std::vector<MatrixX<Scalar>> weights;
  std::vector<VectorX<Scalar>> biases;
};

template <typename Scalar>
Gradients<Scalar> zero_gradients(const Network<Scalar>& net) {
  Gradients<Scalar> g;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    g.weights.push_back(MatrixX<Scalar>::Zero(net.weights[l].rows(), net.weights[l].cols()));
    g.biases.push_back(VectorX<Scalar>::Zero(net.biases[l].size()));
  }
  return g;
}

template <typename Scalar>
Scalar gradient_norm(const Gradients<Scalar>& g) {
  Scalar sq = 0;
  for (std::size_t l = 0; l < g.weights.size(); ++l)
    sq += g.weights[l].squaredNorm() + g.biases[l].squaredNorm();
  return std::sqrt(sq);
}

// Rescales the gradient in place so its global norm does not exceed max_norm.
template <typename Scalar>
void clip_gradient_norm(Gradients<Scalar>& g, Scalar max_norm) {
  const Scalar norm = gradient_norm(g);
  if (norm <= max_norm || norm == Scalar(0)) return;
  const Scalar scale = max_norm / norm;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    g.weights[l] *= scale;
    g.biases[l] *= scale;
  }
}

// Weights uniform in +-sqrt(1/fan_in), biases zero, fully determined by seed.
template <typename Scalar = double>
Network<Scalar> network_init(const std::vector<int>& layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2)
    throw std::invalid_argument("network_init: need at least two layer sizes");
  for (int s : layer_sizes)
    if (s <= 0) throw std::invalid_argument("network_init: layer sizes must be positive");

  Network<Scalar> net;
  net.layer_sizes = layer_sizes;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int in = layer_sizes[l];
    const int out = layer_sizes[l + 1];
    const Scalar scale = std::sqrt(Scalar(1) / Scalar(in));
    MatrixX<Scalar> w(out, in);
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j)
        w(i, j) = static_cast<Scalar>(2.0 * rng.uniform() - 1.0) * scale;
    net.weights.push_back(std::move(w));
    net.biases.push_back(VectorX<Scalar>::Zero(out));
  }
  return net;
}

template <typename Scalar>
VectorX<Scalar> forward(Network<Scalar>& net, const std::type_identity_t<VectorX<Scalar>>& input) {
  if (input.size() != net.input_size())
    throw std::invalid_argument("forward: input length does not match first layer size");
  net.activations.assign(1, input);
  VectorX<Scalar> a = input;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    VectorX<Scalar> z = net.weights[l] * a + net.biases[l];
    a = (l + 1 < net.weights.size()) ? z.array().tanh().matrix() : z;
    net.activations.push_back(a);
  }
  net.cached = true;
  return a;
}

// Reverse accumulation for the scalar loss whose gradient with respect to the
// network output is output_gradient. Requires a prior forward() on this net.
template <typename Scalar>
Gradients<Scalar> backward(const Network<Scalar>& net,
                           const std::type_identity_t<VectorX<Scalar>>& output_gradient) {
  if (!net.cached)
    throw std::logic_error("backward: no cached forward pass");
  if (output_gradient.size() != net.output_size())
    throw std::invalid_argument("backward: gradient length does not match last layer size");

  Gradients<Scalar> grads = zero_gradients(net);
  VectorX<Scalar> delta = output_gradient;  // d loss / d pre-activation, output layer is identity
  for (int l = static_cast<int>(net.weights.size()) - 1; l >= 0; --l) {
    grads.weights[l] = delta * net.activations[l].transpose();
    grads.biases[l] = delta;
    if (l > 0) {
      const auto& a = net.activations[l];  // tanh output of the layer below
      delta = (net.weights[l].transpose() * delta).cwiseProduct(
          (Scalar(1) - a.array().square()).matrix());
    }
  }
  return grads;
}

// Adaptive-moment update state; accumulator shapes mirror the parameters.
template <typename Scalar = double>
struct OptimizerState {
  std::vector<MatrixX<Scalar>> m_weights, v_weights;
  std::vector<VectorX<Scalar>> m_biases, v_biases;
  long step = 0;
  Scalar learning_rate = Scalar(5e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
};

template <typename Scalar>
OptimizerState<Scalar> optimizer_init(const Network<Scalar>& net,
                                      Scalar learning_rate = Scalar(5e-3)) {
  OptimizerState<Scalar> state;
  state.learning_rate = learning_rate;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    state.m_weights.push_back(MatrixX<Scalar>::Zero(net.weights[l].rows(), net.weights[l].cols()));
    state.v_weights.push_back(MatrixX<Scalar>::Zero(net.weights[l].rows(), net.weights[l].cols()));
    state.m_biases.push_back(VectorX<Scalar>::Zero(net.biases[l].size()));
    state.v_biases.push_back(VectorX<Scalar>::Zero(net.biases[l].size()));
  }
  return state;
}

namespace detail {

template <typename Scalar, typename Param>
void adam_step(Param& p, const Param& g, Param& m, Param& v, Scalar bc1, Scalar bc2,
               Scalar lr, Scalar beta1, Scalar beta2, Scalar eps) {
  m = beta1 * m + (Scalar(1) - beta1) * g;
  v = (beta2 * v.array() + (Scalar(1) - beta2) * g.array().square()).matrix();
  p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

}  // namespace detail

// Bias-corrected adaptive-moment update. A non-finite gradient rejects the
// whole update (no mutation) and reports the fault; parameters are checked
// finite after every applied step.
template <typename Scalar>
void apply_update(Network<Scalar>& net, const Gradients<Scalar>& grads,
                  OptimizerState<Scalar>& state) {
  if (grads.weights.size() != net.weights.size())
    throw std::invalid_argument("apply_update: layer count mismatch");
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    if (grads.weights[l].rows() != net.weights[l].rows() ||
        grads.weights[l].cols() != net.weights[l].cols() ||
        grads.biases[l].size() != net.biases[l].size())
      throw std::invalid_argument("apply_update: gradient shape mismatch at layer " +
                                  std::to_string(l));
    if (!grads.weights[l].allFinite() || !grads.biases[l].allFinite())
      throw std::runtime_error("apply_update: non-finite gradient at layer " +
                               std::to_string(l) + ", update rejected");
  }

  ++state.step;
  const Scalar bc1 = Scalar(1) - std::pow(state.beta1, Scalar(state.step));
  const Scalar bc2 = Scalar(1) - std::pow(state.beta2, Scalar(state.step));

  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    detail::adam_step(net.weights[l], grads.weights[l], state.m_weights[l],
                      state.v_weights[l], bc1, bc2, state.learning_rate, state.beta1,
                      state.beta2, state.epsilon);
    detail::adam_step(net.biases[l], grads.biases[l], state.m_biases[l], state.v_biases[l],
                      bc1, bc2, state.learning_rate, state.beta1, state.beta2, state.epsilon);
    if (!net.weights[l].allFinite() || !net.biases[l].allFinite())
      throw std::runtime_error("apply_update: parameters became non-finite at layer " +
                               std::to_string(l));
  }
}

}  // namespace pbo
