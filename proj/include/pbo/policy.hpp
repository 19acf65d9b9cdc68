#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pbo/net.hpp"
#include "pbo/random.hpp"

namespace pbo {

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

// Continuous block in normalized coordinates [-1, 1] with physical bounds per
// variable, plus one categorical variable per entry of `categories`.
template <typename Scalar = double>
struct MixedSearchSpace {
  int n_c = 0;
  std::vector<std::pair<Scalar, Scalar>> bounds;  // physical (low, high) per continuous variable
  std::vector<int> categories;                    // d_k per discrete variable

  int n_d() const { return static_cast<int>(categories.size()); }

  int logits_width() const {
    int width = 0;
    for (int d : categories) width += d;
    return width;
  }

  void validate() const {
    if (n_c < 0) throw std::invalid_argument("search space: n_c must be non-negative");
    if (static_cast<int>(bounds.size()) != n_c)
      throw std::invalid_argument("search space: bounds count must equal n_c");
    for (const auto& [low, high] : bounds)
      if (!(low < high)) throw std::invalid_argument("search space: bounds require low < high");
    for (int d : categories)
      if (d < 2) throw std::invalid_argument("search space: every category count must be >= 2");
    if (n_c == 0 && categories.empty())
      throw std::invalid_argument("search space: no variables");
  }
};

template <typename Scalar = double>
struct MixedAction {
  VectorX<Scalar> a_c;     // normalized, stored unclipped
  Eigen::VectorXi a_d;
};

enum class CovarianceMode { kAuto, kFull, kDiagonal };

template <typename Scalar = double>
struct PolicyOptions {
  Scalar sigma_min = Scalar(0.02);
  Scalar sigma_max = Scalar(1);
  CovarianceMode covariance = CovarianceMode::kAuto;
  int hidden_width = 32;
};

// Gaussian over the continuous block. The mean is a plain vector updated by
// elite recombination; the network parameterizes the covariance only. Its
// outputs are squashed into standard deviations (sigmoid into
// [sigma_min, sigma_max]) and, in full mode, correlation terms (tanh) forming
// a unit lower-triangular matrix whose rows are renormalized to unit Euclidean
// norm. L = diag(sigma) * that matrix is then a valid Cholesky factor with
// diag(L L^T) = sigma^2 by construction.
template <typename Scalar = double>
struct GaussianPolicyState {
  VectorX<Scalar> mean;
  Network<Scalar> net;
  bool diagonal = true;
  Scalar sigma_min = Scalar(0.02);
  Scalar sigma_max = Scalar(1);

  // Caches rebuilt by refresh_policy after every parameter change.
  VectorX<Scalar> sigma;      // current standard deviations
  VectorX<Scalar> squash;     // sigmoid outputs backing sigma
  MatrixX<Scalar> corr;       // tanh outputs as unit lower-triangular (full mode)
  MatrixX<Scalar> unit_rows;  // corr with rows renormalized
  VectorX<Scalar> row_norms;
  MatrixX<Scalar> chol;       // L

  bool active() const { return mean.size() > 0; }
};

template <typename Scalar = double>
struct CategoricalPolicySet {
  Network<Scalar> net;
  std::vector<int> splits;    // d_k per variable
  std::vector<int> offsets;   // start of each logit slice

  VectorX<Scalar> logits;     // cache
  VectorX<Scalar> log_probs;  // cache, per-slice log-softmax

  bool active() const { return !splits.empty(); }
};

template <typename Scalar = double>
struct PolicyPair {
  GaussianPolicyState<Scalar> gaussian;
  CategoricalPolicySet<Scalar> categorical;
};

namespace detail {

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

// Packing order of the correlation outputs: row-major over the strict lower
// triangle, (1,0), (2,0), (2,1), (3,0), ...
inline int tri_index(int j, int k) { return j * (j - 1) / 2 + k; }

}  // namespace detail

// Rebuilds sigma, the Cholesky factor, and the categorical log-probabilities
// from the current network parameters. Must be called after every network
// update and leaves the forward caches positioned for surrogate_loss.
template <typename Scalar>
void refresh_policy(PolicyPair<Scalar>& pair) {
  auto& g = pair.gaussian;
  if (g.active()) {
    const int n = static_cast<int>(g.mean.size());
    const VectorX<Scalar> input = VectorX<Scalar>::Ones(1);
    const VectorX<Scalar> out = forward(g.net, input);
    g.squash = out.head(n).unaryExpr([](Scalar v) { return detail::sigmoid(v); });
    g.sigma = (g.sigma_min + (g.sigma_max - g.sigma_min) * g.squash.array()).matrix();
    if (g.diagonal) {
      g.chol = g.sigma.asDiagonal();
    } else {
      g.corr = MatrixX<Scalar>::Identity(n, n);
      for (int j = 1; j < n; ++j)
        for (int k = 0; k < j; ++k)
          g.corr(j, k) = std::tanh(out(n + detail::tri_index(j, k)));
      g.row_norms = g.corr.rowwise().norm();
      g.unit_rows = g.row_norms.cwiseInverse().asDiagonal() * g.corr;
      g.chol = g.sigma.asDiagonal() * g.unit_rows;
    }
  }

  auto& c = pair.categorical;
  if (c.active()) {
    const VectorX<Scalar> input = VectorX<Scalar>::Ones(1);
    c.logits = forward(c.net, input);
    c.log_probs.resize(c.logits.size());
    for (std::size_t k = 0; k < c.splits.size(); ++k) {
      auto slice = c.logits.segment(c.offsets[k], c.splits[k]);
      const Scalar top = slice.maxCoeff();
      const Scalar lse = top + std::log((slice.array() - top).exp().sum());
      c.log_probs.segment(c.offsets[k], c.splits[k]) = slice.array() - lse;
    }
  }
}

template <typename Scalar>
PolicyPair<Scalar> policy_init(const MixedSearchSpace<Scalar>& space,
                               const PolicyOptions<Scalar>& options, std::uint64_t seed) {
  space.validate();
  if (!(options.sigma_min > Scalar(0)) || !(options.sigma_min <= options.sigma_max))
    throw std::invalid_argument("policy_init: need 0 < sigma_min <= sigma_max");

  PolicyPair<Scalar> pair;
  Rng master(seed);
  const std::uint64_t gauss_seed = master.raw();
  const std::uint64_t cat_seed = master.raw();

  if (space.n_c > 0) {
    auto& g = pair.gaussian;
    g.mean = VectorX<Scalar>::Zero(space.n_c);
    g.sigma_min = options.sigma_min;
    g.sigma_max = options.sigma_max;
    g.diagonal = options.covariance == CovarianceMode::kDiagonal ||
                 (options.covariance == CovarianceMode::kAuto && space.n_c >= 20);
    const int out = space.n_c + (g.diagonal ? 0 : space.n_c * (space.n_c - 1) / 2);
    g.net = network_init<Scalar>({1, options.hidden_width, out}, gauss_seed);
  }
  if (space.n_d() > 0) {
    auto& c = pair.categorical;
    c.splits = space.categories;
    c.offsets.resize(c.splits.size());
    int offset = 0;
    for (std::size_t k = 0; k < c.splits.size(); ++k) {
      c.offsets[k] = offset;
      offset += c.splits[k];
    }
    c.net = network_init<Scalar>({1, options.hidden_width, space.logits_width()}, cat_seed);
  }
  refresh_policy(pair);
  return pair;
}

// Draw order is part of the determinism contract: the continuous block first
// (n_c standard normals), then one uniform per discrete variable in order.
template <typename Scalar>
MixedAction<Scalar> sample(const PolicyPair<Scalar>& pair, const MixedSearchSpace<Scalar>& space,
                           Rng& rng) {
  MixedAction<Scalar> action;
  if (space.n_c > 0) {
    VectorX<Scalar> z(space.n_c);
    for (int j = 0; j < space.n_c; ++j) z(j) = static_cast<Scalar>(rng.normal());
    action.a_c = pair.gaussian.mean + pair.gaussian.chol * z;
  } else {
    action.a_c.resize(0);
  }
  action.a_d.resize(space.n_d());
  for (int k = 0; k < space.n_d(); ++k) {
    const auto logp = pair.categorical.log_probs.segment(pair.categorical.offsets[k],
                                                         pair.categorical.splits[k]);
    const Scalar u = static_cast<Scalar>(rng.uniform());
    Scalar cdf = 0;
    int pick = pair.categorical.splits[k] - 1;
    for (int j = 0; j < pair.categorical.splits[k]; ++j) {
      cdf += std::exp(logp(j));
      if (u < cdf) {
        pick = j;
        break;
      }
    }
    action.a_d(k) = pick;
  }
  return action;
}

template <typename Scalar>
Scalar log_prob_continuous(const GaussianPolicyState<Scalar>& state,
                           const std::type_identity_t<VectorX<Scalar>>& a_c) {
  if (a_c.size() != state.mean.size())
    throw std::invalid_argument("log_prob_continuous: dimension mismatch");
  if (!state.active()) return Scalar(0);
  const int n = static_cast<int>(state.mean.size());
  const VectorX<Scalar> y =
      state.chol.template triangularView<Eigen::Lower>().solve(a_c - state.mean);
  return Scalar(-0.5) * (y.squaredNorm() + Scalar(n) * Scalar(kLogTwoPi)) -
         state.chol.diagonal().array().log().sum();
}

template <typename Scalar>
Scalar log_prob_discrete(const CategoricalPolicySet<Scalar>& set, const Eigen::VectorXi& a_d) {
  if (a_d.size() != static_cast<Eigen::Index>(set.splits.size()))
    throw std::invalid_argument("log_prob_discrete: dimension mismatch");
  Scalar total = 0;
  for (int k = 0; k < a_d.size(); ++k) {
    if (a_d(k) < 0 || a_d(k) >= set.splits[k])
      throw std::invalid_argument("log_prob_discrete: category out of range");
    total += set.log_probs(set.offsets[k] + a_d(k));
  }
  return total;
}

template <typename Scalar>
Scalar log_prob_joint(const PolicyPair<Scalar>& pair, const MixedAction<Scalar>& action) {
  return log_prob_continuous(pair.gaussian, action.a_c) +
         log_prob_discrete(pair.categorical, action.a_d);
}

// Clamp to [-1, 1], then map affinely onto the physical bounds. Clamping only
// affects the evaluated point; the stored action keeps its raw value so
// densities stay unbiased.
template <typename Scalar>
VectorX<Scalar> map_to_physical(const VectorX<Scalar>& a_c, const MixedSearchSpace<Scalar>& space) {
  if (a_c.size() != space.n_c)
    throw std::invalid_argument("map_to_physical: dimension mismatch");
  VectorX<Scalar> physical(space.n_c);
  for (int j = 0; j < space.n_c; ++j) {
    const Scalar c = std::clamp(a_c(j), Scalar(-1), Scalar(1));
    const auto& [low, high] = space.bounds[j];
    physical(j) = low + (c + Scalar(1)) / Scalar(2) * (high - low);
  }
  return physical;
}

template <typename Scalar = double>
struct TrainSample {
  MixedAction<Scalar> action;
  Scalar old_log_prob;
  Scalar advantage;
};

template <typename Scalar = double>
struct SurrogateResult {
  Scalar loss;
  Gradients<Scalar> gaussian;
  Gradients<Scalar> categorical;
};

// Clipped surrogate loss over the buffer:
//   loss = -mean_i min(r_i A_i, clip(r_i, 1-eps, 1+eps) A_i),
//   r_i  = exp(log pi_new(a_i) - old_log_prob_i).
// Gradients flow to the covariance and logits networks only; the mean is
// recombination-updated elsewhere. Requires caches from refresh_policy.
template <typename Scalar>
SurrogateResult<Scalar> surrogate_loss(const PolicyPair<Scalar>& pair,
                                       const std::vector<TrainSample<Scalar>>& buffer,
                                       Scalar clip_eps) {
  if (buffer.empty()) throw std::invalid_argument("surrogate_loss: empty buffer");
  for (const auto& sample : buffer)
    if (!std::isfinite(sample.advantage))
      throw std::invalid_argument("surrogate_loss: non-finite advantage");

  const auto& g = pair.gaussian;
  const auto& c = pair.categorical;
  const int n = static_cast<int>(g.mean.size());
  const Scalar inv_count = Scalar(1) / Scalar(buffer.size());

  Scalar loss = 0;
  // d loss / d L accumulated over the buffer (lower triangle), and
  // d loss / d logits.
  MatrixX<Scalar> d_chol = MatrixX<Scalar>::Zero(n, n);
  Scalar weight_sum = 0;
  VectorX<Scalar> d_logits = VectorX<Scalar>::Zero(c.active() ? c.logits.size() : 0);

  for (const auto& sample : buffer) {
    VectorX<Scalar> y, grad_y;
    Scalar new_lp = 0;
    if (g.active()) {
      y = g.chol.template triangularView<Eigen::Lower>().solve(sample.action.a_c - g.mean);
      new_lp += Scalar(-0.5) * (y.squaredNorm() + Scalar(n) * Scalar(kLogTwoPi)) -
                g.chol.diagonal().array().log().sum();
    }
    if (c.active()) new_lp += log_prob_discrete(c, sample.action.a_d);

    const Scalar ratio = std::exp(new_lp - sample.old_log_prob);
    const Scalar unclipped = ratio * sample.advantage;
    const Scalar clipped =
        std::clamp(ratio, Scalar(1) - clip_eps, Scalar(1) + clip_eps) * sample.advantage;
    loss -= inv_count * std::min(unclipped, clipped);

    // d loss / d new_lp; zero when the clipped branch is strictly smaller,
    // since the clamp is then saturated and locally constant.
    if (unclipped > clipped) continue;
    const Scalar weight = -inv_count * ratio * sample.advantage;
    weight_sum += weight;

    if (g.active()) {
      // d new_lp / d L = (L^-T y) y^T - diag(1 / L_jj).
      grad_y = g.chol.template triangularView<Eigen::Lower>().transpose().solve(y);
      d_chol.template triangularView<Eigen::Lower>() += weight * (grad_y * y.transpose());
    }
    if (c.active()) {
      for (std::size_t k = 0; k < c.splits.size(); ++k) {
        const auto logp = c.log_probs.segment(c.offsets[k], c.splits[k]);
        d_logits.segment(c.offsets[k], c.splits[k]) -= weight * logp.array().exp().matrix();
        d_logits(c.offsets[k] + sample.action.a_d(k)) += weight;
      }
    }
  }

  SurrogateResult<Scalar> result;
  result.loss = loss;

  if (g.active()) {
    d_chol.diagonal().array() -= weight_sum / g.chol.diagonal().array();

    // Chain through L = diag(sigma) * rows, rows = row-normalized tanh
    // triangle (identity in diagonal mode), then through the squashings.
    VectorX<Scalar> d_sigma(n);
    if (g.diagonal) {
      d_sigma = d_chol.diagonal();
    } else {
      d_sigma = (d_chol.cwiseProduct(g.unit_rows)).rowwise().sum();
    }
    VectorX<Scalar> d_out(g.net.output_size());
    d_out.head(n) = (d_sigma.array() * (g.sigma_max - g.sigma_min) * g.squash.array() *
                     (Scalar(1) - g.squash.array()))
                        .matrix();
    if (!g.diagonal) {
      const MatrixX<Scalar> d_rows = g.sigma.asDiagonal() * d_chol;
      const VectorX<Scalar> row_dot = (d_rows.cwiseProduct(g.unit_rows)).rowwise().sum();
      for (int j = 1; j < n; ++j)
        for (int k = 0; k < j; ++k) {
          const Scalar d_corr =
              (d_rows(j, k) - row_dot(j) * g.unit_rows(j, k)) / g.row_norms(j);
          d_out(n + detail::tri_index(j, k)) =
              d_corr * (Scalar(1) - g.corr(j, k) * g.corr(j, k));
        }
    }
    result.gaussian = backward(g.net, d_out);
  }
  if (c.active()) result.categorical = backward(c.net, d_logits);
  return result;
}

// Runs `epochs` clipped-surrogate updates over the buffer, clipping each
// network's gradient to unit global norm. Returns the last epoch's loss.
template <typename Scalar>
Scalar train_policy(PolicyPair<Scalar>& pair, const std::vector<TrainSample<Scalar>>& buffer,
                    Scalar clip_eps, int epochs, OptimizerState<Scalar>& gaussian_opt,
                    OptimizerState<Scalar>& categorical_opt,
                    Scalar max_grad_norm = Scalar(1)) {
  Scalar loss = 0;
  refresh_policy(pair);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    auto result = surrogate_loss(pair, buffer, clip_eps);
    loss = result.loss;
    if (pair.gaussian.active()) {
      clip_gradient_norm(result.gaussian, max_grad_norm);
      apply_update(pair.gaussian.net, result.gaussian, gaussian_opt);
    }
    if (pair.categorical.active()) {
      clip_gradient_norm(result.categorical, max_grad_norm);
      apply_update(pair.categorical.net, result.categorical, categorical_opt);
    }
    refresh_policy(pair);
  }
  return loss;
}

}  // namespace pbo
