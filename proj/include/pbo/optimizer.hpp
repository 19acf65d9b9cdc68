#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "pbo/policy.hpp"

namespace pbo {

template <typename Scalar = double>
struct PboConfig {
  int population = 32;
  int elites = 0;  // 0 = population / 2
  long budget = 9984;
  Scalar clip_eps = Scalar(0.2);
  int epochs = 32;
  std::uint64_t seed = 1;
  Scalar sigma_min = Scalar(0.02);
  Scalar sigma_max = Scalar(1);
  CovarianceMode covariance = CovarianceMode::kAuto;
  int hidden_width = 32;
  Scalar learning_rate = Scalar(5e-3);
  bool sample_std = false;  // whitening convention: population (default) or sample std
  int threads = 0;          // evaluation threads; 0 = all hardware threads
  bool progress = true;     // one tab-separated line per generation on stderr

  int resolved_elites() const { return elites > 0 ? elites : population / 2; }

  void validate() const {
    if (population < 2) throw std::invalid_argument("config: population must be >= 2");
    if (elites < 0 || resolved_elites() > population)
      throw std::invalid_argument("config: need 0 < elites <= population");
    if (budget < population) throw std::invalid_argument("config: budget must be >= population");
    if (budget % population != 0)
      throw std::invalid_argument("config: budget must be a multiple of the population size");
    if (!(clip_eps > Scalar(0))) throw std::invalid_argument("config: clip must be positive");
    if (epochs < 0) throw std::invalid_argument("config: epochs must be non-negative");
    if (!(sigma_min > Scalar(0)) || !(sigma_min <= sigma_max))
      throw std::invalid_argument("config: need 0 < sigma_min <= sigma_max");
    if (hidden_width < 1) throw std::invalid_argument("config: hidden_width must be >= 1");
    if (!(learning_rate > Scalar(0)))
      throw std::invalid_argument("config: learning_rate must be positive");
    if (threads < 0) throw std::invalid_argument("config: threads must be >= 0");
  }
};

template <typename Scalar = double>
struct GenerationRecord {
  int generation = 0;
  std::vector<MixedAction<Scalar>> actions;
  std::vector<VectorX<Scalar>> physical;
  VectorX<Scalar> rewards;  // -cost, non-finite entries already substituted
  VectorX<Scalar> whitened;
  std::vector<int> elites;
  VectorX<Scalar> old_log_probs;
  bool degenerate = false;
};

template <typename Scalar = double>
struct OptimizationResult {
  MixedAction<Scalar> best_action;
  VectorX<Scalar> best_physical;
  Scalar best_cost = std::numeric_limits<Scalar>::infinity();
  std::vector<Scalar> best_history;  // best-so-far cost after each evaluation
  std::vector<Scalar> mean_history;  // population mean cost per generation
  PolicyPair<Scalar> policy;
  std::uint64_t seed = 0;
  long evaluations = 0;
};

template <typename Scalar = double>
struct Whitened {
  VectorX<Scalar> values;
  bool degenerate = false;
};

// (R - mean) / std. Population (divide-by-N) standard deviation by default;
// a spread below 1e-12 yields all zeros and marks the generation degenerate.
template <typename Derived>
Whitened<typename Derived::Scalar> whiten(const Eigen::DenseBase<Derived>& raw,
                                          bool sample_std = false) {
  using Scalar = typename Derived::Scalar;
  const VectorX<Scalar> rewards = raw.derived();
  const auto count = rewards.size();
  if (count < 2) throw std::invalid_argument("whiten: need at least two rewards");
  const Scalar mean = rewards.mean();
  const VectorX<Scalar> centered = rewards.array() - mean;
  const Scalar divisor = sample_std ? Scalar(count - 1) : Scalar(count);
  const Scalar std_dev = std::sqrt(centered.squaredNorm() / divisor);

  Whitened<Scalar> result;
  if (std_dev < Scalar(1e-12)) {
    result.values = VectorX<Scalar>::Zero(count);
    result.degenerate = true;
  } else {
    result.values = centered / std_dev;
  }
  return result;
}

// Indices of the `count` highest rewards, ordered by descending reward with
// ties broken toward the lower sample index.
template <typename Scalar>
std::vector<int> select_elites(const VectorX<Scalar>& rewards, int count) {
  if (count < 1 || count > rewards.size())
    throw std::invalid_argument("select_elites: need 0 < count <= population");
  std::vector<int> order(rewards.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (rewards(a) != rewards(b)) return rewards(a) > rewards(b);
    return a < b;
  });
  order.resize(count);
  return order;
}

// Convex recombination of elite points. Weights are proportional to the elite
// values, shifted by -min + 1e-8 first whenever any value is non-positive so
// that weights stay non-negative and sum to one; the result is clamped into
// [-1, 1] per coordinate. All-zero values (degenerate generation) leave the
// mean unchanged.
template <typename Scalar>
VectorX<Scalar> update_mean(const std::type_identity_t<VectorX<Scalar>>& mean,
                            const std::vector<VectorX<Scalar>>& elite_points,
                            const std::type_identity_t<VectorX<Scalar>>& elite_values) {
  if (elite_points.empty() || elite_values.size() != static_cast<Eigen::Index>(elite_points.size()))
    throw std::invalid_argument("update_mean: empty or mismatched elite set");
  if (elite_values.cwiseAbs().maxCoeff() == Scalar(0)) return mean;

  VectorX<Scalar> weights = elite_values;
  const Scalar low = weights.minCoeff();
  if (low <= Scalar(0)) weights.array() += -low + Scalar(1e-8);
  weights /= weights.sum();

  VectorX<Scalar> next = VectorX<Scalar>::Zero(mean.size());
  for (std::size_t i = 0; i < elite_points.size(); ++i) next += weights(i) * elite_points[i];
  return next.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
}

namespace detail {

// Evaluates objective(physical[i], actions[i]) into costs[i] for every i.
// Writes are disjoint and the later reduction runs in sample-index order, so
// the outcome is independent of the thread count.
template <typename Scalar, typename Objective>
void evaluate_population(Objective&& objective, const std::vector<VectorX<Scalar>>& physical,
                         const std::vector<MixedAction<Scalar>>& actions,
                         VectorX<Scalar>& costs, int threads) {
  const int population = static_cast<int>(physical.size());
  if (threads == 0) {
    threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads == 0) threads = 1;
  }
  threads = std::min(threads, population);

  if (threads <= 1) {
    for (int i = 0; i < population; ++i) costs(i) = objective(physical[i], actions[i].a_d);
    return;
  }

  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    try {
      for (int i = next.fetch_add(1); i < population; i = next.fetch_add(1))
        costs(i) = objective(physical[i], actions[i].a_d);
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& thread : pool) thread.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

// The full generation loop: sample a population, evaluate costs (rewards are
// their negation), whiten, select elites, recombine the mean, then train the
// covariance and logits networks on the elite buffer. The objective receives
// (physical continuous vector, categorical choices) and must be pure; it may
// be called from several threads at once.
template <typename Scalar, typename Objective>
OptimizationResult<Scalar> run(
    Objective&& objective, const MixedSearchSpace<Scalar>& space, const PboConfig<Scalar>& config,
    const std::type_identity_t<std::function<void(const GenerationRecord<Scalar>&)>>& observer =
        {}) {
  config.validate();
  space.validate();

  Rng master(config.seed);
  PolicyOptions<Scalar> options;
  options.sigma_min = config.sigma_min;
  options.sigma_max = config.sigma_max;
  options.covariance = config.covariance;
  options.hidden_width = config.hidden_width;
  PolicyPair<Scalar> pair = policy_init(space, options, master.raw());
  Rng sampler(master.raw());

  OptimizerState<Scalar> gaussian_opt, categorical_opt;
  if (pair.gaussian.active()) gaussian_opt = optimizer_init(pair.gaussian.net, config.learning_rate);
  if (pair.categorical.active())
    categorical_opt = optimizer_init(pair.categorical.net, config.learning_rate);

  const int population = config.population;
  const int elite_count = config.resolved_elites();
  const long generations = config.budget / population;

  OptimizationResult<Scalar> result;
  result.seed = config.seed;
  result.best_history.reserve(config.budget);
  result.mean_history.reserve(generations);

  GenerationRecord<Scalar> record;
  for (long gen = 0; gen < generations; ++gen) {
    record = GenerationRecord<Scalar>{};
    record.generation = static_cast<int>(gen);
    record.actions.resize(population);
    record.physical.resize(population);
    record.old_log_probs.resize(population);
    for (int i = 0; i < population; ++i) {
      record.actions[i] = sample(pair, space, sampler);
      record.old_log_probs(i) = log_prob_joint(pair, record.actions[i]);
      record.physical[i] = map_to_physical(record.actions[i].a_c, space);
    }

    VectorX<Scalar> costs(population);
    detail::evaluate_population(objective, record.physical, record.actions, costs,
                                config.threads);

    // Non-finite costs are replaced by the generation's worst finite cost so a
    // single bad sample cannot poison the statistics.
    Scalar worst = -std::numeric_limits<Scalar>::infinity();
    bool any_finite = false;
    for (int i = 0; i < population; ++i)
      if (std::isfinite(costs(i))) {
        worst = std::max(worst, costs(i));
        any_finite = true;
      }
    if (!any_finite)
      throw std::runtime_error("run: every cost in generation " + std::to_string(gen) +
                               " was non-finite");
    for (int i = 0; i < population; ++i)
      if (!std::isfinite(costs(i))) {
        std::fprintf(stderr, "generation %ld: sample %d returned a non-finite cost, using %g\n",
                     gen, i, static_cast<double>(worst));
        costs(i) = worst;
      }
    record.rewards = -costs;

    for (int i = 0; i < population; ++i) {
      ++result.evaluations;
      if (costs(i) < result.best_cost) {
        result.best_cost = costs(i);
        result.best_action = record.actions[i];
        result.best_physical = record.physical[i];
      }
      result.best_history.push_back(result.best_cost);
    }
    result.mean_history.push_back(costs.mean());

    auto whitened = whiten(record.rewards, config.sample_std);
    record.whitened = whitened.values;
    record.degenerate = whitened.degenerate;
    record.elites = select_elites(record.rewards, elite_count);

    if (config.progress)
      std::fprintf(stderr, "%ld\t%ld\t%.9g\t%.9g\n", gen, result.evaluations,
                   static_cast<double>(result.mean_history.back()),
                   static_cast<double>(result.best_cost));
    if (observer) observer(record);
    if (record.degenerate) continue;

    VectorX<Scalar> elite_values(elite_count);
    for (int e = 0; e < elite_count; ++e) elite_values(e) = record.whitened(record.elites[e]);

    if (pair.gaussian.active()) {
      std::vector<VectorX<Scalar>> elite_points(elite_count);
      for (int e = 0; e < elite_count; ++e) elite_points[e] = record.actions[record.elites[e]].a_c;
      pair.gaussian.mean = update_mean(pair.gaussian.mean, elite_points, elite_values);
    }

    // Advantages: elite whitened rewards re-centered to zero mean.
    const Scalar advantage_mean = elite_values.mean();
    std::vector<TrainSample<Scalar>> buffer(elite_count);
    for (int e = 0; e < elite_count; ++e) {
      buffer[e].action = record.actions[record.elites[e]];
      buffer[e].old_log_prob = record.old_log_probs(record.elites[e]);
      buffer[e].advantage = elite_values(e) - advantage_mean;
    }
    train_policy(pair, buffer, config.clip_eps, config.epochs, gaussian_opt, categorical_opt);
  }

  result.policy = std::move(pair);
  return result;
}

}  // namespace pbo
