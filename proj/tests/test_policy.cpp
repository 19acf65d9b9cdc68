#include <cmath>
#include <vector>

#include "doctest.h"
#include "pbo/policy.hpp"

using namespace pbo;

namespace {

MixedSearchSpace<double> make_space(int n_c, std::vector<int> categories,
                                    std::pair<double, double> bounds = {-1.0, 1.0}) {
  MixedSearchSpace<double> space;
  space.n_c = n_c;
  space.bounds.assign(n_c, bounds);
  space.categories = std::move(categories);
  return space;
}

// Zeroes every parameter of a net, leaving the output at the final bias.
void pin_outputs(Network<double>& net, const VectorX<double>& final_bias) {
  for (auto& w : net.weights) w.setZero();
  for (auto& b : net.biases) b.setZero();
  net.biases.back() = final_bias;
}

double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

// Enumerates mutable references to every parameter of a net.
std::vector<double*> parameters(Network<double>& net) {
  std::vector<double*> params;
  for (auto& w : net.weights)
    for (Eigen::Index i = 0; i < w.size(); ++i) params.push_back(w.data() + i);
  for (auto& b : net.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) params.push_back(b.data() + i);
  return params;
}

}  // namespace

TEST_CASE("search space validation") {
  CHECK_THROWS_AS(make_space(1, {}, {2.0, 1.0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(make_space(0, {1}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(make_space(0, {}).validate(), std::invalid_argument);
  auto space = make_space(2, {2, 3, 4});
  space.validate();
  CHECK(space.n_d() == 3);
  CHECK(space.logits_width() == 9);
}

TEST_CASE("policy_init: determinism and covariance mode resolution") {
  auto space = make_space(3, {2, 2});
  PolicyOptions<double> options;
  auto pair = policy_init(space, options, 42);
  auto again = policy_init(space, options, 42);
  CHECK((pair.gaussian.net.weights[0].array() == again.gaussian.net.weights[0].array()).all());
  CHECK((pair.categorical.net.weights[1].array() == again.categorical.net.weights[1].array()).all());

  CHECK_FALSE(pair.gaussian.diagonal);  // auto resolves to full below 20 variables
  CHECK(pair.gaussian.net.output_size() == 3 + 3);
  CHECK((pair.gaussian.sigma.array() >= options.sigma_min).all());
  CHECK((pair.gaussian.sigma.array() <= options.sigma_max).all());
  CHECK(pair.gaussian.mean.isZero(0));

  auto wide = policy_init(make_space(20, {2}), options, 1);
  CHECK(wide.gaussian.diagonal);
  CHECK(wide.gaussian.net.output_size() == 20);

  options.covariance = CovarianceMode::kDiagonal;
  auto diag = policy_init(space, options, 1);
  CHECK(diag.gaussian.diagonal);
  options.covariance = CovarianceMode::kFull;
  auto full = policy_init(make_space(25, {2}), options, 1);
  CHECK_FALSE(full.gaussian.diagonal);
}

TEST_CASE("sampling: determinism, tails, categorical frequencies") {
  SUBCASE("fixed seed repeats the action") {
    auto space = make_space(2, {3, 2});
    auto pair = policy_init(space, {}, 9);
    Rng a(123), b(123);
    auto first = sample(pair, space, a);
    auto second = sample(pair, space, b);
    CHECK((first.a_c.array() == second.a_c.array()).all());
    CHECK((first.a_d.array() == second.a_d.array()).all());
  }
  SUBCASE("sigma pinned to 0.02 keeps draws inside six sigma") {
    PolicyOptions<double> options;
    options.sigma_min = options.sigma_max = 0.02;
    options.covariance = CovarianceMode::kDiagonal;
    auto space = make_space(2, {});
    auto pair = policy_init(space, options, 5);
    Rng rng(17);
    int violations = 0;
    for (int i = 0; i < 10000; ++i) {
      auto action = sample(pair, space, rng);
      if ((action.a_c.cwiseAbs().array() > 6 * 0.02).any()) ++violations;
    }
    CHECK(violations == 0);
  }
  SUBCASE("equal logits are uniform") {
    auto space = make_space(0, {2});
    auto pair = policy_init(space, {}, 3);
    pin_outputs(pair.categorical.net, VectorX<double>::Zero(2));
    refresh_policy(pair);
    Rng rng(29);
    int zeros = 0;
    for (int i = 0; i < 10000; ++i) zeros += sample(pair, space, rng).a_d(0) == 0;
    CHECK(zeros / 10000.0 == doctest::Approx(0.5).epsilon(0.04));
  }
}

TEST_CASE("log_prob_continuous") {
  SUBCASE("standard normal at the mean") {
    PolicyOptions<double> options;
    options.sigma_min = options.sigma_max = 1.0;
    auto space = make_space(1, {});
    auto pair = policy_init(space, options, 2);
    VectorX<double> zero = VectorX<double>::Zero(1);
    const double lp = log_prob_continuous(pair.gaussian, zero);
    CHECK(lp == doctest::Approx(-0.9189385332046727).epsilon(1e-14));
    CHECK(lp == doctest::Approx(-0.91894).epsilon(1e-5));
  }
  SUBCASE("diagonal covariance factorizes over coordinates") {
    PolicyOptions<double> options;
    options.covariance = CovarianceMode::kDiagonal;
    auto space = make_space(4, {});
    auto pair = policy_init(space, options, 7);
    Rng rng(31);
    VectorX<double> a(4);
    for (int i = 0; i < 4; ++i) a(i) = rng.normal();
    double sum = 0;
    for (int i = 0; i < 4; ++i) {
      const double sigma = pair.gaussian.sigma(i);
      const double z = (a(i) - pair.gaussian.mean(i)) / sigma;
      sum += -0.5 * z * z - std::log(sigma) - 0.5 * kLogTwoPi;
    }
    CHECK(log_prob_continuous(pair.gaussian, a) == doctest::Approx(sum).epsilon(1e-12));
  }
  SUBCASE("quadratic-form identity under the Cholesky factor") {
    PolicyOptions<double> options;
    options.covariance = CovarianceMode::kFull;
    auto space = make_space(4, {});
    auto pair = policy_init(space, options, 13);
    Rng rng(37);
    VectorX<double> z(4);
    for (int i = 0; i < 4; ++i) z(i) = rng.normal();
    const VectorX<double> shifted = pair.gaussian.mean + pair.gaussian.chol * z;
    const double drop = log_prob_continuous(pair.gaussian, pair.gaussian.mean) -
                        log_prob_continuous(pair.gaussian, shifted);
    CHECK(drop == doctest::Approx(0.5 * z.squaredNorm()).epsilon(1e-10));
  }
  SUBCASE("dimension mismatch") {
    auto space = make_space(2, {});
    auto pair = policy_init(space, {}, 1);
    CHECK_THROWS_AS(log_prob_continuous(pair.gaussian, VectorX<double>::Zero(3)),
                    std::invalid_argument);
  }
}

TEST_CASE("log_prob_discrete") {
  SUBCASE("uniform product over two binary variables") {
    auto space = make_space(0, {2, 2});
    auto pair = policy_init(space, {}, 5);
    pin_outputs(pair.categorical.net, VectorX<double>::Zero(4));
    refresh_policy(pair);
    Eigen::VectorXi a(2);
    a << 0, 1;
    CHECK(log_prob_discrete(pair.categorical, a) ==
          doctest::Approx(-1.3862943611198906).epsilon(1e-14));
  }
  SUBCASE("hand softmax with logits (ln 3, 0)") {
    auto space = make_space(0, {2});
    auto pair = policy_init(space, {}, 5);
    VectorX<double> logits(2);
    logits << std::log(3.0), 0.0;
    pin_outputs(pair.categorical.net, logits);
    refresh_policy(pair);
    Eigen::VectorXi a(1);
    a << 0;
    CHECK(log_prob_discrete(pair.categorical, a) ==
          doctest::Approx(-0.2876820724517809).epsilon(1e-13));
  }
  SUBCASE("sums per-variable log-probabilities") {
    auto space = make_space(0, {2, 3, 4});
    auto pair = policy_init(space, {}, 21);
    Eigen::VectorXi a(3);
    a << 1, 2, 3;
    double expected = 0;
    for (int k = 0; k < 3; ++k) {
      const auto slice = pair.categorical.logits.segment(pair.categorical.offsets[k],
                                                         pair.categorical.splits[k]);
      const double top = slice.maxCoeff();
      const double lse = top + std::log((slice.array() - top).exp().sum());
      expected += slice(a(k)) - lse;
    }
    CHECK(log_prob_discrete(pair.categorical, a) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("category out of range") {
    auto space = make_space(0, {2});
    auto pair = policy_init(space, {}, 5);
    Eigen::VectorXi a(1);
    a << 2;
    CHECK_THROWS_AS(log_prob_discrete(pair.categorical, a), std::invalid_argument);
  }
}

TEST_CASE("log_prob_joint is the exact sum of its parts") {
  auto space = make_space(3, {2, 4});
  auto pair = policy_init(space, {}, 77);
  Rng rng(101);
  for (int i = 0; i < 1000; ++i) {
    auto action = sample(pair, space, rng);
    const double joint = log_prob_joint(pair, action);
    const double parts = log_prob_continuous(pair.gaussian, action.a_c) +
                         log_prob_discrete(pair.categorical, action.a_d);
    CHECK(joint == doctest::Approx(parts).epsilon(1e-12));
  }

  auto continuous_only = make_space(2, {});
  auto cp = policy_init(continuous_only, {}, 3);
  auto ca = sample(cp, continuous_only, rng);
  CHECK(log_prob_joint(cp, ca) == log_prob_continuous(cp.gaussian, ca.a_c));

  auto discrete_only = make_space(0, {3});
  auto dp = policy_init(discrete_only, {}, 3);
  auto da = sample(dp, discrete_only, rng);
  CHECK(log_prob_joint(dp, da) == log_prob_discrete(dp.categorical, da.a_d));
}

TEST_CASE("map_to_physical clamps then maps") {
  auto space = make_space(1, {}, {50.0, 150.0});
  VectorX<double> a(1);
  a << 0.0;
  CHECK(map_to_physical(a, space)(0) == doctest::Approx(100.0).epsilon(1e-15));
  a << 1.7;
  CHECK(map_to_physical(a, space)(0) == doctest::Approx(150.0).epsilon(1e-15));
  a << -1.0;
  CHECK(map_to_physical(a, space)(0) == doctest::Approx(50.0).epsilon(1e-15));
}

TEST_CASE("surrogate loss values at fixed ratios") {
  auto space = make_space(2, {2});
  auto pair = policy_init(space, {}, 11);
  Rng rng(55);

  SUBCASE("ratio one gives -mean(advantage)") {
    std::vector<TrainSample<double>> buffer;
    double mean_adv = 0;
    for (int i = 0; i < 6; ++i) {
      TrainSample<double> sample_i;
      sample_i.action = sample(pair, space, rng);
      sample_i.old_log_prob = log_prob_joint(pair, sample_i.action);
      sample_i.advantage = rng.normal();
      mean_adv += sample_i.advantage / 6;
      buffer.push_back(sample_i);
    }
    const auto result = surrogate_loss(pair, buffer, 0.2);
    CHECK(result.loss == doctest::Approx(-mean_adv).epsilon(1e-12));
  }
  SUBCASE("zero advantages give zero loss and zero gradients") {
    std::vector<TrainSample<double>> buffer;
    for (int i = 0; i < 4; ++i) {
      TrainSample<double> sample_i;
      sample_i.action = sample(pair, space, rng);
      sample_i.old_log_prob = log_prob_joint(pair, sample_i.action);
      sample_i.advantage = 0.0;
      buffer.push_back(sample_i);
    }
    const auto result = surrogate_loss(pair, buffer, 0.2);
    CHECK(result.loss == 0.0);
    for (const auto& w : result.gaussian.weights) CHECK(w.isZero(0));
    for (const auto& w : result.categorical.weights) CHECK(w.isZero(0));
  }
  SUBCASE("ratio forced to 1.5 activates the clip") {
    TrainSample<double> sample_0;
    sample_0.action = sample(pair, space, rng);
    sample_0.old_log_prob = log_prob_joint(pair, sample_0.action) - std::log(1.5);
    sample_0.advantage = 1.0;
    const auto result = surrogate_loss(pair, {sample_0}, 0.2);
    CHECK(result.loss == doctest::Approx(-1.2).epsilon(1e-12));
    for (const auto& w : result.gaussian.weights) CHECK(w.isZero(0));
    for (const auto& w : result.categorical.weights) CHECK(w.isZero(0));
  }
  SUBCASE("usage errors") {
    CHECK_THROWS_AS(surrogate_loss(pair, {}, 0.2), std::invalid_argument);
    TrainSample<double> bad;
    bad.action = sample(pair, space, rng);
    bad.old_log_prob = log_prob_joint(pair, bad.action);
    bad.advantage = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(surrogate_loss(pair, {bad}, 0.2), std::invalid_argument);
  }
}

TEST_CASE("surrogate loss gradients match finite differences") {
  Rng rng(2024);
  const double log_ratios[] = {0.0, 0.08, -0.08, 0.3, -0.35};
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n_c = static_cast<int>(rng.uniform() * 4);  // 0..3
    const int n_d = static_cast<int>(rng.uniform() * 3);  // 0..2
    if (n_c == 0 && n_d == 0) continue;
    std::vector<int> categories;
    for (int k = 0; k < n_d; ++k) categories.push_back(2 + static_cast<int>(rng.uniform() * 3));
    auto space = make_space(n_c, categories);
    PolicyOptions<double> options;
    options.hidden_width = 4;
    options.covariance = trial % 2 == 0 ? CovarianceMode::kFull : CovarianceMode::kDiagonal;
    auto pair = policy_init(space, options, rng.raw());

    std::vector<TrainSample<double>> buffer;
    const int count = 1 + static_cast<int>(rng.uniform() * 5);
    for (int i = 0; i < count; ++i) {
      TrainSample<double> entry;
      entry.action = sample(pair, space, rng);
      // Fix the ratio away from the clip kinks so the loss is differentiable
      // at the evaluation point.
      entry.old_log_prob = log_prob_joint(pair, entry.action) -
                           log_ratios[static_cast<int>(rng.uniform() * 5)];
      entry.advantage = rng.normal();
      buffer.push_back(entry);
    }

    const auto analytic = surrogate_loss(pair, buffer, 0.2);
    auto check_net = [&](Network<double>& net, const Gradients<double>& grads) {
      auto flat = parameters(net);
      std::vector<double*> grad_flat;
      Gradients<double> mutable_grads = grads;
      for (auto& w : mutable_grads.weights)
        for (Eigen::Index i = 0; i < w.size(); ++i) grad_flat.push_back(w.data() + i);
      for (auto& b : mutable_grads.biases)
        for (Eigen::Index i = 0; i < b.size(); ++i) grad_flat.push_back(b.data() + i);
      const double h = 1e-5;
      for (std::size_t p = 0; p < flat.size(); ++p) {
        const double saved = *flat[p];
        *flat[p] = saved + h;
        refresh_policy(pair);
        const double up = surrogate_loss(pair, buffer, 0.2).loss;
        *flat[p] = saved - h;
        refresh_policy(pair);
        const double down = surrogate_loss(pair, buffer, 0.2).loss;
        *flat[p] = saved;
        worst = std::max(worst, rel_err(*grad_flat[p], (up - down) / (2 * h)));
      }
      refresh_policy(pair);
    };
    if (pair.gaussian.active()) check_net(pair.gaussian.net, analytic.gaussian);
    if (pair.categorical.active()) check_net(pair.categorical.net, analytic.categorical);
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("one step on a fresh buffer descends") {
  auto space = make_space(2, {3});
  auto pair = policy_init(space, {}, 31);
  Rng rng(71);
  std::vector<TrainSample<double>> buffer;
  const double advantages[] = {2.0, -0.5, 0.3, -0.1};
  for (double adv : advantages) {
    TrainSample<double> entry;
    entry.action = sample(pair, space, rng);
    entry.old_log_prob = log_prob_joint(pair, entry.action);
    entry.advantage = adv;
    buffer.push_back(entry);
  }
  const double loss0 = surrogate_loss(pair, buffer, 0.2).loss;
  auto gaussian_opt = optimizer_init(pair.gaussian.net, 1e-3);
  auto categorical_opt = optimizer_init(pair.categorical.net, 1e-3);
  train_policy(pair, buffer, 0.2, 1, gaussian_opt, categorical_opt);
  const double loss1 = surrogate_loss(pair, buffer, 0.2).loss;
  CHECK(loss1 < loss0);
}

TEST_CASE("distribution caches stay valid through training") {
  auto space = make_space(5, {2, 3});
  PolicyOptions<double> options;
  options.covariance = CovarianceMode::kFull;
  auto pair = policy_init(space, options, 47);
  auto gaussian_opt = optimizer_init(pair.gaussian.net);
  auto categorical_opt = optimizer_init(pair.categorical.net);
  Rng rng(83);

  for (int round = 0; round < 5; ++round) {
    std::vector<TrainSample<double>> buffer;
    for (int i = 0; i < 8; ++i) {
      TrainSample<double> entry;
      entry.action = sample(pair, space, rng);
      entry.old_log_prob = log_prob_joint(pair, entry.action);
      entry.advantage = rng.normal();
      buffer.push_back(entry);
    }
    train_policy(pair, buffer, 0.2, 4, gaussian_opt, categorical_opt);

    for (std::size_t k = 0; k < pair.categorical.splits.size(); ++k) {
      const double total = pair.categorical.log_probs
                               .segment(pair.categorical.offsets[k], pair.categorical.splits[k])
                               .array()
                               .exp()
                               .sum();
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }

    const MatrixX<double> cov = pair.gaussian.chol * pair.gaussian.chol.transpose();
    Eigen::LLT<MatrixX<double>> llt(cov);
    CHECK(llt.info() == Eigen::Success);
    for (int j = 0; j < 5; ++j)
      CHECK(cov(j, j) ==
            doctest::Approx(pair.gaussian.sigma(j) * pair.gaussian.sigma(j)).epsilon(1e-10));
    CHECK((pair.gaussian.sigma.array() >= options.sigma_min).all());
    CHECK((pair.gaussian.sigma.array() <= options.sigma_max).all());
  }
}
