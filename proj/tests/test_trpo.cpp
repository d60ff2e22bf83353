#include "pinchcut/trpo.hpp"
#include "toy_envs.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

using namespace pinchcut;
using namespace pinchcut::toy;

TEST(Policy, ProbabilitiesNormalized) {
  const Policy p = Policy::create(53, 4, 1);
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    Eigen::VectorXd o = Eigen::VectorXd::Random(53) * 3;
    const auto probs = p.probabilities(o);
    EXPECT_NEAR(probs.sum(), 1.0, 1e-9);
    EXPECT_GT(probs.minCoeff(), 0.0);
  }
  EXPECT_EQ(p.parameter_count(), 53 * 32 + 32 + 32 * 32 + 32 + 32 * 4 + 4);
}

TEST(Policy, RejectsWrongObservationSize) {
  const Policy p = Policy::create(5, 4, 1);
  EXPECT_THROW(p.forward(Eigen::VectorXd::Zero(4)), PolicyError);
}

TEST(Policy, SaveLoadRoundTrip) {
  const Policy p = Policy::create(7, 4, 99, {5, 6});
  const auto path = std::filesystem::temp_directory_path() / "pinchcut_policy_roundtrip.bin";
  p.save(path.string());
  const Policy q = Policy::load(path.string());
  EXPECT_EQ(q.layer_sizes(), p.layer_sizes());
  EXPECT_EQ(q.parameters(), p.parameters());
  std::filesystem::remove(path);
}

TEST(Policy, LoadRejectsGarbage) {
  const auto path = std::filesystem::temp_directory_path() / "pinchcut_policy_garbage.bin";
  {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    std::fputs("not a policy", f);
    std::fclose(f);
  }
  EXPECT_THROW(Policy::load(path.string()), PolicyError);
  std::filesystem::remove(path);
  EXPECT_THROW(Policy::load(path.string()), PolicyError);
}

TEST(Trpo, ReturnsToGo) {
  EXPECT_EQ(returns_to_go({0, 0, -5}, 1.0), (std::vector<double>{-5, -5, -5}));
  EXPECT_EQ(returns_to_go({1, 1}, 0.5), (std::vector<double>{1.5, 1.0}));
}

TEST(Trpo, AdvantageNormalization) {
  std::vector<double> adv{3, -1, 4, 1, -5, 9, 2, 6};
  normalize_advantages(adv);
  double m = 0, v = 0;
  for (double a : adv) m += a;
  m /= adv.size();
  for (double a : adv) v += (a - m) * (a - m);
  v /= adv.size();
  EXPECT_LT(std::abs(m), 1e-9);
  EXPECT_NEAR(v, 1.0, 1e-6);
  std::vector<double> flat{2, 2, 2};
  normalize_advantages(flat);
  EXPECT_EQ(flat, (std::vector<double>{0, 0, 0}));
}

TEST(Trpo, BatchRespectsEpisodeBoundaries) {
  ChainEnv proto;
  proto.length = 30;
  TrainConfig cfg;
  cfg.batch_size = 50;
  const Policy p = Policy::create(3, 4, 1);
  TimestepBaseline baseline;
  const RolloutBatch b = collect_batch([&] { return proto; }, p, cfg, 0, baseline);
  EXPECT_EQ(b.size(), 60u);
  EXPECT_EQ(b.episode_returns.size(), 2u);
  EXPECT_EQ(b.observations.size(), b.size());
  EXPECT_EQ(b.returns.size(), b.size());
  EXPECT_EQ(b.old_log_probs.size(), b.size());
}

TEST(Trpo, IdentityPolicyHasZeroKl) {
  const Policy p = Policy::create(4, 4, 3);
  Rng rng(4);
  RolloutBatch b = random_batch(p, rng, 40);
  normalize_advantages(b.advantages);
  const auto s = surrogate_and_kl(p, b);
  EXPECT_NEAR(s.kl, 0.0, 1e-15);
  EXPECT_NEAR(s.surrogate, 0.0, 1e-12);
}

TEST(Trpo, KlMatchesHandComputation) {
  // Two states, two actions, single-layer policy with hand-set logits.
  Policy p = Policy::create(2, 2, 0, {});
  // Parameters: W (2x2 row-major) then b.
  Eigen::VectorXd theta(6);
  theta << 1.0, 0.0, 0.0, -0.5, 0.0, 0.0;
  p.set_parameters(theta);
  RolloutBatch b;
  const Eigen::Vector2d s0(1, 0), s1(0, 1);
  const Eigen::Vector2d q0(0.7, 0.3), q1(0.2, 0.8);
  for (const auto& [s, q] : {std::pair{s0, q0}, std::pair{s1, q1}}) {
    b.observations.push_back(s);
    b.actions.push_back(0);
    b.old_probs.push_back(q);
    b.old_log_probs.push_back(std::log(q[0]));
    b.advantages.push_back(0.0);
  }
  auto softmax = [](double l0, double l1) {
    const double z = std::exp(l0) + std::exp(l1);
    return Eigen::Vector2d(std::exp(l0) / z, std::exp(l1) / z);
  };
  const Eigen::Vector2d p0 = softmax(1.0, 0.0), p1 = softmax(0.0, -0.5);
  const double kl0 = q0[0] * std::log(q0[0] / p0[0]) + q0[1] * std::log(q0[1] / p0[1]);
  const double kl1 = q1[0] * std::log(q1[0] / p1[0]) + q1[1] * std::log(q1[1] / p1[1]);
  EXPECT_NEAR(surrogate_and_kl(p, b).kl, 0.5 * (kl0 + kl1), 1e-14);
}

TEST(Trpo, KlIsNonNegative) {
  Rng rng(8);
  const Policy old = Policy::create(3, 4, 1, {6});
  RolloutBatch b = random_batch(old, rng, 30);
  for (int k = 0; k < 20; ++k) {
    Policy p = old;
    p.set_parameters(old.parameters() + 0.3 * Eigen::VectorXd::Random(old.parameter_count()));
    EXPECT_GE(surrogate_and_kl(p, b).kl, 0.0);
  }
}

TEST(Trpo, GradientMatchesFiniteDifferences) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int obs = 2 + int(uniform_index(rng, 4));
    const int hidden = 3 + int(uniform_index(rng, 5));
    Policy p = Policy::create(obs, 4, 100 + trial, {hidden, hidden});
    // Move away from the near-uniform initialization.
    p.set_parameters(p.parameters() + 0.5 * Eigen::VectorXd::Random(p.parameter_count()));
    const RolloutBatch b = random_batch(p, rng, 10);
    const Eigen::VectorXd g = policy_gradient(p, b);
    ASSERT_EQ(g.size(), p.parameter_count());
    const Eigen::VectorXd theta = p.parameters();
    const double eps = 1e-5;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp[i] += eps;
      tm[i] -= eps;
      p.set_parameters(tp);
      const double fp = surrogate_and_kl(p, b).surrogate;
      p.set_parameters(tm);
      const double fm = surrogate_and_kl(p, b).surrogate;
      const double fd = (fp - fm) / (2 * eps);
      const double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - g[i]) / scale);
    }
    p.set_parameters(theta);
    EXPECT_LT(worst, 1e-4) << "trial " << trial;
  }
}

TEST(Trpo, FisherProductMatchesKlHessian) {
  Rng rng(5);
  Policy p = Policy::create(3, 4, 7, {4});
  p.set_parameters(p.parameters() + 0.5 * Eigen::VectorXd::Random(p.parameter_count()));
  const RolloutBatch b = random_batch(p, rng, 8);
  const FisherOperator fisher(p, b, 0.0);
  const Eigen::VectorXd v = Eigen::VectorXd::Random(p.parameter_count());
  const Eigen::VectorXd fv = fisher(v);
  // Second-order finite difference of KL along v: v^T F v = d^2/dt^2 KL(t v).
  const double h = 1e-3;
  const Eigen::VectorXd theta = p.parameters();
  p.set_parameters(theta + h * v);
  const double kp = surrogate_and_kl(p, b).kl;
  p.set_parameters(theta - h * v);
  const double km = surrogate_and_kl(p, b).kl;
  EXPECT_NEAR(v.dot(fv), (kp + km) / (h * h), 1e-4 * std::abs(v.dot(fv)) + 1e-8);
}

TEST(Trpo, ConjugateGradientSolvesSpdSystem) {
  Eigen::MatrixXd a(3, 3);
  a << 4, 1, 0, 1, 3, 1, 0, 1, 2;
  const Eigen::Vector3d b(1, 2, 3);
  const Eigen::VectorXd x = conjugate_gradient([&](const Eigen::VectorXd& v) { return Eigen::VectorXd(a * v); },
                                               Eigen::VectorXd(b), 10);
  EXPECT_LT((a * x - b).norm(), 1e-8);
}

TEST(Trpo, ZeroAdvantageLeavesPolicyUnchanged) {
  Rng rng(6);
  Policy p = Policy::create(3, 4, 2);
  RolloutBatch b = random_batch(p, rng, 20);
  std::fill(b.advantages.begin(), b.advantages.end(), 0.0);
  EXPECT_TRUE(policy_gradient(p, b).isZero());
  const Eigen::VectorXd before = p.parameters();
  const auto stats = trpo_update(p, b, TrainConfig{});
  EXPECT_FALSE(stats.accepted);
  EXPECT_EQ(p.parameters(), before);
}

TEST(Trpo, BanditReachesOptimum) {
  TrainConfig cfg;
  cfg.seed = 1;
  const TrainResult r = train([] { return BanditEnv{}; }, cfg);
  EXPECT_EQ(r.mean_returns.size(), 20u);
  EXPECT_GT(r.policy.probabilities(Eigen::VectorXd::Ones(1))[0], 0.9);
  for (std::size_t i = 16; i < r.mean_returns.size(); ++i) {
    EXPECT_GE(r.mean_returns[i], r.mean_returns[i - 1] - 0.05);
  }
}

TEST(Trpo, AcceptedUpdatesRespectTrustRegion) {
  TrainConfig cfg;
  cfg.batch_size = 200;
  cfg.seed = 4;
  const TrainResult r = train([] { return ChainEnv{}; }, cfg, {8, 8});
  ASSERT_EQ(r.updates.size(), 20u);
  int accepted = 0;
  for (const auto& u : r.updates) {
    if (!u.accepted) continue;
    ++accepted;
    EXPECT_LE(u.kl, cfg.max_kl);
    EXPECT_GT(u.surrogate_after, u.surrogate_before);
  }
  EXPECT_GT(accepted, 0);
}

TEST(Trpo, TrainingIsDeterministic) {
  TrainConfig cfg;
  cfg.iterations = 3;
  cfg.batch_size = 100;
  cfg.seed = 12;
  const auto a = train([] { return ChainEnv{}; }, cfg, {6});
  const auto b = train([] { return ChainEnv{}; }, cfg, {6});
  EXPECT_EQ(a.policy.parameters(), b.policy.parameters());
}

TEST(Trpo, ConfigValidation) {
  TrainConfig cfg;
  cfg.max_kl = 0.0;
  EXPECT_THROW(cfg.validate(), TrainingError);
  cfg = TrainConfig{};
  cfg.discount = 1.5;
  EXPECT_THROW(cfg.validate(), TrainingError);
}
