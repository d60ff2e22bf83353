#pragma once

#include "pinchcut/policy.hpp"
#include "pinchcut/rng.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pinchcut {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hyperparameters. The trust-region radius `max_kl` is the 0.01 "step size".
struct TrainConfig {
  int iterations = 20;
  int batch_size = 500;
  double max_kl = 0.01;
  double discount = 1.0;
  int cg_iterations = 10;
  double cg_damping = 0.1;
  int backtrack_steps = 10;
  double backtrack_ratio = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations < 0) throw TrainingError("iterations must be >= 0");
    if (batch_size < 1) throw TrainingError("batch_size must be >= 1");
    if (!(max_kl > 0.0)) throw TrainingError("max_kl must be positive");
    if (!(discount > 0.0 && discount <= 1.0)) throw TrainingError("discount must lie in (0, 1]");
    if (cg_iterations < 1) throw TrainingError("cg_iterations must be >= 1");
    if (!(cg_damping >= 0.0)) throw TrainingError("cg_damping must be non-negative");
    if (backtrack_steps < 1) throw TrainingError("backtrack_steps must be >= 1");
    if (!(backtrack_ratio > 0.0 && backtrack_ratio < 1.0)) {
      throw TrainingError("backtrack_ratio must lie in (0, 1)");
    }
  }
};

/// Flattened experience of one iteration; all vectors have one entry per step.
struct RolloutBatch {
  std::vector<Eigen::VectorXd> observations;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> returns;
  std::vector<double> advantages;
  std::vector<Eigen::VectorXd> old_probs;
  std::vector<double> old_log_probs;
  std::vector<std::size_t> timesteps;
  std::vector<double> episode_returns;

  std::size_t size() const { return actions.size(); }
};

/// Mean return observed at each timestep index, accumulated across batches.
class TimestepBaseline {
 public:
  double value(std::size_t t) const { return t < count_.size() && count_[t] ? sum_[t] / count_[t] : 0.0; }
  void add(std::size_t t, double ret) {
    if (t >= sum_.size()) {
      sum_.resize(t + 1, 0.0);
      count_.resize(t + 1, 0);
    }
    sum_[t] += ret;
    ++count_[t];
  }

 private:
  std::vector<double> sum_;
  std::vector<std::size_t> count_;
};

/// Suffix sums of `rewards` with discount.
inline std::vector<double> returns_to_go(const std::vector<double>& rewards, double discount) {
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + discount * acc;
    out[t] = acc;
  }
  return out;
}

/// Shifts to zero mean and scales to unit (population) variance. A constant
/// vector becomes all zeros.
inline void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= double(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= double(adv.size());
  const double sd = std::sqrt(var);
  for (double& a : adv) a = sd > 1e-12 ? (a - mean) / sd : 0.0;
}

/// Collects whole episodes until at least `batch_size` steps are gathered.
/// Episode k of iteration i samples actions from seed (config.seed, i, k).
template <class EnvFactory>
RolloutBatch collect_batch(EnvFactory&& make_env, const Policy& policy, const TrainConfig& config,
                           std::uint64_t iteration, TimestepBaseline& baseline) {
  auto env = make_env();
  if (env.observation_size() != policy.observation_size() ||
      env.action_count() != policy.action_count()) {
    throw TrainingError("policy dimensions do not match the environment");
  }
  RolloutBatch batch;
  std::vector<std::pair<std::size_t, double>> seen;
  for (std::uint64_t episode = 0; batch.size() < std::size_t(config.batch_size); ++episode) {
    Rng rng(derive_seed({config.seed, iteration, episode}));
    Eigen::VectorXd obs = env.reset();
    std::vector<double> rewards;
    for (bool done = false; !done;) {
      const auto f = policy.forward(obs);
      const int a = policy.sample(obs, rng);
      auto step = env.step(a);
      batch.observations.push_back(std::move(obs));
      batch.actions.push_back(a);
      batch.old_probs.push_back(f.probs);
      batch.old_log_probs.push_back(std::log(f.probs[a]));
      batch.timesteps.push_back(rewards.size());
      rewards.push_back(step.reward);
      obs = std::move(step.observation);
      done = step.done;
    }
    const auto ret = returns_to_go(rewards, config.discount);
    for (std::size_t t = 0; t < rewards.size(); ++t) {
      batch.rewards.push_back(rewards[t]);
      batch.returns.push_back(ret[t]);
      batch.advantages.push_back(ret[t] - baseline.value(t));
      seen.emplace_back(t, ret[t]);
    }
    batch.episode_returns.push_back(ret.empty() ? 0.0 : ret.front());
  }
  for (const auto& [t, r] : seen) baseline.add(t, r);
  normalize_advantages(batch.advantages);
  return batch;
}

struct SurrogateKl {
  double surrogate = 0.0;
  double kl = 0.0;
};

/// Importance-weighted surrogate and mean KL(old || new) over the batch.
inline SurrogateKl surrogate_and_kl(const Policy& policy, const RolloutBatch& batch) {
  SurrogateKl out;
  const std::size_t n = batch.size();
  if (n == 0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd p = policy.probabilities(batch.observations[i]);
    const int a = batch.actions[i];
    out.surrogate += std::exp(std::log(p[a]) - batch.old_log_probs[i]) * batch.advantages[i];
    const Eigen::VectorXd& q = batch.old_probs[i];
    for (Eigen::Index k = 0; k < q.size(); ++k) {
      if (q[k] > 0.0) out.kl += q[k] * (std::log(q[k]) - std::log(p[k]));
    }
  }
  out.surrogate /= double(n);
  out.kl /= double(n);
  return out;
}

/// Gradient of the surrogate with respect to the policy parameters.
inline Eigen::VectorXd policy_gradient(const Policy& policy, const RolloutBatch& batch) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(policy.parameter_count());
  const std::size_t n = batch.size();
  if (n == 0) return grad;
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.advantages[i] == 0.0) continue;
    const auto f = policy.forward(batch.observations[i]);
    const int a = batch.actions[i];
    const double ratio = std::exp(std::log(f.probs[a]) - batch.old_log_probs[i]);
    // d log p_a / d logits = e_a - p
    Eigen::VectorXd g = -f.probs;
    g[a] += 1.0;
    policy.backprop(f, (ratio * batch.advantages[i] / double(n)) * g, grad);
  }
  return grad;
}

/// Damped Fisher information products at the policy that collected the batch.
class FisherOperator {
 public:
  FisherOperator(const Policy& policy, const RolloutBatch& batch, double damping)
      : policy_(policy), damping_(damping) {
    forwards_.reserve(batch.size());
    for (const auto& obs : batch.observations) forwards_.push_back(policy.forward(obs));
  }

  Eigen::VectorXd operator()(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(v.size());
    if (forwards_.empty()) return out;
    for (const auto& f : forwards_) {
      const Eigen::VectorXd u = policy_.logits_jvp(f, v);
      const Eigen::VectorXd w = f.probs.cwiseProduct(u) - f.probs * f.probs.dot(u);
      policy_.backprop(f, w, out);
    }
    out /= double(forwards_.size());
    return out + damping_ * v;
  }

 private:
  const Policy& policy_;
  double damping_;
  std::vector<Policy::Forward> forwards_;
};

template <class LinearOp>
Eigen::VectorXd conjugate_gradient(const LinearOp& apply, const Eigen::VectorXd& b, int iterations,
                                   double residual_tol = 1e-10) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd r = b, p = b;
  double rr = r.squaredNorm();
  for (int k = 0; k < iterations && rr > residual_tol; ++k) {
    const Eigen::VectorXd ap = apply(p);
    const double alpha = rr / p.dot(ap);
    x += alpha * p;
    r -= alpha * ap;
    const double rr_next = r.squaredNorm();
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  return x;
}

struct UpdateStats {
  bool accepted = false;
  double surrogate_before = 0.0;
  double surrogate_after = 0.0;
  double kl = 0.0;
  int backtracks = 0;
};

/// One natural-gradient step with KL-constrained backtracking line search.
/// The policy is left unchanged when no candidate step is acceptable.
inline UpdateStats trpo_update(Policy& policy, const RolloutBatch& batch, const TrainConfig& config) {
  UpdateStats stats;
  const SurrogateKl before = surrogate_and_kl(policy, batch);
  stats.surrogate_before = stats.surrogate_after = before.surrogate;
  if (!std::isfinite(before.surrogate)) throw TrainingError("non-finite surrogate before update");

  const Eigen::VectorXd grad = policy_gradient(policy, batch);
  if (!grad.allFinite()) throw TrainingError("non-finite policy gradient");
  if (grad.squaredNorm() == 0.0) return stats;

  const FisherOperator fisher(policy, batch, config.cg_damping);
  const Eigen::VectorXd dir = conjugate_gradient(fisher, grad, config.cg_iterations);
  const double shs = dir.dot(fisher(dir));
  if (!std::isfinite(shs)) throw TrainingError("non-finite curvature along the search direction");
  if (shs <= 0.0) return stats;
  const Eigen::VectorXd full_step = std::sqrt(2.0 * config.max_kl / shs) * dir;

  const Eigen::VectorXd old_params = policy.parameters();
  double frac = 1.0;
  for (int k = 0; k < config.backtrack_steps; ++k, frac *= config.backtrack_ratio) {
    policy.set_parameters(old_params + frac * full_step);
    const SurrogateKl after = surrogate_and_kl(policy, batch);
    if (std::isfinite(after.surrogate) && std::isfinite(after.kl) && after.kl <= config.max_kl &&
        after.surrogate > before.surrogate) {
      stats.accepted = true;
      stats.surrogate_after = after.surrogate;
      stats.kl = after.kl;
      stats.backtracks = k;
      return stats;
    }
  }
  policy.set_parameters(old_params);
  return stats;
}

struct TrainResult {
  Policy policy;
  std::vector<double> mean_returns;  // one entry per iteration
  std::vector<UpdateStats> updates;
};

/// Runs `iterations` rounds of batch collection and TRPO updates, starting
/// from a policy seeded by config.seed. Deterministic for a given seed.
template <class EnvFactory>
TrainResult train(EnvFactory&& make_env, const TrainConfig& config,
                  std::vector<int> hidden = {32, 32}) {
  config.validate();
  TrainResult result;
  {
    auto probe = make_env();
    result.policy = Policy::create(probe.observation_size(), probe.action_count(),
                                   derive_seed({config.seed, 0x706f6c696379ull}), std::move(hidden));
  }
  TimestepBaseline baseline;
  for (int it = 0; it < config.iterations; ++it) {
    const RolloutBatch batch = collect_batch(make_env, result.policy, config, std::uint64_t(it), baseline);
    double mean = 0.0;
    for (double r : batch.episode_returns) mean += r;
    result.mean_returns.push_back(mean / double(batch.episode_returns.size()));
    result.updates.push_back(trpo_update(result.policy, batch, config));
  }
  return result;
}

}  // namespace pinchcut
