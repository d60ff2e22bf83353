#pragma once

#include "pinchcut/contour.hpp"
#include "pinchcut/env.hpp"
#include "pinchcut/mesh.hpp"
#include "pinchcut/policy.hpp"
#include "pinchcut/rng.hpp"
#include "pinchcut/trpo.hpp"
#include "pinchcut/work_pool.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace pinchcut {

class SearchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Algorithm { NTB, SFP, STP, SDRLT, MDRLT1, MDRLT2 };

inline constexpr Algorithm kAllAlgorithms[] = {Algorithm::NTB,   Algorithm::SFP,    Algorithm::STP,
                                               Algorithm::SDRLT, Algorithm::MDRLT1, Algorithm::MDRLT2};

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::NTB: return "NTB";
    case Algorithm::SFP: return "SFP";
    case Algorithm::STP: return "STP";
    case Algorithm::SDRLT: return "SDRLT";
    case Algorithm::MDRLT1: return "MDRLT1";
    case Algorithm::MDRLT2: return "MDRLT2";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string name) {
  std::erase(name, '-');
  for (Algorithm a : kAllAlgorithms) {
    if (name == algorithm_name(a)) return a;
  }
  throw SearchError("unknown algorithm '" + name + "' (expected NTB, SFP, STP, SDRLT, MDRLT1 or MDRLT2)");
}

struct SearchConfig {
  double d = 100.0;
  int m_two = 20;
  int m_many = 10;
  int eval_trials = 10;
  std::uint64_t seed = 0;

  /// Candidate budget for a contour cut in `segments` pieces.
  int candidates_for(std::size_t segments) const { return segments > 2 ? m_many : m_two; }
};

/// Caps the candidate radius at 40% of the sheet width so small sheets keep
/// a non-trivial candidate set.
inline double effective_distance(double d, const Mesh& mesh) {
  return std::min(d, 0.4 * mesh.extent_x());
}

/// Mesh points off the segment's ideal cut whose rest position lies closer
/// than `d` to some point of the segment.
inline IndexSet candidate_points(const Mesh& mesh, const IndexSet& segment_cut, double d) {
  if (!(d > 0.0)) throw SearchError("candidate distance must be positive");
  IndexSet out;
  const double d2 = d * d;
  for (PointIndex p = 0; p < mesh.size(); ++p) {
    if (segment_cut.count(p)) continue;
    const Vec2 rp = mesh.rest_position_2d(p);
    for (PointIndex c : segment_cut) {
      if ((rp - mesh.rest_position_2d(c)).squaredNorm() < d2) {
        out.insert(p);
        break;
      }
    }
  }
  return out;
}

/// Draws min(M, |A|) candidates without replacement, then drops every draw
/// 4-adjacent to an already kept one (kept in ascending index order).
inline IndexSet sample_and_prune(const Mesh& mesh, const IndexSet& pool, int m, Rng& rng) {
  if (m < 1) throw SearchError("M must be >= 1");
  if (pool.empty()) throw SearchError("no viable pinch point: candidate set is empty");
  std::vector<PointIndex> a(pool.begin(), pool.end());
  const std::size_t take = std::min<std::size_t>(std::size_t(m), a.size());
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + uniform_index(rng, a.size() - i);
    std::swap(a[i], a[j]);
  }
  std::vector<PointIndex> drawn(a.begin(), a.begin() + long(take));
  std::sort(drawn.begin(), drawn.end());
  IndexSet kept;
  for (PointIndex p : drawn) {
    const bool touches = std::any_of(kept.begin(), kept.end(),
                                     [&](PointIndex k) { return mesh.adjacent(p, k); });
    if (!touches) kept.insert(p);
  }
  return kept;
}

/// One fixed pin per joint: the non-cut point nearest the joint center.
inline std::vector<PointIndex> joint_pins(const Segmentation& seg, const Mesh& mesh,
                                          const IndexSet& contour_cut) {
  std::vector<PointIndex> pins;
  for (const JointArea& joint : seg.joints) {
    std::optional<PointIndex> best;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (PointIndex p = 0; p < mesh.size(); ++p) {
      if (contour_cut.count(p)) continue;
      const double d2 = (mesh.rest_position_2d(p) - joint.center).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = p;
      }
    }
    if (!best || std::sqrt(best_d2) > 3.0 * joint.radius) {
      throw SearchError("no uncut point within 3 joint radii of a joint at (" +
                        std::to_string(joint.center.x()) + ", " + std::to_string(joint.center.y()) + ")");
    }
    pins.push_back(*best);
  }
  return pins;
}

struct CandidateScore {
  PointIndex index = 0;
  std::optional<double> score;  // empty if training failed
};

struct LocalSearchResult {
  PointIndex best = 0;
  double score = 0.0;
  std::size_t winner = 0;  // position of `best` within the candidate list
  std::vector<CandidateScore> scores;
};

/// Picks the candidate with the lowest score (ties -> lowest index).
/// `score_of(i)` trains and evaluates candidate i; it may throw to signal a
/// failed candidate, which is then skipped.
template <class ScoreFn>
LocalSearchResult local_search(const std::vector<PointIndex>& candidates, ScoreFn&& score_of, int threads) {
  if (candidates.empty()) throw SearchError("local search needs at least one candidate");
  auto scores = parallel_map(candidates.size(), threads, [&](std::size_t i) -> std::optional<double> {
    try {
      return score_of(i);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  });
  LocalSearchResult out;
  bool found = false;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    out.scores.push_back({candidates[i], scores[i]});
    if (!scores[i]) continue;
    const bool better = !found || *scores[i] < out.score ||
                        (*scores[i] == out.score && candidates[i] < out.best);
    if (better) {
      found = true;
      out.best = candidates[i];
      out.score = *scores[i];
      out.winner = i;
    }
  }
  if (!found) throw SearchError("every candidate failed during local search");
  return out;
}

struct OrderSearchResult {
  std::vector<int> order;
  double score = 0.0;
  std::size_t evaluations = 0;
};

/// Exhaustive search over cutting orders; ties -> lexicographically smallest.
template <class EvalFn>
OrderSearchResult order_search(std::size_t segment_count, EvalFn&& evaluate) {
  if (segment_count == 0) throw SearchError("order search needs at least one segment");
  if (segment_count > 6) throw SearchError("order search is limited to 6 segments");
  std::vector<int> perm(segment_count);
  std::iota(perm.begin(), perm.end(), 0);
  OrderSearchResult out;
  bool first = true;
  do {
    const double s = evaluate(perm);
    ++out.evaluations;
    if (first || s < out.score) {
      out.order = perm;
      out.score = s;
      first = false;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

/// A contour prepared for cutting on a particular sheet.
struct CuttingProblem {
  Contour contour;
  int width = 25;
  int height = 25;
  PhysicsConfig physics;
  Segmentation segmentation;
  std::vector<ScissorPath> segment_paths;
  IndexSet contour_cut;

  static CuttingProblem make(const Contour& contour, int width, int height, const PhysicsConfig& physics) {
    CuttingProblem p;
    p.contour = contour;
    p.width = width;
    p.height = height;
    p.physics = physics;
    const Mesh mesh = p.rest_mesh();
    p.segmentation = segment_contour(contour, contour.max_segments, physics);
    for (const Segment& s : p.segmentation.segments) {
      p.segment_paths.push_back(rasterize(s, mesh, default_cut_radius(physics)));
      p.contour_cut.insert(p.segment_paths.back().ideal_cut.begin(), p.segment_paths.back().ideal_cut.end());
    }
    return p;
  }

  Mesh rest_mesh() const { return Mesh::create(width, height, physics, true); }
  std::size_t segment_count() const { return segmentation.segments.size(); }

  std::vector<int> natural_order() const {
    std::vector<int> o(segment_count());
    std::iota(o.begin(), o.end(), 0);
    return o;
  }

  /// Full-contour scenario: segments cut in `order`, stage k using pinch[order[k]].
  Scenario scenario(const std::vector<int>& order, const std::vector<std::optional<PointIndex>>& pinch,
                    const std::vector<PointIndex>& pins) const {
    Scenario s;
    s.width = width;
    s.height = height;
    s.physics = physics;
    s.cut_radius = default_cut_radius(physics);
    s.ideal_cut = contour_cut;
    s.fixed_pins = pins;
    s.stages.clear();
    for (int seg : order) {
      s.stages.push_back(CutStage{s.blade.size(), pinch.at(std::size_t(seg))});
      const auto& b = segment_paths.at(std::size_t(seg)).blade;
      s.blade.insert(s.blade.end(), b.begin(), b.end());
    }
    return s;
  }

  /// Scenario for one segment cut on its own.
  Scenario segment_scenario(std::size_t seg, const std::vector<PointIndex>& pins,
                            std::optional<PointIndex> pinch) const {
    return Scenario::single(width, height, physics, segment_paths.at(seg), pins, pinch);
  }

  /// Points that may hold a pinch: off the contour, not already pinned.
  IndexSet usable(IndexSet points, const std::vector<PointIndex>& pins) const {
    const Mesh mesh = rest_mesh();
    std::erase_if(points, [&](PointIndex p) {
      return contour_cut.count(p) || mesh.point(p).pinned ||
             std::find(pins.begin(), pins.end(), p) != pins.end();
    });
    return points;
  }
};

/// Gripper behavior during a stage.
struct Controller {
  enum class Kind { Idle, Learned, ScriptedPull };
  Kind kind = Kind::Idle;
  int policy = -1;              // Learned: index into PinchPlan::policies
  Direction pull = Direction::PosX;  // ScriptedPull
  double pull_limit = 2.0;      // ScriptedPull: mm travelled before holding
};

/// Scripted tensioning: pull along `pull` until the offset reaches the limit,
/// then alternate back and forth around it (there is no hold action).
inline int scripted_pull_action(const Controller& c, const Observation& obs) {
  const Vec2 offset(obs[obs.size() - 2], obs[obs.size() - 1]);
  const double travelled = offset.dot(direction_vector(c.pull));
  const int forward = static_cast<int>(c.pull);
  const int backward = forward ^ 1;
  return travelled < c.pull_limit ? forward : backward;
}

struct PinchPlan {
  std::string contour_id;
  Algorithm algorithm = Algorithm::MDRLT2;
  std::vector<int> order;                           // cutting order of segment ids
  std::vector<std::optional<PointIndex>> pinch;     // per segment id
  std::vector<Controller> control;                  // per segment id
  std::vector<PointIndex> fixed_pins;               // joint pins (and SFP's fixed pinch)
  std::vector<Policy> policies;
  double validation_score = std::numeric_limits<double>::quiet_NaN();

  std::size_t distinct_pinch_count() const {
    IndexSet s;
    for (const auto& p : pinch) {
      if (p) s.insert(*p);
    }
    return s.size();
  }
};

/// Chooses actions for a plan's full-contour episode.
inline int plan_action(const PinchPlan& plan, const Observation& obs, std::size_t stage, Rng& rng) {
  const Controller& c = plan.control.at(std::size_t(plan.order.at(stage)));
  switch (c.kind) {
    case Controller::Kind::Learned: return plan.policies.at(std::size_t(c.policy)).sample(obs, rng);
    case Controller::Kind::ScriptedPull: return scripted_pull_action(c, obs);
    case Controller::Kind::Idle: break;
  }
  return 0;
}

/// Full-contour scenario of a plan. Consecutive segments that share a pinch
/// point and controller form one stage: the gripper never lets go in between.
inline Scenario plan_scenario(const CuttingProblem& problem, const PinchPlan& plan) {
  Scenario s = problem.scenario(plan.order, plan.pinch, plan.fixed_pins);
  std::vector<CutStage> merged;
  for (std::size_t k = 0; k < s.stages.size(); ++k) {
    const auto seg = std::size_t(plan.order[k]);
    if (k > 0) {
      const auto prev = std::size_t(plan.order[k - 1]);
      const Controller& a = plan.control.at(prev);
      const Controller& b = plan.control.at(seg);
      if (plan.pinch.at(prev) == plan.pinch.at(seg) && a.kind == b.kind && a.policy == b.policy) continue;
    }
    merged.push_back(s.stages[k]);
  }
  s.stages = std::move(merged);
  return s;
}

/// Symmetric difference of each evaluation trial; trial t samples from
/// derive_seed({seed, t}).
inline std::vector<std::size_t> evaluate_plan(const CuttingProblem& problem, const PinchPlan& plan,
                                              int trials, std::uint64_t seed) {
  CuttingEnv env(plan_scenario(problem, plan));
  std::vector<std::size_t> out;
  for (int t = 0; t < trials; ++t) {
    Rng rng(derive_seed({seed, std::uint64_t(t)}));
    auto [traj, result] = rollout_with(
        env, [&](const Observation& o, std::size_t stage, Rng& g) { return plan_action(plan, o, stage, g); }, rng);
    out.push_back(result.sym_diff);
  }
  return out;
}

inline double mean_of(const std::vector<std::size_t>& v) {
  double s = 0.0;
  for (auto x : v) s += double(x);
  return v.empty() ? 0.0 : s / double(v.size());
}

/// Trained candidates, shared between the algorithms run on one contour.
class PolicyCache {
 public:
  struct Entry {
    Policy policy;
    double score = 0.0;
  };
  // (contour id, segment id, candidate, training seed)
  using Key = std::tuple<std::string, int, PointIndex, std::uint64_t>;

  std::optional<Entry> find(const Key& k) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(k);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }
  void put(const Key& k, Entry e) {
    std::lock_guard lock(mu_);
    entries_.emplace(k, std::move(e));
  }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

 private:
  mutable std::mutex mu_;
  std::map<Key, Entry> entries_;
};

struct PlanOptions {
  TrainConfig train;
  SearchConfig search;
  int threads = 1;
  PolicyCache* cache = nullptr;
};

namespace detail {

/// Trains a policy for one pinch candidate and scores it by its mean symmetric
/// difference over search.eval_trials episodes.
inline PolicyCache::Entry train_candidate(const Scenario& scenario, const PlanOptions& opt,
                                          std::uint64_t train_seed) {
  TrainConfig tc = opt.train;
  tc.seed = train_seed;
  auto make_env = [&] { return CuttingEnv(scenario); };
  TrainResult trained = train(make_env, tc);
  CuttingEnv env(scenario);
  double total = 0.0;
  for (int t = 0; t < opt.search.eval_trials; ++t) {
    Rng rng(derive_seed({train_seed, 0x6576616cull, std::uint64_t(t)}));
    auto [traj, result] = rollout_with(
        env, [&](const Observation& o, std::size_t, Rng& g) { return trained.policy.sample(o, g); }, rng);
    total += double(result.sym_diff);
  }
  return {std::move(trained.policy), total / double(std::max(1, opt.search.eval_trials))};
}

}  // namespace detail

/// Runs the multi-point pipeline (MDRLT1/MDRLT2) or its single-point
/// counterpart (SDRLT):
///  1. setup: segmentation, joint pins (MDRLT2 only), cutting order;
///  2. local search: candidate generation, training and scoring per segment;
///  3. evaluation: per-segment winners validated together on the full contour.
inline PinchPlan build_plan(const CuttingProblem& problem, Algorithm algorithm, const PlanOptions& opt) {
  if (algorithm != Algorithm::SDRLT && algorithm != Algorithm::MDRLT1 && algorithm != Algorithm::MDRLT2) {
    throw SearchError(std::string("build_plan does not handle ") + algorithm_name(algorithm));
  }
  const Mesh mesh = problem.rest_mesh();
  const std::size_t nseg = problem.segment_count();
  const std::uint64_t contour_key = hash_string(problem.contour.id);
  const double d = effective_distance(opt.search.d, mesh);
  const int m = opt.search.candidates_for(nseg);

  PinchPlan plan;
  plan.contour_id = problem.contour.id;
  plan.algorithm = algorithm;
  plan.pinch.assign(nseg, std::nullopt);
  plan.control.assign(nseg, Controller{});

  if (algorithm == Algorithm::MDRLT2) {
    plan.fixed_pins = joint_pins(problem.segmentation, mesh, problem.contour_cut);
  }

  if (algorithm == Algorithm::SDRLT) {
    plan.order = problem.natural_order();
  } else {
    const auto found = order_search(nseg, [&](const std::vector<int>& order) {
      const std::vector<std::optional<PointIndex>> none(nseg);
      CuttingEnv env(problem.scenario(order, none, plan.fixed_pins));
      Rng rng(0);
      return double(rollout_with(env, [](const Observation&, std::size_t, Rng&) { return 0; }, rng).second.sym_diff);
    });
    plan.order = found.order;
  }

  // SDRLT treats the whole contour as one unit with one pinch point.
  const std::size_t units = algorithm == Algorithm::SDRLT ? 1 : nseg;
  for (std::size_t u = 0; u < units; ++u) {
    const IndexSet& unit_cut = algorithm == Algorithm::SDRLT ? problem.contour_cut : problem.segment_paths[u].ideal_cut;
    const IndexSet pool = problem.usable(candidate_points(mesh, unit_cut, d), plan.fixed_pins);
    // Seeds follow the sub-problem, not the algorithm: a single-segment
    // contour gives SDRLT and MDRLT the same candidates and policies.
    std::uint64_t unit_key = contour_key;
    for (PointIndex q : unit_cut) unit_key = splitmix64(unit_key ^ q);
    for (PointIndex q : plan.fixed_pins) unit_key = splitmix64(unit_key ^ ~q);
    Rng rng(derive_seed({opt.search.seed, unit_key, 0x63616e64ull}));
    const IndexSet picked = sample_and_prune(mesh, pool, m, rng);
    const std::vector<PointIndex> candidates(picked.begin(), picked.end());

    auto scenario_for = [&](PointIndex c) {
      if (algorithm == Algorithm::SDRLT) {
        PinchPlan single = plan;
        single.pinch.assign(nseg, c);
        single.control.assign(nseg, Controller{Controller::Kind::Learned, 0});
        return plan_scenario(problem, single);
      }
      return problem.segment_scenario(u, plan.fixed_pins, c);
    };

    std::vector<std::optional<PolicyCache::Entry>> trained(candidates.size());
    const auto result = local_search(
        candidates,
        [&](std::size_t i) {
          const PointIndex c = candidates[i];
          const std::uint64_t seed = derive_seed({opt.train.seed, unit_key, std::uint64_t(c)});
          const PolicyCache::Key key{problem.contour.id, int(u), c, seed};
          std::optional<PolicyCache::Entry> entry = opt.cache ? opt.cache->find(key) : std::nullopt;
          if (!entry) {
            entry = detail::train_candidate(scenario_for(c), opt, seed);
            if (opt.cache) opt.cache->put(key, *entry);
          }
          trained[i] = entry;
          return entry->score;
        },
        opt.threads);

    plan.policies.push_back(std::move(trained[result.winner]->policy));
    const int policy_index = int(plan.policies.size() - 1);
    if (algorithm == Algorithm::SDRLT) {
      for (std::size_t s = 0; s < nseg; ++s) {
        plan.pinch[s] = result.best;
        plan.control[s] = Controller{Controller::Kind::Learned, policy_index};
      }
    } else {
      plan.pinch[u] = result.best;
      plan.control[u] = Controller{Controller::Kind::Learned, policy_index};
    }
  }

  plan.validation_score = mean_of(evaluate_plan(problem, plan, opt.search.eval_trials,
                                                derive_seed({opt.search.seed, contour_key, 0x76616cull})));
  return plan;
}

}  // namespace pinchcut
