#pragma once

#include "pinchcut/contour.hpp"
#include "pinchcut/mesh.hpp"
#include "pinchcut/rng.hpp"

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pinchcut {

class EnvError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Observation = Eigen::VectorXd;

/// The four gripper moves; action index i maps to kAllDirections[i].
inline constexpr int kActionCount = 4;

inline Direction action_direction(int action) {
  if (action < 0 || action >= kActionCount) {
    throw EnvError("action " + std::to_string(action) + " outside [0, 4)");
  }
  return kAllDirections[static_cast<std::size_t>(action)];
}

/// A contiguous run of blade positions cut with one pinch point (or none).
struct CutStage {
  std::size_t first_step = 0;
  std::optional<PointIndex> pinch;
};

/// Everything needed to rebuild an episode from scratch.
struct Scenario {
  int width = 25;
  int height = 25;
  PhysicsConfig physics;
  bool pinned_boundary = true;
  double cut_radius = 0.6;
  int tracked_grid = 5;

  std::vector<Vec2> blade;
  IndexSet ideal_cut;
  std::vector<PointIndex> fixed_pins;
  std::vector<CutStage> stages{CutStage{}};
  std::uint64_t seed = 0;

  /// One blade path cut with a single (optional) pinch point.
  static Scenario single(int width, int height, const PhysicsConfig& physics,
                         const ScissorPath& path, std::vector<PointIndex> pins,
                         std::optional<PointIndex> pinch) {
    Scenario s;
    s.width = width;
    s.height = height;
    s.physics = physics;
    s.cut_radius = default_cut_radius(physics);
    s.blade = path.blade;
    s.ideal_cut = path.ideal_cut;
    s.fixed_pins = std::move(pins);
    s.stages = {CutStage{0, pinch}};
    return s;
  }
};

struct EpisodeResult {
  IndexSet actual_cut;
  std::size_t sym_diff = 0;
  std::size_t steps = 0;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
};

/// The tensioning MDP. The blade follows its scripted path one position per
/// step; the agent picks the gripper move. Reward is zero until the last step,
/// which pays minus the symmetric difference between ideal and actual cut.
class CuttingEnv {
 public:
  explicit CuttingEnv(Scenario scenario) : scenario_(std::move(scenario)) {
    if (scenario_.blade.empty()) throw EnvError("scenario has an empty blade path");
    if (scenario_.stages.empty() || scenario_.stages.front().first_step != 0) {
      throw EnvError("scenario stages must start at blade step 0");
    }
    for (std::size_t k = 1; k < scenario_.stages.size(); ++k) {
      if (scenario_.stages[k].first_step <= scenario_.stages[k - 1].first_step ||
          scenario_.stages[k].first_step >= scenario_.blade.size()) {
        throw EnvError("scenario stages must be strictly increasing within the path");
      }
    }
    if (scenario_.tracked_grid < 2) throw EnvError("tracked_grid must be >= 2");
    const int k = scenario_.tracked_grid;
    for (int r = 0; r < k; ++r) {
      for (int c = 0; c < k; ++c) {
        const int col = static_cast<int>(std::lround(c * (scenario_.width - 1) / double(k - 1)));
        const int row = static_cast<int>(std::lround(r * (scenario_.height - 1) / double(k - 1)));
        tracked_.push_back(static_cast<PointIndex>(row) * scenario_.width + col);
      }
    }
  }

  const Scenario& scenario() const { return scenario_; }
  int observation_size() const { return 2 * scenario_.tracked_grid * scenario_.tracked_grid + 3; }
  int action_count() const { return kActionCount; }
  std::size_t episode_length() const { return scenario_.blade.size(); }
  std::size_t active_stage() const { return stage_; }
  bool done() const { return done_; }
  const Mesh& mesh() const { return mesh_.value(); }

  Observation reset() {
    Mesh mesh = Mesh::create(scenario_.width, scenario_.height, scenario_.physics,
                             scenario_.pinned_boundary);
    for (PointIndex p : scenario_.fixed_pins) {
      if (p >= mesh.size()) throw EnvError("fixed pin " + std::to_string(p) + " out of range");
      if (scenario_.ideal_cut.count(p)) {
        throw EnvError("fixed pin " + std::to_string(p) + " lies on the ideal cut");
      }
      mesh.pin(p);
    }
    for (const auto& stage : scenario_.stages) {
      if (stage.pinch && *stage.pinch >= mesh.size()) {
        throw EnvError("pinch point " + std::to_string(*stage.pinch) + " out of range");
      }
      if (stage.pinch && scenario_.ideal_cut.count(*stage.pinch)) {
        throw EnvError("pinch point " + std::to_string(*stage.pinch) + " lies on the ideal cut");
      }
    }
    mesh_ = std::move(mesh);
    blade_step_ = 0;
    stage_ = 0;
    done_ = false;
    enter_stage(0);
    return observe();
  }

  StepResult step(int action) {
    if (!mesh_) throw EnvError("step before reset");
    if (done_) throw EnvError("step on a finished episode");
    Mesh& mesh = *mesh_;
    if (mesh.tension_index()) mesh.apply_tension(action_direction(action));
    else action_direction(action);

    const Vec2 blade = scenario_.blade[blade_step_];
    const double r2 = scenario_.cut_radius * scenario_.cut_radius;
    for (PointIndex i = 0; i < mesh.size(); ++i) {
      const PointState& p = mesh.point(i);
      if (p.severed || mesh.is_fixed(i)) continue;
      if ((p.pos.head<2>() - blade).squaredNorm() <= r2) mesh.sever(i);
    }
    mesh.step();
    ++blade_step_;

    StepResult out;
    if (blade_step_ == scenario_.blade.size()) {
      done_ = true;
      out.reward = -static_cast<double>(symmetric_difference(scenario_.ideal_cut, mesh.cut_set()));
    } else if (stage_ + 1 < scenario_.stages.size() &&
               scenario_.stages[stage_ + 1].first_step == blade_step_) {
      enter_stage(stage_ + 1);
    }
    out.done = done_;
    out.observation = observe();
    return out;
  }

  EpisodeResult result() const {
    EpisodeResult r;
    r.actual_cut = mesh().cut_set();
    r.sym_diff = symmetric_difference(scenario_.ideal_cut, r.actual_cut);
    r.steps = blade_step_;
    return r;
  }

 private:
  // A pinch point the blade already severed (the sheet deformed into the
  // blade during an earlier stage) cannot be gripped; the stage runs free.
  void enter_stage(std::size_t k) {
    stage_ = k;
    std::optional<PointIndex> pinch = scenario_.stages[k].pinch;
    if (pinch && mesh_->point(*pinch).severed) pinch.reset();
    mesh_->set_tension(pinch);
  }

  Observation observe() const {
    const Mesh& mesh = *mesh_;
    Observation obs(observation_size());
    Eigen::Index o = 0;
    for (PointIndex i : tracked_) {
      const Vec2 d = mesh.point(i).pos.head<2>() - mesh.rest_position_2d(i);
      obs[o++] = d.x();
      obs[o++] = d.y();
    }
    const std::size_t begin = scenario_.stages[stage_].first_step;
    const std::size_t end = stage_ + 1 < scenario_.stages.size()
                                ? scenario_.stages[stage_ + 1].first_step
                                : scenario_.blade.size();
    obs[o++] = done_ ? 1.0 : double(blade_step_ - begin) / double(end - begin);
    const Vec2 offset = mesh.tension_offset();
    obs[o++] = offset.x();
    obs[o++] = offset.y();
    return obs;
  }

  Scenario scenario_;
  std::vector<PointIndex> tracked_;
  std::optional<Mesh> mesh_;
  std::size_t blade_step_ = 0;
  std::size_t stage_ = 0;
  bool done_ = false;
};

struct Trajectory {
  std::vector<Observation> observations;
  std::vector<int> actions;
  std::vector<double> rewards;
};

/// Runs one episode, asking `choose(obs, stage, rng)` for every action.
template <class Env, class Chooser>
std::pair<Trajectory, EpisodeResult> rollout_with(Env& env, Chooser&& choose, Rng& rng) {
  Trajectory traj;
  Observation obs = env.reset();
  bool done = false;
  while (!done) {
    const int a = choose(obs, env.active_stage(), rng);
    StepResult s = env.step(a);
    traj.observations.push_back(std::move(obs));
    traj.actions.push_back(a);
    traj.rewards.push_back(s.reward);
    obs = std::move(s.observation);
    done = s.done;
  }
  return {std::move(traj), env.result()};
}

}  // namespace pinchcut
