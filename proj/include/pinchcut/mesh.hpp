#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace pinchcut {

class MeshError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using PointIndex = std::size_t;

/// Integration and spring constants of the sheet.
///
/// The per-step update of a free point is
///   p' = p + alpha * delta * (p - p_prev) + (F + g) * step_scale
/// followed by `constraint_iterations` Gauss-Seidel passes over the intact
/// links. Each pass pulls the in-plane separation of a link toward its rest
/// length and its height difference toward zero, weighted by `tau`.
struct PhysicsConfig {
  double alpha = 0.99;
  double delta = 0.008;
  double tau = 1.0;
  double gravity_z = -2500.0;
  double rest_dx = 1.0;
  double rest_dy = 1.0;
  int constraint_iterations = 3;
  // |gravity_z| * step_scale == 0.05 * rest_dx at the defaults.
  double step_scale = 0.05 / 2500.0;
  // In-plane pull released on a point for every incident link the scissor
  // severs (same units as gravity_z). Models a sheet clamped under tension:
  // the intact sheet is in equilibrium, an opened cut gapes.
  double cut_release = 150000.0;
  // Fraction of the in-plane displacement from rest recovered per step by
  // intact points (the backing the sheet lies on).
  double substrate = 0.15;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw MeshError("alpha must lie in (0, 1]");
    if (!(delta >= 0.0 && delta < 1.0)) throw MeshError("delta must lie in [0, 1)");
    if (!(tau > 0.0)) throw MeshError("tau must be positive");
    if (constraint_iterations < 1) throw MeshError("constraint_iterations must be >= 1");
    if (!(rest_dx > 0.0 && rest_dy > 0.0)) throw MeshError("rest spacing must be positive");
    if (!(step_scale >= 0.0)) throw MeshError("step_scale must be non-negative");
    if (!(cut_release >= 0.0)) throw MeshError("cut_release must be non-negative");
    if (!(substrate >= 0.0 && substrate < 1.0)) throw MeshError("substrate must lie in [0, 1)");
  }
};

struct PointState {
  Vec3 pos = Vec3::Zero();
  Vec3 prev_pos = Vec3::Zero();
  bool pinned = false;
  bool severed = false;
};

enum class Direction { PosX = 0, NegX = 1, PosY = 2, NegY = 3 };

inline constexpr std::array<Direction, 4> kAllDirections = {
    Direction::PosX, Direction::NegX, Direction::PosY, Direction::NegY};

inline Vec2 direction_vector(Direction d) {
  switch (d) {
    case Direction::PosX: return {1.0, 0.0};
    case Direction::NegX: return {-1.0, 0.0};
    case Direction::PosY: return {0.0, 1.0};
    case Direction::NegY: return {0.0, -1.0};
  }
  return Vec2::Zero();
}

inline const char* direction_name(Direction d) {
  switch (d) {
    case Direction::PosX: return "+x";
    case Direction::NegX: return "-x";
    case Direction::PosY: return "+y";
    case Direction::NegY: return "-y";
  }
  return "?";
}

/// Rectangular sheet of point masses on a 4-connected grid.
///
/// Points are stored row-major: index = row * width + col, rest position
/// (col * rest_dx, row * rest_dy, 0). A Mesh owns all of its state and can be
/// moved between threads freely.
class Mesh {
 public:
  /// Builds a sheet at rest. With `pinned_boundary` the four corners are pinned.
  static Mesh create(int width, int height, const PhysicsConfig& config,
                     bool pinned_boundary = true) {
    if (width < 2 || height < 2) {
      throw MeshError("mesh needs at least 2x2 points, got " + std::to_string(width) +
                      "x" + std::to_string(height));
    }
    config.validate();
    Mesh mesh;
    mesh.width_ = width;
    mesh.height_ = height;
    mesh.config_ = config;
    mesh.points_.resize(static_cast<std::size_t>(width) * height);
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        auto& p = mesh.points_[mesh.index(c, r)];
        p.pos = Vec3(c * config.rest_dx, r * config.rest_dy, 0.0);
        p.prev_pos = p.pos;
      }
    }
    if (pinned_boundary) {
      for (PointIndex corner : mesh.corner_indices()) mesh.points_[corner].pinned = true;
    }
    return mesh;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return points_.size(); }
  const PhysicsConfig& config() const { return config_; }

  PointIndex index(int col, int row) const {
    return static_cast<PointIndex>(row) * width_ + col;
  }
  int col_of(PointIndex i) const { return static_cast<int>(i % width_); }
  int row_of(PointIndex i) const { return static_cast<int>(i / width_); }

  std::array<PointIndex, 4> corner_indices() const {
    return {index(0, 0), index(width_ - 1, 0), index(0, height_ - 1),
            index(width_ - 1, height_ - 1)};
  }

  Vec3 rest_position(PointIndex i) const {
    return {col_of(i) * config_.rest_dx, row_of(i) * config_.rest_dy, 0.0};
  }
  Vec2 rest_position_2d(PointIndex i) const { return rest_position(i).head<2>(); }

  /// Extent of the sheet at rest, in mm.
  double extent_x() const { return (width_ - 1) * config_.rest_dx; }
  double extent_y() const { return (height_ - 1) * config_.rest_dy; }

  const PointState& point(PointIndex i) const { return points_.at(i); }
  const std::vector<PointState>& points() const { return points_; }

  /// 4-neighborhood of a point, in (left, right, down, up) order where present.
  std::vector<PointIndex> neighbors(PointIndex i) const {
    std::vector<PointIndex> out;
    out.reserve(4);
    const int c = col_of(i), r = row_of(i);
    if (c > 0) out.push_back(i - 1);
    if (c + 1 < width_) out.push_back(i + 1);
    if (r > 0) out.push_back(i - width_);
    if (r + 1 < height_) out.push_back(i + width_);
    return out;
  }

  bool adjacent(PointIndex a, PointIndex b) const {
    const int dc = std::abs(col_of(a) - col_of(b));
    const int dr = std::abs(row_of(a) - row_of(b));
    return dc + dr == 1;
  }

  const std::set<PointIndex>& cut_set() const { return cut_set_; }
  std::optional<PointIndex> tension_index() const { return tension_index_; }
  Vec2 tension_offset() const { return tension_offset_; }

  void pin(PointIndex i) {
    check_index(i);
    if (points_[i].severed) throw MeshError("cannot pin severed point " + std::to_string(i));
    points_[i].pinned = true;
  }

  /// Moves the gripper to a new pinch point (or releases it). Point positions
  /// are left untouched; the new pinch holds the point where it currently is.
  void set_tension(std::optional<PointIndex> i) {
    if (i) {
      check_index(*i);
      if (points_[*i].severed) {
        throw MeshError("cannot tension severed point " + std::to_string(*i));
      }
      tension_anchor_ = points_[*i].pos;
    }
    tension_index_ = i;
    tension_offset_ = Vec2::Zero();
  }

  /// Moves the active pinch point by 1 mm along `d`.
  void apply_tension(Direction d) {
    if (!tension_index_) throw MeshError("apply_tension without an active pinch point");
    tension_offset_ += direction_vector(d);
  }

  /// Position the gripper enforces on the pinch point: where the point was when
  /// gripped (its rest position on an undeformed sheet) plus the offset.
  Vec3 tension_target() const {
    if (!tension_index_) throw MeshError("no active pinch point");
    return tension_anchor_ + Vec3(tension_offset_.x(), tension_offset_.y(), 0.0);
  }

  void sever(PointIndex i) {
    check_index(i);
    if (tension_index_ && *tension_index_ == i) {
      throw MeshError("cannot sever the active pinch point " + std::to_string(i));
    }
    if (points_[i].pinned) throw MeshError("cannot sever pinned point " + std::to_string(i));
    if (points_[i].severed) return;
    points_[i].severed = true;
    cut_set_.insert(i);
  }

  bool is_fixed(PointIndex i) const {
    return points_[i].pinned || (tension_index_ && *tension_index_ == i);
  }

  /// Test hook: translates a point and its previous position together so the
  /// displacement carries no velocity.
  void displace(PointIndex i, const Vec3& by) {
    check_index(i);
    points_[i].pos += by;
    points_[i].prev_pos += by;
  }

  /// Advances the sheet by one time step.
  void step() {
    const PhysicsConfig& cfg = config_;
    const double keep = cfg.alpha * cfg.delta;
    const Vec3 gravity(0.0, 0.0, cfg.gravity_z);

    for (PointIndex i = 0; i < points_.size(); ++i) {
      PointState& p = points_[i];
      if (is_fixed(i)) continue;
      Vec3 force = gravity;
      if (!p.severed) force.head<2>() += released_pull(i);
      Vec3 next = p.pos + keep * (p.pos - p.prev_pos) + force * cfg.step_scale;
      if (!p.severed) next.head<2>() += cfg.substrate * (rest_position_2d(i) - p.pos.head<2>());
      p.prev_pos = p.pos;
      p.pos = next;
    }

    for (int pass = 0; pass < cfg.constraint_iterations; ++pass) {
      project_links();
      enforce_fixed();
    }
    // Fixed points carry no velocity.
    for (PointIndex i = 0; i < points_.size(); ++i) {
      if (is_fixed(i)) points_[i].prev_pos = points_[i].pos;
    }
  }

 private:
  Mesh() = default;

  void check_index(PointIndex i) const {
    if (i >= points_.size()) {
      throw MeshError("point index " + std::to_string(i) + " out of range [0, " +
                      std::to_string(points_.size()) + ")");
    }
  }

  Vec2 released_pull(PointIndex i) const {
    Vec2 pull = Vec2::Zero();
    if (cut_set_.empty()) return pull;
    const Vec2 here = rest_position_2d(i);
    for (PointIndex j : neighbors(i)) {
      if (!points_[j].severed) continue;
      pull += (here - rest_position_2d(j)).normalized();
    }
    return pull * config_.cut_release;
  }

  void enforce_fixed() {
    // Pinned points are never written by integration or projection.
    if (tension_index_) points_[*tension_index_].pos = tension_target();
  }

  void project_link(PointIndex i, PointIndex j, double rest) {
    PointState& a = points_[i];
    PointState& b = points_[j];
    if (a.severed || b.severed) return;
    const bool fixed_a = is_fixed(i), fixed_b = is_fixed(j);
    if (fixed_a && fixed_b) return;
    const double wa = fixed_a ? 0.0 : (fixed_b ? 1.0 : 0.5);
    const double wb = fixed_b ? 0.0 : (fixed_a ? 1.0 : 0.5);
    const double tau = config_.tau;

    const Vec2 d = b.pos.head<2>() - a.pos.head<2>();
    const double len = d.norm();
    if (len > 0.0) {
      const Vec2 corr = tau * (len - rest) / len * d;
      a.pos.head<2>() += wa * corr;
      b.pos.head<2>() -= wb * corr;
    }
    const double dz = tau * (b.pos.z() - a.pos.z());
    a.pos.z() += wa * dz;
    b.pos.z() -= wb * dz;
  }

  void project_links() {
    for (int r = 0; r < height_; ++r) {
      for (int c = 0; c + 1 < width_; ++c) project_link(index(c, r), index(c + 1, r), config_.rest_dx);
    }
    for (int r = 0; r + 1 < height_; ++r) {
      for (int c = 0; c < width_; ++c) project_link(index(c, r), index(c, r + 1), config_.rest_dy);
    }
  }

  int width_ = 0;
  int height_ = 0;
  PhysicsConfig config_;
  std::vector<PointState> points_;
  std::set<PointIndex> cut_set_;
  std::optional<PointIndex> tension_index_;
  Vec3 tension_anchor_ = Vec3::Zero();
  Vec2 tension_offset_ = Vec2::Zero();
};

}  // namespace pinchcut
