#pragma once

#include "pinchcut/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace pinchcut {

class ContourError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using IndexSet = std::set<PointIndex>;

/// Ideal cutting trajectory in sheet rest coordinates (mm). A closed contour
/// lists each vertex once; the closing edge back to the first vertex is implicit.
struct Contour {
  std::string id;
  std::vector<Vec2> vertices;
  bool closed = false;
  int max_segments = 1;

  void validate() const {
    if (vertices.size() < 2) throw ContourError("contour '" + id + "' needs at least 2 vertices");
    for (std::size_t i = 1; i < vertices.size(); ++i) {
      if (vertices[i] == vertices[i - 1]) {
        throw ContourError("contour '" + id + "' repeats vertex " + std::to_string(i));
      }
    }
    if (max_segments < 1) throw ContourError("contour '" + id + "' max_segments must be >= 1");
  }

  /// Vertex sequence as it is traversed (closed contours repeat the first vertex).
  std::vector<Vec2> traversal() const {
    std::vector<Vec2> out = vertices;
    if (closed) out.push_back(vertices.front());
    return out;
  }

  Vec2 centroid() const {
    Vec2 sum = Vec2::Zero();
    for (const auto& v : vertices) sum += v;
    return sum / static_cast<double>(vertices.size());
  }
};

/// Region around the meeting point of two consecutive segments.
struct JointArea {
  Vec2 center = Vec2::Zero();
  double radius = 0.0;
};

struct Segment {
  int id = 0;
  std::vector<Vec2> path;
  std::optional<std::size_t> start_joint;
  std::optional<std::size_t> end_joint;
};

struct Segmentation {
  std::vector<Segment> segments;
  std::vector<JointArea> joints;
};

/// Scripted blade trajectory (one position per environment step) and the mesh
/// points it is meant to sever when the sheet is at rest.
struct ScissorPath {
  std::vector<Vec2> blade;
  IndexSet ideal_cut;
};

inline double default_cut_radius(const PhysicsConfig& cfg) { return 0.6 * cfg.rest_dx; }

namespace detail {

inline bool inside_rest_rect(const Mesh& mesh, const Vec2& p) {
  constexpr double eps = 1e-9;
  return p.x() >= -eps && p.y() >= -eps && p.x() <= mesh.extent_x() + eps &&
         p.y() <= mesh.extent_y() + eps;
}

}  // namespace detail

/// Samples blade positions along a polyline, at most 0.5 * rest_dx apart and
/// including every vertex, and collects the rest-state points within
/// `cut_radius` of any blade position.
inline ScissorPath rasterize(const std::vector<Vec2>& polyline, const Mesh& mesh,
                             double cut_radius) {
  if (polyline.empty()) throw ContourError("cannot rasterize an empty polyline");
  for (const auto& v : polyline) {
    if (!detail::inside_rest_rect(mesh, v)) {
      throw ContourError("polyline vertex (" + std::to_string(v.x()) + ", " +
                         std::to_string(v.y()) + ") lies outside the sheet");
    }
  }
  const double spacing = 0.5 * mesh.config().rest_dx;

  ScissorPath out;
  out.blade.push_back(polyline.front());
  for (std::size_t e = 1; e < polyline.size(); ++e) {
    const Vec2 a = polyline[e - 1], b = polyline[e];
    const double len = (b - a).norm();
    const int pieces = std::max(1, static_cast<int>(std::ceil(len / spacing - 1e-12)));
    for (int k = 1; k <= pieces; ++k) {
      const double t = static_cast<double>(k) / pieces;
      out.blade.push_back(k == pieces ? b : Vec2(a + (b - a) * t));
    }
  }

  // Only the grid cells under each blade disc can be hit.
  const double dx = mesh.config().rest_dx, dy = mesh.config().rest_dy;
  const double r2 = cut_radius * cut_radius;
  for (const Vec2& b : out.blade) {
    const int c0 = std::max(0, static_cast<int>(std::floor((b.x() - cut_radius) / dx)));
    const int c1 = std::min(mesh.width() - 1, static_cast<int>(std::ceil((b.x() + cut_radius) / dx)));
    const int r0 = std::max(0, static_cast<int>(std::floor((b.y() - cut_radius) / dy)));
    const int r1 = std::min(mesh.height() - 1, static_cast<int>(std::ceil((b.y() + cut_radius) / dy)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const PointIndex i = mesh.index(c, r);
        if ((mesh.rest_position_2d(i) - b).squaredNorm() <= r2) out.ideal_cut.insert(i);
      }
    }
  }
  return out;
}

inline ScissorPath rasterize(const Segment& segment, const Mesh& mesh, double cut_radius) {
  return rasterize(segment.path, mesh, cut_radius);
}

inline ScissorPath rasterize(const Contour& contour, const Mesh& mesh, double cut_radius) {
  return rasterize(contour.traversal(), mesh, cut_radius);
}

/// Absolute turning angle at each vertex; open-contour endpoints get 0.
inline std::vector<double> turning_angles(const Contour& contour) {
  const auto& v = contour.vertices;
  const std::size_t n = v.size();
  std::vector<double> angle(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!contour.closed && (i == 0 || i + 1 == n)) continue;
    const Vec2 in = v[i] - v[(i + n - 1) % n];
    const Vec2 out = v[(i + 1) % n] - v[i];
    const double cross = in.x() * out.y() - in.y() * out.x();
    angle[i] = std::abs(std::atan2(cross, in.dot(out)));
  }
  return angle;
}

/// Splits a contour at its sharpest vertices. Open contours are split at
/// max_segments - 1 interior vertices; closed contours need max_segments split
/// vertices to yield max_segments pieces. Ties go to the lowest vertex index.
inline Segmentation segment_contour(const Contour& contour, int max_segments,
                                    double joint_radius) {
  contour.validate();
  if (max_segments < 1) throw ContourError("max_segments must be >= 1");
  const std::size_t n = contour.vertices.size();
  const std::size_t candidates = contour.closed ? n : (n >= 2 ? n - 2 : 0);
  const std::size_t splits =
      max_segments == 1 ? 0 : static_cast<std::size_t>(contour.closed ? max_segments : max_segments - 1);
  if (static_cast<std::size_t>(max_segments) > n || splits > candidates) {
    throw ContourError("contour '" + contour.id + "' has too few vertices for " +
                       std::to_string(max_segments) + " segments");
  }

  Segmentation out;
  if (splits == 0) {
    out.segments.push_back(Segment{0, contour.traversal(), std::nullopt, std::nullopt});
    return out;
  }

  const auto angle = turning_angles(contour);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    if (contour.closed || (i > 0 && i + 1 < n)) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return angle[a] > angle[b]; });
  std::vector<std::size_t> cut_at(order.begin(), order.begin() + static_cast<long>(splits));
  std::sort(cut_at.begin(), cut_at.end());

  for (std::size_t s : cut_at) out.joints.push_back(JointArea{contour.vertices[s], joint_radius});

  const auto& v = contour.vertices;
  auto slice = [&](std::size_t from, std::size_t to) {
    // Inclusive walk from vertex `from` to vertex `to`, wrapping on closed contours.
    std::vector<Vec2> path;
    std::size_t i = from;
    path.push_back(v[i]);
    do {
      i = (i + 1) % n;
      path.push_back(v[i]);
    } while (i != to);
    return path;
  };

  if (contour.closed) {
    for (std::size_t k = 0; k < cut_at.size(); ++k) {
      const std::size_t next = (k + 1) % cut_at.size();
      out.segments.push_back(Segment{static_cast<int>(k), slice(cut_at[k], cut_at[next]), k, next});
    }
  } else {
    std::size_t from = 0;
    for (std::size_t k = 0; k <= cut_at.size(); ++k) {
      const std::size_t to = k < cut_at.size() ? cut_at[k] : n - 1;
      Segment seg{static_cast<int>(k), slice(from, to), std::nullopt, std::nullopt};
      if (k > 0) seg.start_joint = k - 1;
      if (k < cut_at.size()) seg.end_joint = k;
      out.segments.push_back(std::move(seg));
      from = to;
    }
  }
  return out;
}

inline Segmentation segment_contour(const Contour& contour, int max_segments,
                                    const PhysicsConfig& cfg) {
  return segment_contour(contour, max_segments, 2.0 * cfg.rest_dx);
}

/// Number of points in exactly one of the two sets.
inline std::size_t symmetric_difference(const IndexSet& ideal, const IndexSet& actual) {
  std::size_t count = 0;
  auto a = ideal.begin(), b = actual.begin();
  while (a != ideal.end() && b != actual.end()) {
    if (*a < *b) {
      ++count;
      ++a;
    } else if (*b < *a) {
      ++count;
      ++b;
    } else {
      ++a;
      ++b;
    }
  }
  count += static_cast<std::size_t>(std::distance(a, ideal.end()));
  count += static_cast<std::size_t>(std::distance(b, actual.end()));
  return count;
}

}  // namespace pinchcut
