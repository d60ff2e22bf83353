#pragma once

#include "pinchcut/harness.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace pinchcut {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Json = nlohmann::json;

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Parses JSON text, reporting syntax errors as "<path>:<line>:<col>: ..." with
/// the offending line quoted.
inline Json parse_json(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    const std::size_t at = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    std::size_t line = 1, line_start = 0;
    for (std::size_t i = 0; i < at; ++i) {
      if (text[i] == '\n') {
        ++line;
        line_start = i + 1;
      }
    }
    const std::size_t line_end = std::min(text.find('\n', line_start), text.size());
    std::ostringstream msg;
    msg << origin << ':' << line << ':' << (at - line_start + 1) << ": malformed JSON\n  "
        << text.substr(line_start, line_end - line_start) << "\n  " << std::string(at - line_start, ' ') << '^';
    throw FormatError(msg.str());
  }
}

inline Json load_json(const std::filesystem::path& path) { return parse_json(read_file(path), path.string()); }

namespace detail {

/// Reads field `key` of object `j` into `out` if present; `where` names the
/// object in diagnostics.
template <class T>
void read_field(const Json& j, const char* key, T& out, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const Json::exception&) {
    throw FormatError(where + "." + key + ": unexpected value " + it->dump());
  }
}

template <class T>
T require_field(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  T out{};
  read_field(j, key, out, where);
  return out;
}

inline void require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": expected an object");
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* name) { return k == name; })) {
      throw FormatError(where + ": unknown field '" + k + "'");
    }
  }
}

}  // namespace detail

// ---- testbed --------------------------------------------------------------

inline Json contour_to_json(const Contour& c) {
  Json verts = Json::array();
  for (const Vec2& v : c.vertices) verts.push_back({v.x(), v.y()});
  return {{"id", c.id}, {"closed", c.closed}, {"vertices", verts}, {"max_segments", c.max_segments}};
}

inline Contour contour_from_json(const Json& j, const std::string& where) {
  detail::require_object(j, where);
  detail::reject_unknown(j, {"id", "closed", "vertices", "max_segments"}, where);
  Contour c;
  c.id = detail::require_field<std::string>(j, "id", where);
  c.closed = detail::require_field<bool>(j, "closed", where);
  c.max_segments = detail::require_field<int>(j, "max_segments", where);
  const auto verts = detail::require_field<std::vector<std::vector<double>>>(j, "vertices", where);
  for (std::size_t i = 0; i < verts.size(); ++i) {
    if (verts[i].size() != 2) {
      throw FormatError(where + ".vertices[" + std::to_string(i) + "]: expected [x, y]");
    }
    c.vertices.emplace_back(verts[i][0], verts[i][1]);
  }
  try {
    c.validate();
  } catch (const ContourError& e) {
    throw FormatError(where + ": " + e.what());
  }
  return c;
}

inline std::vector<Contour> testbed_from_json(const Json& j, const std::string& origin) {
  if (!j.is_array()) throw FormatError(origin + ": testbed must be a JSON array of contours");
  std::vector<Contour> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(contour_from_json(j[i], origin + ": contour[" + std::to_string(i) + "]"));
  }
  if (out.empty()) throw FormatError(origin + ": testbed is empty");
  return out;
}

inline std::vector<Contour> load_testbed(const std::filesystem::path& path) {
  return testbed_from_json(load_json(path), path.string());
}

inline std::string testbed_to_text(const std::vector<Contour>& testbed) {
  Json j = Json::array();
  for (const auto& c : testbed) j.push_back(contour_to_json(c));
  return j.dump(2) + "\n";
}

/// Desk-scale testbed for a 25 x 25 mm sheet: six contours, four of them cut
/// in several segments.
inline std::vector<Contour> synthetic_testbed() {
  std::vector<Contour> tb;
  auto add = [&](std::string id, bool closed, int segs, std::vector<Vec2> v) {
    tb.push_back(Contour{std::move(id), std::move(v), closed, segs});
  };
  add("zigzag", false, 3, {{4.3, 5.2}, {9.4, 18.7}, {14.6, 5.8}, {20.3, 19.1}});
  add("chevron", false, 2, {{4.4, 17.6}, {12.3, 6.2}, {20.2, 17.3}});
  add("ell", false, 2, {{5.3, 19.4}, {5.6, 6.3}, {19.2, 6.6}});

  std::vector<Vec2> pent;
  for (int k = 0; k < 5; ++k) {
    const double a = std::numbers::pi / 2 + 2 * std::numbers::pi * k / 5;
    pent.emplace_back(12.2 + 7.6 * std::cos(a), 12.1 + 7.6 * std::sin(a));
  }
  add("pentagon", true, 2, pent);

  std::vector<Vec2> circle;
  for (int k = 0; k < 12; ++k) {
    const double a = 2 * std::numbers::pi * k / 12;
    circle.emplace_back(12.1 + 7.3 * std::cos(a), 12.3 + 7.3 * std::sin(a));
  }
  add("circle", true, 1, circle);

  std::vector<Vec2> arc;
  for (int k = 0; k <= 6; ++k) {
    const double a = std::numbers::pi * (0.15 + 0.7 * k / 6);
    arc.emplace_back(12.4 + 9.1 * std::cos(a), 4.2 + 14.3 * std::sin(a));
  }
  add("arch", false, 1, arc);

  // Snap to 0.1 mm so the file text is short and platform independent.
  for (auto& c : tb) {
    for (auto& v : c.vertices) v = (v * 10.0).array().round().matrix() / 10.0;
  }
  return tb;
}

// ---- run config -----------------------------------------------------------

inline void apply_config(const Json& j, RunConfig& cfg, const std::string& origin) {
  using detail::read_field;
  detail::require_object(j, origin);
  detail::reject_unknown(j, {"mesh", "physics", "search", "train", "trials", "master_seed", "threads", "output_dir"},
                         origin);
  if (const auto m = j.find("mesh"); m != j.end()) {
    const std::string w = origin + ": mesh";
    detail::require_object(*m, w);
    detail::reject_unknown(*m, {"width", "height"}, w);
    read_field(*m, "width", cfg.width, w);
    read_field(*m, "height", cfg.height, w);
  }
  if (const auto p = j.find("physics"); p != j.end()) {
    const std::string w = origin + ": physics";
    detail::require_object(*p, w);
    detail::reject_unknown(*p, {"alpha", "delta", "tau", "gravity_z", "rest_dx", "rest_dy", "constraint_iterations",
                                "step_scale", "cut_release", "substrate"},
                           w);
    auto& ph = cfg.physics;
    read_field(*p, "alpha", ph.alpha, w);
    read_field(*p, "delta", ph.delta, w);
    read_field(*p, "tau", ph.tau, w);
    read_field(*p, "gravity_z", ph.gravity_z, w);
    read_field(*p, "rest_dx", ph.rest_dx, w);
    read_field(*p, "rest_dy", ph.rest_dy, w);
    read_field(*p, "constraint_iterations", ph.constraint_iterations, w);
    read_field(*p, "step_scale", ph.step_scale, w);
    read_field(*p, "cut_release", ph.cut_release, w);
    read_field(*p, "substrate", ph.substrate, w);
  }
  if (const auto s = j.find("search"); s != j.end()) {
    const std::string w = origin + ": search";
    detail::require_object(*s, w);
    detail::reject_unknown(*s, {"d", "m_two", "m_many", "eval_trials"}, w);
    read_field(*s, "d", cfg.search.d, w);
    read_field(*s, "m_two", cfg.search.m_two, w);
    read_field(*s, "m_many", cfg.search.m_many, w);
    read_field(*s, "eval_trials", cfg.search.eval_trials, w);
  }
  if (const auto t = j.find("train"); t != j.end()) {
    const std::string w = origin + ": train";
    detail::require_object(*t, w);
    detail::reject_unknown(*t, {"iterations", "batch_size", "max_kl", "discount", "cg_iterations", "cg_damping",
                                "backtrack_steps", "backtrack_ratio"},
                           w);
    auto& tr = cfg.train;
    read_field(*t, "iterations", tr.iterations, w);
    read_field(*t, "batch_size", tr.batch_size, w);
    read_field(*t, "max_kl", tr.max_kl, w);
    read_field(*t, "discount", tr.discount, w);
    read_field(*t, "cg_iterations", tr.cg_iterations, w);
    read_field(*t, "cg_damping", tr.cg_damping, w);
    read_field(*t, "backtrack_steps", tr.backtrack_steps, w);
    read_field(*t, "backtrack_ratio", tr.backtrack_ratio, w);
  }
  read_field(j, "trials", cfg.trials, origin);
  read_field(j, "master_seed", cfg.master_seed, origin);
  read_field(j, "threads", cfg.threads, origin);
  read_field(j, "output_dir", cfg.output_dir, origin);
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw FormatError(origin + ": " + e.what());
  }
}

inline Json physics_to_json(const PhysicsConfig& p) {
  return {{"alpha", p.alpha},         {"delta", p.delta},
          {"tau", p.tau},             {"gravity_z", p.gravity_z},
          {"rest_dx", p.rest_dx},     {"rest_dy", p.rest_dy},
          {"constraint_iterations", p.constraint_iterations},
          {"step_scale", p.step_scale}, {"cut_release", p.cut_release},
          {"substrate", p.substrate}};
}

inline Json config_to_json(const RunConfig& c) {
  return {{"mesh", {{"width", c.width}, {"height", c.height}}},
          {"physics", physics_to_json(c.physics)},
          {"search", {{"d", c.search.d}, {"m_two", c.search.m_two}, {"m_many", c.search.m_many},
                      {"eval_trials", c.search.eval_trials}}},
          {"train", {{"iterations", c.train.iterations}, {"batch_size", c.train.batch_size},
                     {"max_kl", c.train.max_kl}, {"discount", c.train.discount},
                     {"cg_iterations", c.train.cg_iterations}, {"cg_damping", c.train.cg_damping},
                     {"backtrack_steps", c.train.backtrack_steps}, {"backtrack_ratio", c.train.backtrack_ratio}}},
          {"trials", c.trials},
          {"master_seed", c.master_seed},
          {"threads", c.threads},
          {"output_dir", c.output_dir}};
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
  apply_config(load_json(path), base, path.string());
  return base;
}

// ---- plans ----------------------------------------------------------------

inline const char* controller_kind_name(Controller::Kind k) {
  switch (k) {
    case Controller::Kind::Idle: return "idle";
    case Controller::Kind::Learned: return "learned";
    case Controller::Kind::ScriptedPull: return "scripted_pull";
  }
  return "idle";
}

/// A plan together with everything needed to replay it.
struct SavedPlan {
  Contour contour;
  int width = 25;
  int height = 25;
  PhysicsConfig physics;
  PinchPlan plan;
};

/// Writes `<path>` and one policy file per learned policy next to it
/// (`<stem>.policy<k>.bin`); the JSON references policies by file name.
inline void save_plan(const SavedPlan& saved, const std::filesystem::path& path) {
  const PinchPlan& plan = saved.plan;
  Json pinch = Json::array();
  for (const auto& p : plan.pinch) pinch.push_back(p ? Json(*p) : Json(nullptr));
  Json control = Json::array();
  for (const auto& c : plan.control) {
    Json cj{{"kind", controller_kind_name(c.kind)}};
    if (c.kind == Controller::Kind::Learned) cj["policy"] = c.policy;
    if (c.kind == Controller::Kind::ScriptedPull) {
      cj["pull"] = direction_name(c.pull);
      cj["pull_limit"] = c.pull_limit;
    }
    control.push_back(cj);
  }
  Json policies = Json::array();
  for (std::size_t k = 0; k < plan.policies.size(); ++k) {
    const std::string name = path.stem().string() + ".policy" + std::to_string(k) + ".bin";
    plan.policies[k].save((path.parent_path() / name).string());
    policies.push_back(name);
  }
  Json j{{"contour", contour_to_json(saved.contour)},
         {"mesh", {{"width", saved.width}, {"height", saved.height}}},
         {"physics", physics_to_json(saved.physics)},
         {"algorithm", algorithm_name(plan.algorithm)},
         {"order", plan.order},
         {"pinch", pinch},
         {"control", control},
         {"fixed_pins", plan.fixed_pins},
         {"policies", policies},
         {"validation_score", std::isfinite(plan.validation_score) ? Json(plan.validation_score) : Json(nullptr)}};
  write_text(path, j.dump(2) + "\n");
}

inline SavedPlan load_plan(const std::filesystem::path& path) {
  const std::string origin = path.string();
  const Json j = load_json(path);
  detail::require_object(j, origin);
  SavedPlan s;
  s.contour = contour_from_json(detail::require_field<Json>(j, "contour", origin), origin + ": contour");
  const Json mesh = detail::require_field<Json>(j, "mesh", origin);
  s.width = detail::require_field<int>(mesh, "width", origin + ": mesh");
  s.height = detail::require_field<int>(mesh, "height", origin + ": mesh");
  RunConfig scratch;
  apply_config(Json{{"physics", detail::require_field<Json>(j, "physics", origin)}}, scratch, origin);
  s.physics = scratch.physics;

  PinchPlan& plan = s.plan;
  plan.contour_id = s.contour.id;
  try {
    plan.algorithm = parse_algorithm(detail::require_field<std::string>(j, "algorithm", origin));
  } catch (const SearchError& e) {
    throw FormatError(origin + ": " + e.what());
  }
  plan.order = detail::require_field<std::vector<int>>(j, "order", origin);
  for (const auto& p : detail::require_field<Json>(j, "pinch", origin)) {
    if (p.is_null()) {
      plan.pinch.emplace_back();
    } else if (p.is_number_unsigned()) {
      plan.pinch.emplace_back(p.get<PointIndex>());
    } else {
      throw FormatError(origin + ": pinch entries must be point indices or null");
    }
  }
  for (const auto& cj : detail::require_field<Json>(j, "control", origin)) {
    const std::string where = origin + ": control";
    Controller c;
    const auto kind = detail::require_field<std::string>(cj, "kind", where);
    if (kind == "idle") {
      c.kind = Controller::Kind::Idle;
    } else if (kind == "learned") {
      c.kind = Controller::Kind::Learned;
      c.policy = detail::require_field<int>(cj, "policy", where);
    } else if (kind == "scripted_pull") {
      c.kind = Controller::Kind::ScriptedPull;
      const auto dir = detail::require_field<std::string>(cj, "pull", where);
      bool found = false;
      for (Direction d : kAllDirections) {
        if (dir == direction_name(d)) {
          c.pull = d;
          found = true;
        }
      }
      if (!found) throw FormatError(where + ": unknown pull direction '" + dir + "'");
      detail::read_field(cj, "pull_limit", c.pull_limit, where);
    } else {
      throw FormatError(where + ": unknown controller kind '" + kind + "'");
    }
    plan.control.push_back(c);
  }
  plan.fixed_pins = detail::require_field<std::vector<PointIndex>>(j, "fixed_pins", origin);
  for (const auto& name : detail::require_field<std::vector<std::string>>(j, "policies", origin)) {
    plan.policies.push_back(Policy::load((path.parent_path() / name).string()));
  }
  if (const auto v = j.find("validation_score"); v != j.end() && v->is_number()) {
    plan.validation_score = v->get<double>();
  }

  const std::size_t nseg = segment_contour(s.contour, s.contour.max_segments, s.physics).segments.size();
  if (plan.pinch.size() != nseg || plan.control.size() != nseg) {
    throw FormatError(origin + ": pinch and control need one entry per segment (" + std::to_string(nseg) + ")");
  }
  std::vector<int> sorted = plan.order;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] != int(i) || sorted.size() != nseg) {
      throw FormatError(origin + ": order must be a permutation of the segment ids");
    }
  }
  for (const auto& c : plan.control) {
    if (c.kind == Controller::Kind::Learned && (c.policy < 0 || std::size_t(c.policy) >= plan.policies.size())) {
      throw FormatError(origin + ": controller references a missing policy");
    }
  }
  return s;
}

}  // namespace pinchcut
