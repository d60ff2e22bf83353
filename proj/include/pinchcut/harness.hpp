#pragma once

#include "pinchcut/pinch_search.hpp"
#include "pinchcut/rng.hpp"
#include "pinchcut/work_pool.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pinchcut {

class HarnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  int width = 25;
  int height = 25;
  PhysicsConfig physics;
  SearchConfig search;
  TrainConfig train;
  int trials = 10;
  std::uint64_t master_seed = 20190519;
  int threads = 1;
  std::string output_dir = "results";

  void validate() const {
    if (trials < 1) throw HarnessError("trials must be >= 1");
    if (threads < 1) throw HarnessError("threads must be >= 1");
    if (width < 2 || height < 2) throw HarnessError("mesh must be at least 2x2");
    physics.validate();
    train.validate();
    if (search.m_two < 1 || search.m_many < 1) throw HarnessError("M must be >= 1");
    if (search.eval_trials < 1) throw HarnessError("eval_trials must be >= 1");
    if (!(search.d > 0.0)) throw HarnessError("d must be positive");
  }
};

// ---- statistics -----------------------------------------------------------

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

/// Population standard deviation (the spread of the evaluation trials).
inline double stddev(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size()));
}

/// 100 * (mean(NTB) - mean(alg)) / mean(NTB); empty when the NTB mean is zero.
inline std::optional<double> relative_improvement(double alg_mean, double ntb_mean) {
  if (ntb_mean == 0.0) return std::nullopt;
  return 100.0 * (ntb_mean - alg_mean) / ntb_mean;
}

struct ResultRow {
  std::string contour;
  Algorithm algorithm = Algorithm::NTB;
  std::vector<double> trials;
  double mean = 0.0;
  double stddev = 0.0;
  std::optional<double> improvement;  // over NTB on the same contour, percent

  static ResultRow from_trials(std::string contour, Algorithm alg, std::vector<double> trials) {
    ResultRow r;
    r.contour = std::move(contour);
    r.algorithm = alg;
    r.trials = std::move(trials);
    r.mean = pinchcut::mean(r.trials);
    r.stddev = pinchcut::stddev(r.trials);
    return r;
  }
};

// ---- algorithms -----------------------------------------------------------

/// Seed of evaluation trial `t` of `alg` on `contour`.
inline std::uint64_t trial_seed(std::uint64_t master, const std::string& contour, Algorithm alg, int t) {
  return derive_seed({master, hash_string(contour), std::uint64_t(alg), std::uint64_t(t)});
}

/// The single pinch point of SFP/STP: the candidate closest to the contour centroid.
inline PointIndex centroid_pinch(const CuttingProblem& problem, const SearchConfig& search) {
  const Mesh mesh = problem.rest_mesh();
  const IndexSet pool =
      problem.usable(candidate_points(mesh, problem.contour_cut, effective_distance(search.d, mesh)), {});
  if (pool.empty()) throw HarnessError("contour '" + problem.contour.id + "' has no viable pinch point");
  const Vec2 c = problem.contour.centroid();
  PointIndex best = *pool.begin();
  double best_d2 = (mesh.rest_position_2d(best) - c).squaredNorm();
  for (PointIndex p : pool) {
    const double d2 = (mesh.rest_position_2d(p) - c).squaredNorm();
    if (d2 < best_d2) {
      best = p;
      best_d2 = d2;
    }
  }
  return best;
}

/// Axis direction best aligned with `v` (first of +x, -x, +y, -y on ties).
inline Direction dominant_direction(const Vec2& v) {
  Direction best = Direction::PosX;
  double best_dot = -std::numeric_limits<double>::infinity();
  for (Direction d : kAllDirections) {
    const double dot = direction_vector(d).dot(v);
    if (dot > best_dot) {
      best_dot = dot;
      best = d;
    }
  }
  return best;
}

inline PlanOptions plan_options(const RunConfig& cfg, PolicyCache* cache) {
  PlanOptions opt;
  opt.train = cfg.train;
  opt.train.seed = derive_seed({cfg.master_seed, hash_string("train")});
  opt.search = cfg.search;
  opt.search.seed = derive_seed({cfg.master_seed, hash_string("search")});
  opt.threads = cfg.threads;
  opt.cache = cache;
  return opt;
}

/// Builds the plan an algorithm cuts with. Baselines are assembled directly;
/// the learned variants go through build_plan.
inline PinchPlan make_plan(const CuttingProblem& problem, Algorithm alg, const RunConfig& cfg,
                           PolicyCache* cache = nullptr) {
  const std::size_t nseg = problem.segment_count();
  PinchPlan plan;
  plan.contour_id = problem.contour.id;
  plan.algorithm = alg;
  plan.order = problem.natural_order();
  plan.pinch.assign(nseg, std::nullopt);
  plan.control.assign(nseg, Controller{});
  switch (alg) {
    case Algorithm::NTB:
      return plan;
    case Algorithm::SFP:
      plan.fixed_pins.push_back(centroid_pinch(problem, cfg.search));
      return plan;
    case Algorithm::STP: {
      const PointIndex p = centroid_pinch(problem, cfg.search);
      const Mesh mesh = problem.rest_mesh();
      Controller c;
      c.kind = Controller::Kind::ScriptedPull;
      c.pull = dominant_direction(mesh.rest_position_2d(p) - problem.contour.centroid());
      plan.pinch.assign(nseg, p);
      plan.control.assign(nseg, c);
      return plan;
    }
    case Algorithm::SDRLT:
    case Algorithm::MDRLT1:
    case Algorithm::MDRLT2:
      return build_plan(problem, alg, plan_options(cfg, cache));
  }
  throw HarnessError("unhandled algorithm");
}

/// Evaluation trials of a finished plan, one seed per trial.
inline std::vector<double> evaluate_trials(const CuttingProblem& problem, const PinchPlan& plan,
                                           const RunConfig& cfg) {
  CuttingEnv env(plan_scenario(problem, plan));
  std::vector<double> out;
  for (int t = 0; t < cfg.trials; ++t) {
    Rng rng(trial_seed(cfg.master_seed, problem.contour.id, plan.algorithm, t));
    auto [traj, result] = rollout_with(
        env, [&](const Observation& o, std::size_t stage, Rng& g) { return plan_action(plan, o, stage, g); }, rng);
    out.push_back(double(result.sym_diff));
  }
  return out;
}

inline ResultRow run_algorithm(const CuttingProblem& problem, Algorithm alg, const RunConfig& cfg,
                               PolicyCache* cache = nullptr) {
  const PinchPlan plan = make_plan(problem, alg, cfg, cache);
  return ResultRow::from_trials(problem.contour.id, alg, evaluate_trials(problem, plan, cfg));
}

/// Runs every (contour, algorithm) pair and fills in improvements over NTB
/// (NTB is evaluated for every contour even when not requested, but only
/// reported if requested). Contours run in parallel; rows come back in
/// testbed order whatever the thread count.
inline std::vector<ResultRow> run_experiment(const std::vector<Contour>& testbed,
                                             const std::vector<Algorithm>& algorithms, RunConfig cfg) {
  cfg.validate();
  PolicyCache cache;
  const int outer = std::min<int>(cfg.threads, int(testbed.size()));
  RunConfig inner = cfg;
  inner.threads = std::max(1, cfg.threads / std::max(1, outer));
  auto per_contour = parallel_map(testbed.size(), outer, [&](std::size_t c) {
    const CuttingProblem problem = CuttingProblem::make(testbed[c], inner.width, inner.height, inner.physics);
    const ResultRow ntb = run_algorithm(problem, Algorithm::NTB, inner, &cache);
    std::vector<ResultRow> rows;
    for (Algorithm alg : algorithms) {
      ResultRow row = alg == Algorithm::NTB ? ntb : run_algorithm(problem, alg, inner, &cache);
      row.improvement = relative_improvement(row.mean, ntb.mean);
      rows.push_back(std::move(row));
    }
    return rows;
  });
  std::vector<ResultRow> rows;
  for (auto& block : per_contour) {
    for (auto& r : block) rows.push_back(std::move(r));
  }
  return rows;
}

// ---- reports --------------------------------------------------------------

/// Shortest decimal that round-trips, e.g. 33.7, 135, 0.5.
inline std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw HarnessError("number formatting failed");
  return std::string(buf, end);
}

inline std::string raw_csv(const std::vector<ResultRow>& rows) {
  std::size_t n = 0;
  for (const auto& r : rows) n = std::max(n, r.trials.size());
  std::ostringstream out;
  out << "contour,algorithm";
  for (std::size_t t = 1; t <= n; ++t) out << ",trial_" << t;
  out << ",mean\n";
  for (const auto& r : rows) {
    out << r.contour << ',' << algorithm_name(r.algorithm);
    for (std::size_t t = 0; t < n; ++t) out << ',' << (t < r.trials.size() ? format_number(r.trials[t]) : "");
    out << ',' << format_number(r.mean) << '\n';
  }
  return out.str();
}

/// Reads rows in raw.csv layout. `trial_k` columns are the data; a `mean`
/// column, if present, is ignored and recomputed.
inline std::vector<ResultRow> parse_raw_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream cells(s);
    while (std::getline(cells, cell, ',')) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };
  if (!std::getline(in, line)) throw HarnessError(origin + ": empty file");
  const auto header = split(line);
  if (header.size() < 3 || header[0] != "contour" || header[1] != "algorithm") {
    throw HarnessError(origin + ":1: header must start with contour,algorithm");
  }
  std::vector<std::size_t> trial_cols;
  for (std::size_t c = 2; c < header.size(); ++c) {
    if (header[c].rfind("trial_", 0) == 0) {
      trial_cols.push_back(c);
    } else if (header[c] != "mean") {
      throw HarnessError(origin + ":1: unknown column '" + header[c] + "'");
    }
  }
  std::vector<ResultRow> rows;
  for (int lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const auto cells = split(line);
    if (cells.size() != header.size()) throw HarnessError(where + ": expected " + std::to_string(header.size()) + " cells");
    Algorithm alg;
    try {
      alg = parse_algorithm(cells[1]);
    } catch (const SearchError& e) {
      throw HarnessError(where + ": " + e.what());
    }
    std::vector<double> trials;
    for (std::size_t c : trial_cols) {
      if (cells[c].empty()) continue;
      double v = 0.0;
      const char* b = cells[c].data();
      const char* e = b + cells[c].size();
      const auto [end, ec] = std::from_chars(b, e, v);
      if (ec != std::errc{} || end != e) throw HarnessError(where + ": bad number '" + cells[c] + "'");
      trials.push_back(v);
    }
    rows.push_back(ResultRow::from_trials(cells[0], alg, std::move(trials)));
  }
  return rows;
}

inline std::string summary_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << "contour,algorithm,mean,std,improvement_pct\n";
  for (const auto& r : rows) {
    out << r.contour << ',' << algorithm_name(r.algorithm) << ',' << format_number(r.mean) << ','
        << format_number(r.stddev) << ',' << (r.improvement ? format_number(*r.improvement) : "NA") << '\n';
  }
  return out.str();
}

inline nlohmann::json results_json(const std::vector<ResultRow>& rows) {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j;
    j["contour"] = r.contour;
    j["algorithm"] = algorithm_name(r.algorithm);
    j["trials"] = r.trials;
    j["mean"] = r.mean;
    j["std"] = r.stddev;
    j["improvement_pct"] = r.improvement ? nlohmann::json(*r.improvement) : nlohmann::json(nullptr);
    rows_json.push_back(std::move(j));
  }
  return nlohmann::json{{"rows", rows_json}};
}

/// Per-algorithm averages over contours: mean, std and improvement.
struct AlgorithmSummary {
  Algorithm algorithm = Algorithm::NTB;
  double mean = 0.0;
  double stddev = 0.0;
  std::optional<double> improvement;
};

inline std::vector<AlgorithmSummary> summarize(const std::vector<ResultRow>& rows) {
  std::vector<AlgorithmSummary> out;
  for (Algorithm alg : kAllAlgorithms) {
    std::vector<double> means, stds, imps;
    for (const auto& r : rows) {
      if (r.algorithm != alg) continue;
      means.push_back(r.mean);
      stds.push_back(r.stddev);
      if (r.improvement) imps.push_back(*r.improvement);
    }
    if (means.empty()) continue;
    AlgorithmSummary s;
    s.algorithm = alg;
    s.mean = mean(means);
    s.stddev = mean(stds);
    if (!imps.empty()) s.improvement = mean(imps);
    out.push_back(s);
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw HarnessError("cannot write " + path.string());
  out << text;
  if (!out) throw HarnessError("failed writing " + path.string());
}

/// Writes raw.csv, summary.csv and results.json into `dir`.
inline void report(const std::vector<ResultRow>& rows, const std::filesystem::path& dir) {
  if (rows.empty()) throw HarnessError("nothing to report");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw HarnessError("cannot create output directory " + dir.string() + ": " + ec.message());
  write_text(dir / "raw.csv", raw_csv(rows));
  write_text(dir / "summary.csv", summary_csv(rows));
  nlohmann::json j = results_json(rows);
  nlohmann::json by_alg = nlohmann::json::array();
  for (const auto& s : summarize(rows)) {
    by_alg.push_back({{"algorithm", algorithm_name(s.algorithm)},
                      {"mean", s.mean},
                      {"std", s.stddev},
                      {"improvement_pct", s.improvement ? nlohmann::json(*s.improvement) : nlohmann::json(nullptr)}});
  }
  j["summary"] = by_alg;
  write_text(dir / "results.json", j.dump(2) + "\n");
}

}  // namespace pinchcut
