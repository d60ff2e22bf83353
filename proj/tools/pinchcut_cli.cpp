#include "pinchcut/harness.hpp"
#include "pinchcut/io.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iomanip>
#include <iostream>

using namespace pinchcut;
namespace fs = std::filesystem;

namespace {

// Precedence: defaults < config file < environment < flags.
struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "JSON config (RunConfig fields)");
  cmd->add_option("--seed", a.seed, "master seed");
  cmd->add_option("--threads", a.threads, "worker threads")->check(CLI::PositiveNumber);
}

RunConfig resolve_config(const CommonArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = load_config(a.config);
  if (const char* out = std::getenv("PINCHCUT_OUTPUT_DIR"); out && *out) cfg.output_dir = out;
  if (std::getenv("PINCHCUT_THREADS")) cfg.threads = default_thread_count();
  if (a.seed) cfg.master_seed = *a.seed;
  if (a.threads) cfg.threads = *a.threads;
  cfg.validate();
  return cfg;
}

std::vector<Contour> resolve_testbed(const std::string& path) {
  return path.empty() ? synthetic_testbed() : load_testbed(path);
}

std::vector<Algorithm> parse_algorithms(const std::string& list) {
  std::vector<Algorithm> out;
  std::stringstream in(list);
  std::string name;
  while (std::getline(in, name, ',')) {
    if (name.empty()) continue;
    const Algorithm a = parse_algorithm(name);
    if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
  }
  if (out.empty()) throw HarnessError("no algorithms selected");
  return out;
}

void print_summary(const std::vector<ResultRow>& rows) {
  std::cout << std::left << std::setw(14) << "contour" << std::setw(8) << "alg" << std::right << std::setw(9)
            << "mean" << std::setw(9) << "std" << std::setw(10) << "impr%" << '\n';
  std::cout << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    std::cout << std::left << std::setw(14) << r.contour << std::setw(8) << algorithm_name(r.algorithm) << std::right
              << std::setw(9) << r.mean << std::setw(9) << r.stddev << std::setw(10);
    if (r.improvement) {
      std::cout << *r.improvement;
    } else {
      std::cout << "NA";
    }
    std::cout << '\n';
  }
  for (const auto& s : summarize(rows)) {
    std::cout << std::left << std::setw(14) << "average" << std::setw(8) << algorithm_name(s.algorithm) << std::right
              << std::setw(9) << s.mean << std::setw(9) << s.stddev << std::setw(10);
    if (s.improvement) {
      std::cout << *s.improvement;
    } else {
      std::cout << "NA";
    }
    std::cout << '\n';
  }
}

const Contour& find_contour(const std::vector<Contour>& testbed, const std::string& id) {
  for (const auto& c : testbed) {
    if (c.id == id) return c;
  }
  std::string known;
  for (const auto& c : testbed) known += (known.empty() ? "" : ", ") + c.id;
  throw HarnessError("no contour '" + id + "' in testbed (have: " + known + ")");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-point tensioning for simulated pattern cutting"};
  app.require_subcommand(1);

  CommonArgs run_common;
  std::string run_testbed, run_algos = "NTB,SFP,STP,SDRLT,MDRLT1,MDRLT2", run_out;
  auto* run = app.add_subcommand("run", "run algorithms on a testbed and write raw.csv, summary.csv, results.json");
  run->add_option("--testbed", run_testbed, "testbed JSON (default: bundled synthetic testbed)");
  run->add_option("--algos", run_algos, "comma-separated algorithms")->capture_default_str();
  run->add_option("--out", run_out, "output directory (default: config output_dir, env PINCHCUT_OUTPUT_DIR)");
  add_common(run, run_common);

  CommonArgs plan_common;
  std::string plan_testbed, plan_contour, plan_algo = "MDRLT2", plan_out = "plan.json";
  auto* plan = app.add_subcommand("plan", "build a pinch plan for one contour and save it");
  plan->add_option("--testbed", plan_testbed, "testbed JSON (default: bundled synthetic testbed)");
  plan->add_option("--contour", plan_contour, "contour id")->required();
  plan->add_option("--algo", plan_algo, "algorithm")->capture_default_str();
  plan->add_option("--out", plan_out, "plan JSON path; policies are written next to it")->capture_default_str();
  add_common(plan, plan_common);

  CommonArgs eval_common;
  std::string eval_plan;
  std::optional<int> eval_trials;
  auto* eval = app.add_subcommand("eval", "evaluate a saved plan");
  eval->add_option("--plan", eval_plan, "plan JSON")->required();
  eval->add_option("--trials", eval_trials, "evaluation trials")->check(CLI::PositiveNumber);
  add_common(eval, eval_common);

  std::string gen_out = "testbed.json";
  auto* gen = app.add_subcommand("gen-testbed", "write the bundled synthetic testbed");
  gen->add_option("--out", gen_out, "output path")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      RunConfig cfg = resolve_config(run_common);
      if (!run_out.empty()) cfg.output_dir = run_out;
      const auto testbed = resolve_testbed(run_testbed);
      const auto rows = run_experiment(testbed, parse_algorithms(run_algos), cfg);
      report(rows, cfg.output_dir);
      print_summary(rows);
      std::cout << "wrote " << (fs::path(cfg.output_dir) / "raw.csv").string() << ", summary.csv, results.json\n";
    } else if (*plan) {
      const RunConfig cfg = resolve_config(plan_common);
      const auto testbed = resolve_testbed(plan_testbed);
      const Contour& contour = find_contour(testbed, plan_contour);
      const CuttingProblem problem = CuttingProblem::make(contour, cfg.width, cfg.height, cfg.physics);
      const PinchPlan p = make_plan(problem, parse_algorithm(plan_algo), cfg);
      const fs::path out(plan_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      save_plan(SavedPlan{contour, cfg.width, cfg.height, cfg.physics, p}, out);
      std::cout << "wrote " << out.string() << " (" << p.policies.size() << " policies)\n";
    } else if (*eval) {
      RunConfig cfg = resolve_config(eval_common);
      if (eval_trials) cfg.trials = *eval_trials;
      const SavedPlan saved = load_plan(eval_plan);
      const CuttingProblem problem = CuttingProblem::make(saved.contour, saved.width, saved.height, saved.physics);
      const ResultRow row =
          ResultRow::from_trials(saved.contour.id, saved.plan.algorithm, evaluate_trials(problem, saved.plan, cfg));
      std::cout << saved.contour.id << ' ' << algorithm_name(row.algorithm) << " trials:";
      for (double t : row.trials) std::cout << ' ' << format_number(t);
      std::cout << "\nmean " << format_number(row.mean) << " std " << format_number(row.stddev) << '\n';
    } else if (*gen) {
      const fs::path out(gen_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      write_text(out, testbed_to_text(synthetic_testbed()));
      std::cout << "wrote " << out.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "pinchcut: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
