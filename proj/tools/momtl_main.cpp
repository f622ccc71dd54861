#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "momtl/harness.hpp"
#include "momtl/minnorm.hpp"
#include "momtl/types.hpp"
#include "momtl/verify.hpp"

namespace {

using namespace momtl;

std::string format_alpha(const Vector& alpha) {
  std::string s = "[";
  for (int i = 0; i < alpha.size(); ++i) {
    if (i) s += ", ";
    s += csv_double(alpha(i));
  }
  return s + "]";
}

int cmd_solve(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("solve: cannot open gradient file " + path);
  const GradientMatrix grads = read_gradient_matrix(in);
  const MinNormSolution sol = frank_wolfe_min_norm(gram_matrix(grads));
  std::cout << "alpha = " << format_alpha(sol.weights.alpha)
            << " squared_norm = " << csv_double(sol.squared_norm)
            << " iterations = " << sol.iterations
            << " stationary = " << (is_pareto_stationary(sol) ? "true" : "false") << "\n";
  return 0;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw std::runtime_error("config: malformed json in " + path + ": " + e.what());
  }
  return parse_config(j);
}

int cmd_train(const std::string& config_path, const std::string& method_override,
              const std::string& out_override, long seed_override, bool has_seed,
              int max_steps_override) {
  ExperimentConfig config = load_config(config_path);
  if (!method_override.empty()) config.method = method_override;
  if (!out_override.empty()) config.out_dir = out_override;
  if (has_seed) config.seed = static_cast<std::uint64_t>(seed_override);
  if (max_steps_override >= 0) config.max_steps = max_steps_override;
  validate_config(config);

  const std::vector<RunRecord> records = run_experiment(config);
  const auto written = write_run_outputs(config.out_dir, records);
  for (const auto& p : written) std::cout << "wrote " << p.string() << "\n";
  return 0;
}

int cmd_verify(const std::string& out_dir, const std::string& replay_path) {
  std::vector<PropertyResult> results;
  if (!replay_path.empty()) {
    results = replay_property(replay_path, out_dir);
  } else {
    results = run_verify_suite(out_dir);
  }
  int failures = 0;
  for (const PropertyResult& r : results) {
    if (r.pass) {
      std::cout << "[PASS] " << r.name << "\n";
    } else {
      ++failures;
      std::cout << "[FAIL] " << r.name << ": " << r.detail;
      if (!r.counterexample_path.empty()) std::cout << " (dump: " << r.counterexample_path << ")";
      std::cout << "\n";
    }
  }
  std::cout << results.size() - failures << "/" << results.size() << " properties passed\n";
  return failures == 0 ? 0 : 1;
}

int cmd_profile(const std::string& dir, const std::string& out_path) {
  std::vector<RunRecord> records;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".json" &&
        entry.path().filename().string().find("_run") != std::string::npos) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw std::runtime_error("profile: cannot open " + f.string());
    records.push_back(run_record_from_json(Json::parse(in)));
  }
  if (records.empty()) throw std::runtime_error("profile: no run records found in " + dir);
  write_file_atomic(out_path, profile_csv(records));
  std::cout << "wrote " << out_path << " (" << records.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-based multi-objective optimization for multi-task learning"};
  app.require_subcommand(1);

  std::string gradient_file;
  auto* solve = app.add_subcommand("solve", "Min-norm weights for a gradient file (header 'T d')");
  solve->add_option("file", gradient_file, "gradient matrix file")->required();

  std::string config_path, method_override, out_override;
  long seed_override = 0;
  int max_steps_override = -1;
  auto* train = app.add_subcommand("train", "Run an experiment config");
  train->add_option("--config", config_path, "experiment config json")->required();
  train->add_option("--method", method_override, "override config method");
  train->add_option("--out", out_override, "override output directory");
  auto* seed_opt = train->add_option("--seed", seed_override, "override config seed");
  train->add_option("--max-steps", max_steps_override, "cap the number of training steps");

  std::string grid_config, grid_out;
  long grid_seed = 0;
  auto* grid = app.add_subcommand("grid", "Static-weight grid sweep (method=grid)");
  grid->add_option("--config", grid_config, "experiment config json")->required();
  grid->add_option("--out", grid_out, "override output directory");
  auto* grid_seed_opt = grid->add_option("--seed", grid_seed, "override config seed");

  std::string verify_out, replay_path;
  auto* verify = app.add_subcommand("verify", "Run the oracle property suites");
  verify->add_option("--out", verify_out, "directory for counterexample dumps");
  verify->add_option("--replay", replay_path, "re-run the property recorded in a dump file");

  std::string profile_dir = ".", profile_out = "profile.csv";
  auto* profile = app.add_subcommand("profile", "Merge run records into a trade-off profile csv");
  profile->add_option("--dir", profile_dir, "directory containing *_run.json files");
  profile->add_option("--out", profile_out, "output csv path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve->parsed()) return cmd_solve(gradient_file);
    if (train->parsed()) {
      return cmd_train(config_path, method_override, out_override, seed_override,
                       seed_opt->count() > 0, max_steps_override);
    }
    if (grid->parsed()) {
      return cmd_train(grid_config, "grid", grid_out, grid_seed, grid_seed_opt->count() > 0, -1);
    }
    if (verify->parsed()) return cmd_verify(verify_out, replay_path);
    if (profile->parsed()) return cmd_profile(profile_dir, profile_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
