// hmdlab: command-line harness for the detector / attack / MTD experiments.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hmdlab/error.hpp"
#include "hmdlab/experiment.hpp"
#include "hmdlab/trace.hpp"

namespace fs = std::filesystem;
using namespace hmdlab;

namespace {

fs::path default_out_dir() {
  if (const char* env = std::getenv("HMDLAB_OUT"); env != nullptr && *env != '\0') return env;
  return "hmdlab-out";
}

struct RunArgs {
  std::string recipe;
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> algos;
  std::string out_dir;
  std::string csv_path;
  std::optional<double> epsilon;
  std::optional<std::uint64_t> h_t, r_max, h;
  bool include_iterations = false;
  bool print = false;
};

int do_run(const RunArgs& a) {
  ExperimentConfig config = a.config_path.empty() ? ExperimentConfig{} : load_config(a.config_path);
  config.recipe = parse_recipe(a.recipe);
  if (!a.seeds.empty()) config.seeds = a.seeds;
  if (!a.algos.empty()) {
    config.algos.clear();
    for (const auto& s : a.algos) config.algos.push_back(parse_algo(s));
  }
  if (!a.csv_path.empty()) {
    config.dataset.source = "csv";
    config.dataset.csv_path = a.csv_path;
  }
  if (a.epsilon) config.budget.epsilon = *a.epsilon;
  if (a.h_t) config.combinatorics.h_t = *a.h_t;
  if (a.r_max) config.combinatorics.r_max = *a.r_max;
  if (a.h) config.combinatorics.h = *a.h;
  if (a.include_iterations) config.include_iterations = true;
  fs::path out = !a.out_dir.empty() ? fs::path(a.out_dir) : !config.out_dir.empty() ? config.out_dir : default_out_dir();
  config.out_dir = out;

  const auto report = run(config);
  const auto path = write_report(report, out);
  if (a.print) {
    std::cout << report.to_json().dump(2) << '\n';
  } else {
    std::cout << path.string() << '\n';
  }
  return 0;
}

int do_plot(const std::string& report_path, const std::string& figure, const std::string& out_path) {
  std::ifstream in(report_path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read report " + report_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kParse, report_path + ": " + e.what());
  }
  const auto rows = plot_data(j, figure);
  if (out_path.empty()) {
    write_plot_csv(rows, std::cout);
    return 0;
  }
  const fs::path tmp = out_path + ".partial";
  try {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + tmp.string());
    write_plot_csv(rows, out);
    out.close();
    if (!out) throw Error(ErrorKind::kIo, "write failed for " + tmp.string());
    fs::rename(tmp, out_path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  return 0;
}

int do_validate(const std::string& path) {
  const auto config = load_config(path);
  config.validate();
  std::cout << "ok: " << path << '\n' << to_json(config).dump(2) << '\n';
  return 0;
}

int do_generate(std::size_t benign, std::size_t malware, std::uint64_t seed, const std::string& out) {
  const auto d = generate_synthetic_dataset(default_profile(), benign, malware, seed);
  if (out.empty() || out == "-") {
    write_perf_csv(d, std::cout);
  } else {
    write_perf_csv(d, fs::path(out));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hmdlab - hardware malware detector, adversarial attack and moving target defense lab"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "run an experiment recipe and write its JSON report");
  run_cmd->add_option("recipe", run_args.recipe, "recipe name")
      ->required()
      ->check(CLI::IsMember(recipe_names()));
  run_cmd->add_option("--config", run_args.config_path, "JSON config file")->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", run_args.seeds, "seed (repeatable; replaces the configured list)");
  run_cmd->add_option("--algo", run_args.algos, "algorithm (repeatable): decision_tree, neural_network");
  run_cmd->add_option("--out", run_args.out_dir, "output directory (default: $HMDLAB_OUT or ./hmdlab-out)");
  run_cmd->add_option("--csv", run_args.csv_path, "ingest perf CSV instead of the synthetic profile");
  run_cmd->add_option("--epsilon", run_args.epsilon, "attack step size");
  run_cmd->add_option("--ht", run_args.h_t, "combinatorics: total HPCs");
  run_cmd->add_option("--rmax", run_args.r_max, "combinatorics: max simultaneous HPCs");
  run_cmd->add_option("--single-h", run_args.h, "combinatorics: HPCs of a single classifier");
  run_cmd->add_flag("--iterations", run_args.include_iterations, "keep per-iteration MTD records");
  run_cmd->add_flag("--print", run_args.print, "also print the report to stdout");

  std::string report_path, figure, plot_out;
  auto* plot_cmd = app.add_subcommand("plot-data", "project a report onto tidy series,x,y CSV");
  plot_cmd->add_option("report", report_path, "report JSON")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--figure", figure, "figure id")->required();
  plot_cmd->add_option("--out", plot_out, "CSV path (default: stdout)");

  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate-config", "check a config file and print it with defaults resolved");
  validate_cmd->add_option("file", validate_path, "JSON config file")->required()->check(CLI::ExistingFile);

  std::size_t gen_benign = 300, gen_malware = 300;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("generate", "write a synthetic dataset as perf CSV");
  gen_cmd->add_option("--benign", gen_benign, "benign programs");
  gen_cmd->add_option("--malware", gen_malware, "malware programs");
  gen_cmd->add_option("--seed", gen_seed, "generator seed");
  gen_cmd->add_option("--out", gen_out, "CSV path (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return do_run(run_args);
    if (*plot_cmd) return do_plot(report_path, figure, plot_out);
    if (*validate_cmd) return do_validate(validate_path);
    if (*gen_cmd) return do_generate(gen_benign, gen_malware, gen_seed, gen_out);
  } catch (const Error& e) {
    std::cerr << "hmdlab: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "hmdlab: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
