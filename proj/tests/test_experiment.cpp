#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hmdlab/experiment.hpp"
#include "support.hpp"

using namespace hmdlab;
using hmdlab::testing::error_kind;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Small enough to run every recipe in a few seconds.
ExperimentConfig small(Recipe r) {
  ExperimentConfig c;
  c.recipe = r;
  c.dataset.train_per_class = 30;
  c.dataset.test_per_class = 10;
  c.dataset.probe_per_class = 20;
  c.seeds = {1, 2};
  c.classifier.network.epochs = 60;
  c.sweep.n_groups = 3;
  c.sweep.sizes = {2, 3};
  c.sweep.importance_trees = 3;
  c.combinatorics.sweep_h_t = {4, 20, 100};
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("recipe names") {
  CHECK(recipe_names().size() == 8);
  for (const auto& n : recipe_names()) CHECK(to_string(parse_recipe(n)) == n);
  CHECK(error_kind([] { parse_recipe("fig11"); }) == ErrorKind::kConfiguration);
}

TEST_CASE("config: defaults, overlay and round trip") {
  const ExperimentConfig d;
  d.validate();
  CHECK(d.seeds.size() == 5);
  CHECK(d.dataset.train_per_class == 300);
  CHECK(d.dataset.test_per_class == 50);

  const auto c = config_from_json(json::parse(R"({
    "recipe": "mtd",
    "seeds": [3, 9],
    "algos": ["decision_tree"],
    "attack": {"epsilon": 0.25, "coupling": {"branch-misses": {"instructions": 4, "branch_instructions": 2}}},
    "mtd": {"groups": [["cpu-cycles"], ["bus-cycles", "page-faults"]], "policy": "priority"},
    "network": {"hidden": [4, 4]}
  })"));
  CHECK(c.recipe == Recipe::kMtd);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 9});
  CHECK(c.algos == std::vector<Algo>{Algo::kDecisionTree});
  CHECK(c.budget.epsilon == 0.25);
  CHECK(c.budget.coupling.at(hpc::kBranchMisses).instructions == 4.0);
  CHECK(c.mtd_groups.size() == 2);
  CHECK(c.mtd_policy == SelectionPolicy::Kind::kPriority);
  CHECK(c.classifier.network.hidden == std::vector<std::size_t>{4, 4});
  // Untouched fields keep their defaults.
  CHECK(c.dataset.train_per_class == 300);
  CHECK(c.victim_counters == d.victim_counters);

  CHECK(to_json(config_from_json(to_json(c))) == to_json(c));
  CHECK(to_json(config_from_json(to_json(d))) == to_json(d));
}

TEST_CASE("config: rejections") {
  auto kind = [](const char* text) { return error_kind([&] { config_from_json(json::parse(text)).validate(); }); };
  CHECK(kind(R"({"recipies": "mtd"})") == ErrorKind::kConfiguration);
  CHECK(kind(R"({"attack": {"epsilon": 1.5}})") == ErrorKind::kConfiguration);
  CHECK(kind(R"({"attack": {"controllable": ["cpu-cycles"]}})") == ErrorKind::kConfiguration);
  CHECK(kind(R"({"mtd": {"groups": [["cpu-cycles"]]}})") == ErrorKind::kConfiguration);
  CHECK(kind(R"({"mtd": {"groups": [["cpu-cycles"], ["cpu-cycles"]]}})") == ErrorKind::kConfiguration);
  CHECK(kind(R"({"mtd": {"policy": "round-robin"}})") == ErrorKind::kConfiguration);
  CHECK(kind(R"({"seeds": []})") == ErrorKind::kConfiguration);
  CHECK(kind(R"({"seeds": [1, 1]})") == ErrorKind::kConfiguration);
  CHECK(kind(R"({"dataset": {"source": "csv"}})") == ErrorKind::kConfiguration);
  CHECK(kind(R"({"combinatorics": {"h_t": 3, "r_max": 4}})") == ErrorKind::kConfiguration);
  CHECK(kind(R"({"sweep": {"sizes": [1]}})") == ErrorKind::kConfiguration);
  CHECK(kind(R"({"tree": {"depth": 3}})") == ErrorKind::kConfiguration);

  TempDir dir("hmdlab-config-test");
  CHECK(error_kind([&] { load_config(dir.path / "missing.json"); }) == ErrorKind::kIo);
  std::ofstream(dir.path / "broken.json") << "{ \"recipe\": ";
  CHECK(error_kind([&] { load_config(dir.path / "broken.json"); }) == ErrorKind::kParse);
  std::ofstream(dir.path / "ok.json") << R"({"recipe": "combinatorics", "combinatorics": {"h_t": 12}})";
  CHECK(load_config(dir.path / "ok.json").combinatorics.h_t == 12);
}

TEST_CASE("combinatorics recipe") {
  auto c = small(Recipe::kCombinatorics);
  const auto r = run(c);
  CHECK(r.results.at("report").at("n_h").at("exact") == "6195");
  CHECK(r.results.at("sweep").at("points").size() == 3);
  const auto j = r.to_json();
  CHECK(j.at("format") == "hmdlab.report");
  CHECK(j.at("version") == 1);
  CHECK(j.at("tool_version") == kToolVersion);
  CHECK(j.at("timing").contains("wall_clock_seconds"));
  CHECK(j.at("config") == to_json(c));

  const auto fig6 = plot_data(j, "fig6");
  REQUIRE(fig6.size() == 3);
  CHECK(fig6[2].x == "100");
  CHECK(fig6[2].y == 4087975.0);
  CHECK(plot_data(j, "fig7").size() == 3);
  CHECK(error_kind([&] { plot_data(j, "fig8"); }) == ErrorKind::kMapping);
  CHECK(error_kind([&] { plot_data(j, "fig99"); }) == ErrorKind::kMapping);
  CHECK(error_kind([&] { plot_data(json::object(), "fig6"); }) == ErrorKind::kParse);
}

TEST_CASE("every recipe runs, is deterministic and projects onto its figures") {
  const std::vector<std::pair<Recipe, std::vector<std::string>>> cases = {
      {Recipe::kBaseline, {"fig2", "fig3", "fig4"}}, {Recipe::kAttack, {"fig2", "fig3", "fig4"}},
      {Recipe::kMtd, {"fig8", "fig9", "fig10"}},    {Recipe::kPoolSweep, {"fig11"}},
      {Recipe::kPrioritySweep, {"fig12"}},          {Recipe::kMixed, {"fig14"}},
      {Recipe::kResilience, {"fig15"}},
  };
  for (const auto& [recipe, figures] : cases) {
    CAPTURE(to_string(recipe));
    const auto c = small(recipe);
    const auto a = run(c);
    const auto b = run(c);
    CHECK(a.results.dump() == b.results.dump());
    CHECK(a.results.at("per_seed").size() == 2);
    const auto j = a.to_json();
    for (const auto& f : figures) {
      CAPTURE(f);
      const auto rows = plot_data(j, f);
      CHECK(!rows.empty());
      std::ostringstream csv;
      write_plot_csv(rows, csv);
      CHECK(csv.str().rfind("series,x,y\n", 0) == 0);
    }
    const auto other = recipe == Recipe::kMixed ? "fig15" : "fig14";
    CHECK(error_kind([&] { plot_data(j, other); }) == ErrorKind::kMapping);
  }
}

TEST_CASE("report contents") {
  SUBCASE("attack") {
    const auto r = run(small(Recipe::kAttack));
    const auto& s = r.results.at("per_seed")[0].at("algos").at("neural_network");
    CHECK(s.contains("clean"));
    CHECK(s.contains("attacked"));
    CHECK(s.at("surrogate").at("mean_malware_score_attacked").get<double>() <=
          s.at("surrogate").at("mean_malware_score_clean").get<double>());
    // Attacks add events only to malware, so benign rows keep their outcomes.
    const auto& clean = s.at("clean").at("confusion");
    const auto& att = s.at("attacked").at("confusion");
    CHECK(clean.at("tn") == att.at("tn"));
    CHECK(clean.at("fp") == att.at("fp"));
  }
  SUBCASE("mtd") {
    auto c = small(Recipe::kMtd);
    c.include_iterations = true;
    const auto r = run(c);
    const auto& s = r.results.at("per_seed")[0].at("algos").at("decision_tree");
    const auto& m = s.at("mtd");
    CHECK(m.at("pass").get<std::uint64_t>() + m.at("fail").get<std::uint64_t>() == 20 * 20);
    CHECK(m.at("iterations").size() == 400);
    CHECK(r.results.at("aggregate").at("decision_tree").at("mtd").at("precision").at("n") == 2);
  }
  SUBCASE("resilience") {
    // Restoration needs a properly trained victim; the tiny network of small() extrapolates poorly.
    auto c = small(Recipe::kResilience);
    c.classifier = ClassifierOptions{};
    c.dataset.train_per_class = 80;
    const auto r = run(c);
    const auto& levels = r.results.at("aggregate").at("levels");
    REQUIRE(levels.size() == 3);
    CHECK(levels[0].at("extra_branch_misses") == 10'000'000);
    CHECK(levels[2].at("extra_branch_misses") == 40'000'000);
    for (const auto& l : r.results.at("per_seed")[0].at("levels")) {
      CHECK(l.at("mtd_accuracy").get<double>() >= l.at("attacked_accuracy").get<double>());
    }
  }
  SUBCASE("pool sweep") {
    const auto r = run(small(Recipe::kPoolSweep));
    CHECK(r.results.at("policy") == "uniform");
    const auto& seed = r.results.at("per_seed")[0];
    REQUIRE(seed.at("grouping").size() == 3);
    CHECK(seed.at("grouping")[0].contains("counters"));
    CHECK(r.results.at("aggregate").at("decision_tree").size() == 2);
  }
}

TEST_CASE("csv input") {
  TempDir dir("hmdlab-csv-test");
  write_perf_csv(generate_synthetic_dataset(default_profile(), 25, 25, 3), dir.path / "d.csv");
  auto c = small(Recipe::kBaseline);
  c.dataset.source = "csv";
  c.dataset.csv_path = dir.path / "d.csv";
  const auto r = run(c);
  CHECK(r.results.at("per_seed").size() == 2);
  c.dataset.csv_path = dir.path / "nope.csv";
  CHECK(error_kind([&] { run(c); }) == ErrorKind::kIo);
}

TEST_CASE("write_report") {
  TempDir dir("hmdlab-report-test");
  const auto r = run(small(Recipe::kCombinatorics));
  const auto path = write_report(r, dir.path / "nested");
  CHECK(path == dir.path / "nested" / "combinatorics.json");
  std::ifstream in(path);
  const auto j = json::parse(in);
  CHECK(j.at("results") == r.results);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path / "nested")) ++files;
  CHECK(files == 1);

  // The output directory is a plain file: nothing gets written.
  std::ofstream(dir.path / "blocker") << "x";
  CHECK(error_kind([&] { write_report(r, dir.path / "blocker"); }) == ErrorKind::kIo);
  // The report name is taken by a directory: the rename fails and the temp file is removed.
  fs::create_directories(dir.path / "taken" / "combinatorics.json" / "x");
  CHECK_THROWS(write_report(r, dir.path / "taken"));
  CHECK(!fs::exists(dir.path / "taken" / "combinatorics.json.partial"));
}

}  // TEST_SUITE
