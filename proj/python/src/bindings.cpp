// Python bindings: datasets, classifiers, feature lab, attack, MTD,
// combinatorics and the experiment runner. JSON-shaped results cross the
// boundary as plain dicts and lists.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "hmdlab/attack.hpp"
#include "hmdlab/classifiers.hpp"
#include "hmdlab/combinatorics.hpp"
#include "hmdlab/error.hpp"
#include "hmdlab/experiment.hpp"
#include "hmdlab/features.hpp"
#include "hmdlab/mtd.hpp"
#include "hmdlab/trace.hpp"

namespace py = pybind11;
using namespace hmdlab;

namespace {

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

std::vector<HpcName> counters_of(const std::vector<std::string>& names) { return parse_hpc_list(names); }

// Accepts the dicts produced by Dataset.rows(): app_id and label are skipped.
CounterRow row_of(const py::dict& values) {
  CounterRow row;
  for (const auto& [k, v] : values) {
    const auto key = k.cast<std::string>();
    if (key == "app_id" || key == "label") continue;
    row.set(HpcName::parse(key), v.cast<double>());
  }
  return row;
}

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["precision"] = m.precision ? py::cast(*m.precision) : py::none();
  d["recall"] = m.recall ? py::cast(*m.recall) : py::none();
  return d;
}

std::map<std::string, double> scores_dict(const FeatureScores& s) {
  std::map<std::string, double> out;
  for (const auto& [c, v] : s.scores) out[c.str()] = v;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "hardware malware detector, adversarial attack and moving target defense lab";
  m.attr("__version__") = kToolVersion;
  m.attr("COUNTERS") = std::vector<std::string>(kHpcCatalog.begin(), kHpcCatalog.end());

  py::register_exception<Error>(m, "HmdlabError", PyExc_RuntimeError);

  py::class_<Dataset>(m, "Dataset")
      .def_static("synthetic",
                  [](std::size_t benign, std::size_t malware, std::uint64_t seed) {
                    return generate_synthetic_dataset(default_profile(), benign, malware, seed);
                  },
                  py::arg("benign"), py::arg("malware"), py::arg("seed"))
      .def_static("from_csv", [](const std::filesystem::path& p) { return parse_perf_csv(p); }, py::arg("path"))
      .def_static("from_csv_text",
                  [](const std::string& text) {
                    std::istringstream in(text);
                    return parse_perf_csv(in);
                  },
                  py::arg("text"))
      .def("to_csv_text",
           [](const Dataset& d) {
             std::ostringstream out;
             write_perf_csv(d, out);
             return out.str();
           })
      .def("split",
           [](const Dataset& d, std::size_t test_per_class, std::uint64_t seed) {
             return split_train_test(d, test_per_class, seed);
           },
           py::arg("test_per_class"), py::arg("seed"))
      .def("__len__", [](const Dataset& d) { return d.traces.size(); })
      .def_property_readonly("total_rows", &Dataset::total_rows)
      .def("count", [](const Dataset& d, const std::string& label) { return d.count(parse_label(label)); })
      .def("app_ids",
           [](const Dataset& d) {
             std::vector<std::string> ids;
             for (const auto& t : d.traces) ids.push_back(t.app_id());
             return ids;
           })
      .def("rows",
           [](const Dataset& d) {
             // One dict per iteration: counter values plus app id and label.
             py::list out;
             for (const auto& t : d.traces) {
               for (std::size_t r = 0; r < t.iterations(); ++r) {
                 py::dict row;
                 row["app_id"] = t.app_id();
                 row["label"] = std::string(to_string(t.label()));
                 for (std::size_t c = 0; c < t.width(); ++c) row[py::str(t.counters()[c].str())] = t.at(r, c);
                 out.append(row);
               }
             }
             return out;
           });

  py::class_<TrainedClassifier>(m, "Classifier")
      .def_static("train",
                  [](const std::string& algo, const Dataset& d, const std::vector<std::string>& counters,
                     std::uint64_t seed) {
                    return train_classifier(parse_algo(algo), TrainingRows::from(d), counters_of(counters), {}, seed);
                  },
                  py::arg("algo"), py::arg("dataset"), py::arg("counters"), py::arg("seed"))
      .def_static("from_json", [](const py::object& o) { return classifier_from_json(from_py(o)); })
      .def_property_readonly("algo", [](const TrainedClassifier& c) { return std::string(to_string(c.algo)); })
      .def_property_readonly("counters", [](const TrainedClassifier& c) { return hpc_names(c.view.counters); })
      .def("predict",
           [](const TrainedClassifier& c, const py::dict& row) {
             const auto p = c.predict(row_of(row));
             return py::make_tuple(std::string(to_string(p.label)), p.score);
           },
           py::arg("row"))
      .def("input_gradient",
           [](const TrainedClassifier& c, const py::dict& row, const std::string& target) {
             return input_gradient(c, row_of(row), parse_label(target));
           },
           py::arg("row"), py::arg("target") = "malware")
      .def("evaluate",
           [](const TrainedClassifier& c, const Dataset& d) { return metrics_dict(compute_metrics(evaluate(c, d))); })
      .def("to_json", [](const TrainedClassifier& c) { return to_py(to_json(c)); });

  m.def("compute_metrics",
        [](std::uint64_t tp, std::uint64_t tn, std::uint64_t fp, std::uint64_t fn) {
          return metrics_dict(compute_metrics({tp, tn, fp, fn}));
        },
        py::arg("tp"), py::arg("tn"), py::arg("fp"), py::arg("fn"));

  // feature lab
  m.def("chi2_scores", [](const Dataset& d, std::size_t k) { return scores_dict(univariate_select_k_best(d, k)); },
        py::arg("dataset"), py::arg("k") = kNumHpcs);
  m.def("importance_scores",
        [](const Dataset& d, std::size_t n_trees, std::uint64_t seed) {
          return scores_dict(feature_importance_scores(d, n_trees, seed));
        },
        py::arg("dataset"), py::arg("n_trees"), py::arg("seed"));
  m.def("correlation_matrix",
        [](const Dataset& d) {
          const auto c = correlation_matrix(d);
          return py::make_tuple(hpc_names(c.counters), c.r);
        },
        py::arg("dataset"));
  m.def("propose_groups",
        [](const Dataset& d, std::size_t n_groups, std::size_t r_max, std::size_t n_trees, std::uint64_t seed,
           double threshold) {
          const auto g = propose_hpc_groups(univariate_select_k_best(d, kNumHpcs),
                                            feature_importance_scores(d, n_trees, seed), correlation_matrix(d),
                                            n_groups, r_max, GroupingOptions{threshold});
          std::vector<std::vector<std::string>> out;
          for (const auto& grp : g.groups) out.push_back(hpc_names(grp));
          return out;
        },
        py::arg("dataset"), py::arg("n_groups"), py::arg("r_max"), py::arg("n_trees") = 20, py::arg("seed") = 1,
        py::arg("correlation_threshold") = 0.5);

  // attack
  m.def("reverse_engineer",
        [](const TrainedClassifier& victim, const Dataset& probe, const std::vector<std::string>& algos,
           std::uint64_t seed) {
          std::vector<Algo> cand;
          for (const auto& a : algos) cand.push_back(parse_algo(a));
          const LabelOracle oracle = [&](const CounterRow& row) { return victim.predict(row).label; };
          const auto rep = reverse_engineer(oracle, probe, cand, seed, victim.view.counters);
          return py::make_tuple(rep.surrogate, rep.agreement);
        },
        py::arg("victim"), py::arg("probe"), py::arg("algos") = std::vector<std::string>{"neural_network"},
        py::arg("seed") = 1);
  m.def("attack_dataset",
        [](const TrainedClassifier& surrogate, const Dataset& d, double epsilon, std::uint64_t extra_branch_misses) {
          // Camouflages every malware trace; benign traces pass through untouched.
          auto budget = AttackBudget::defaults();
          budget.epsilon = epsilon;
          Dataset out = d;
          for (auto& t : out.traces) {
            if (t.label() != Label::kMalware) continue;
            auto p = craft_perturbation(surrogate, t, budget);
            if (extra_branch_misses > 0) p = strengthen(p, extra_branch_misses, budget);
            t = inject(t, p);
          }
          return out;
        },
        py::arg("surrogate"), py::arg("dataset"), py::arg("epsilon") = 1.0, py::arg("extra_branch_misses") = 0);

  // mtd
  py::class_<Lfsr>(m, "Lfsr")
      .def(py::init<std::uint16_t>(), py::arg("seed") = 1)
      .def_static("from_seed", &lfsr_from_seed)
      .def_property_readonly("state", &Lfsr::state)
      .def("next", &Lfsr::next)
      .def("uniform_index", [](Lfsr& l, std::size_t n) { return uniform_index(l, n); }, py::arg("n"));
  m.def("classify_stream",
        [](const Dataset& train, const Dataset& test, const std::vector<std::vector<std::string>>& groups,
           const std::vector<std::string>& algos, const std::string& policy, std::size_t best, std::uint64_t seed,
           bool include_iterations) {
          std::vector<std::vector<HpcName>> g;
          for (const auto& grp : groups) g.push_back(counters_of(grp));
          std::vector<Algo> a;
          for (const auto& s : algos) a.push_back(parse_algo(s));
          if (a.size() == 1) a.resize(g.size(), a.front());
          SelectionPolicy p;
          if (policy == "priority") {
            p = SelectionPolicy::priority(best);
          } else if (policy != "uniform") {
            throw Error(ErrorKind::kConfiguration, "unknown policy '" + policy + "'");
          }
          const auto pool = design_pool(TrainingRows::from(train), g, a, p, seed);
          return to_py(to_json(classify_stream(pool, test), include_iterations));
        },
        py::arg("train"), py::arg("test"), py::arg("groups"), py::arg("algos"), py::arg("policy") = "uniform",
        py::arg("best") = 0, py::arg("seed") = 1, py::arg("include_iterations") = false);

  // combinatorics
  m.def("total_classifiers",
        [](std::uint64_t h_t, std::uint64_t r_max) {
          return py::int_(py::str(total_classifiers(h_t, r_max).decimal()));
        },
        py::arg("h_t"), py::arg("r_max"));
  m.def("total_combinations",
        [](const py::int_& n_h) {
          const std::string digits = py::str(static_cast<py::handle>(n_h));
          const auto n = BigCount::of(BigInt{digits});
          return py::int_(py::str(total_combinations(n).decimal()));
        },
        py::arg("n_h"));
  m.def("combinatorics_report",
        [](std::uint64_t h_t, std::uint64_t r_max, std::uint64_t h) {
          return to_py(to_json(combinatorics_report(h_t, r_max, h)));
        },
        py::arg("h_t") = 20, py::arg("r_max") = 4, py::arg("h") = 8);

  // experiments
  m.def("recipes", &recipe_names);
  m.def("figures", &figure_ids);
  m.def("resolve_config",
        [](const py::object& cfg) {
          const auto c = config_from_json(from_py(cfg));
          c.validate();
          return to_py(to_json(c));
        },
        py::arg("config"));
  m.def("run",
        [](const py::object& cfg) {
          const auto c = config_from_json(from_py(cfg));
          ExperimentReport rep;
          {
            py::gil_scoped_release release;
            rep = run(c);
          }
          return to_py(rep.to_json());
        },
        py::arg("config"));
  m.def("plot_data",
        [](const py::object& report, const std::string& figure) {
          std::vector<std::tuple<std::string, std::string, double>> rows;
          for (const auto& r : plot_data(from_py(report), figure)) rows.emplace_back(r.series, r.x, r.y);
          return rows;
        },
        py::arg("report"), py::arg("figure"));
}
