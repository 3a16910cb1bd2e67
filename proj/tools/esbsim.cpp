// esbsim: run scenarios, list builtins, classify task relationships, select
// barrier gains, and run the acceptance suite.
//
// Exit codes: 0 ok, 2 input error, 3 solver error, 4 acceptance failure.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "esb/acceptance.hpp"
#include "esb/gamma_select.hpp"
#include "esb/relationships.hpp"
#include "esb/scenario_json.hpp"

namespace {

constexpr int kExitInput = 2;
constexpr int kExitSolver = 3;
constexpr int kExitAcceptance = 4;

bool is_builtin(const std::string& name) {
  for (const auto& [id, desc] : esb::builtin_scenario_list())
    if (id == name) return true;
  return false;
}

// Loads a builtin by name or a JSON file by path, applies --override patches,
// and re-validates the patched document.
esb::ScenarioDoc load_doc(const std::string& source,
                          const std::vector<std::string>& overrides) {
  esb::json j;
  if (is_builtin(source)) {
    j = esb::scenario_doc_to_json(esb::builtin_scenario(source));
  } else {
    std::ifstream in(source);
    if (!in) throw esb::ScenarioParseError("/", "cannot read " + source);
    try {
      j = esb::json::parse(in);
    } catch (const esb::json::exception& e) {
      throw esb::ScenarioParseError("/", e.what());
    }
  }
  for (const auto& ov : overrides) esb::apply_override(j, ov);
  return esb::parse_scenario_doc(j);
}

esb::json trace_to_json(const esb::Scenario& sc,
                        const std::vector<esb::TraceRecord>& trace) {
  const auto cols = esb::trace_csv_header(sc, trace);
  std::ostringstream csv;
  esb::write_trace_csv(csv, sc, trace);
  esb::json rows = esb::json::array();
  std::string line;
  std::istringstream is(csv.str());
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    esb::json row;
    std::istringstream ls(line);
    std::string cell;
    for (const auto& col : cols) {
      std::getline(ls, cell, ',');
      if (col == "active_set" || col == "iter" || col == "rank" ||
          col == "rank_drop")
        row[col] = cell;
      else
        row[col] = std::stod(cell);
    }
    rows.push_back(row);
  }
  return rows;
}

int cmd_run(const std::string& source, const std::string& out,
            const std::vector<std::string>& overrides,
            const std::string& format) {
  const auto doc = load_doc(source, overrides);
  const auto sc = esb::compile_scenario(doc);
  const auto trace = esb::run_scenario(sc);

  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) {
      std::cerr << "error: cannot write " << out << "\n";
      return kExitInput;
    }
    if (format == "json")
      os << trace_to_json(sc, trace).dump(2) << "\n";
    else
      esb::write_trace_csv(os, sc, trace);
  }
  std::cout << esb::summarize_trace(sc, trace).dump(2) << "\n";
  return 0;
}

int cmd_scenarios(const std::string& format) {
  const auto list = esb::builtin_scenario_list();
  if (format == "json") {
    esb::json j = esb::json::array();
    for (const auto& [id, desc] : list)
      j.push_back({{"id", id}, {"description", desc}});
    std::cout << j.dump(2) << "\n";
  } else {
    for (const auto& [id, desc] : list)
      std::cout << id << "  " << desc << "\n";
  }
  return 0;
}

int cmd_classify(const std::string& source,
                 const std::vector<std::string>& overrides,
                 const std::vector<std::string>& configs,
                 const std::string& format) {
  const auto doc = load_doc(source, overrides);
  const auto sc = esb::compile_scenario(doc);

  std::vector<esb::Vec> qs;
  if (configs.empty()) {
    qs.push_back(sc.initial_state.q);
  } else {
    for (const auto& text : configs) {
      std::vector<double> vals;
      std::istringstream is(text);
      std::string cell;
      while (std::getline(is, cell, ',')) vals.push_back(std::stod(cell));
      if (static_cast<int>(vals.size()) != sc.chain.dof())
        throw esb::ScenarioParseError("/", "--q needs " +
                                               std::to_string(sc.chain.dof()) +
                                               " comma-separated values");
      qs.push_back(Eigen::Map<const esb::Vec>(
          vals.data(), static_cast<Eigen::Index>(vals.size())));
    }
  }

  esb::json rows = esb::json::array();
  for (const auto& q : qs) {
    for (size_t i = 0; i < sc.tasks.size(); ++i) {
      for (size_t j = i + 1; j < sc.tasks.size(); ++j) {
        esb::json row;
        row["task_i"] = sc.tasks[i].id;
        row["task_j"] = sc.tasks[j].id;
        row["q"] = std::vector<double>(q.data(), q.data() + q.size());
        try {
          const auto rel =
              esb::classify_pair(sc.tasks[i], sc.tasks[j], sc.chain, q);
          row["relationship"] = esb::to_string(rel.classification);
          row["gradient_angle_rad"] = rel.gradient_angle;
        } catch (const std::domain_error& e) {
          row["relationship"] = "undefined";
          row["error"] = e.what();
        }
        rows.push_back(row);
      }
    }
  }

  if (format == "json") {
    std::cout << rows.dump(2) << "\n";
  } else {
    for (const auto& row : rows) {
      std::cout << row.at("task_i").get<std::string>() << " vs "
                << row.at("task_j").get<std::string>() << " at q=[";
      const auto qv = row.at("q").get<std::vector<double>>();
      for (size_t k = 0; k < qv.size(); ++k)
        std::cout << (k ? "," : "") << qv[k];
      std::cout << "]: " << row.at("relationship").get<std::string>();
      if (row.contains("gradient_angle_rad"))
        std::cout << " (angle " << row.at("gradient_angle_rad").get<double>()
                  << " rad)";
      if (row.contains("error"))
        std::cout << " (" << row.at("error").get<std::string>() << ")";
      std::cout << "\n";
    }
  }
  return 0;
}

int cmd_gamma_select(const std::string& source,
                     const std::vector<std::string>& overrides,
                     unsigned seed) {
  const auto doc = load_doc(source, overrides);
  if (!doc.dynamics_enabled) {
    std::cerr << "error: gamma-select needs a scenario with dynamics "
                 "enabled\n";
    return kExitInput;
  }
  const auto sc = esb::compile_scenario(doc);
  // Gains are selected for the barriers the controller enforces without
  // slack.  Goal-type rows carry a slack variable, so their boundaries need
  // not be viable under the torque budget; when the scenario marks some
  // tasks safety-critical, restrict the selection to those.
  std::vector<esb::EsbTask> hard;
  std::vector<std::string> ids;
  for (const auto& t : sc.tasks)
    if (t.safety_critical) hard.push_back(t);
  const auto& selected = hard.empty() ? sc.tasks : hard;
  for (const auto& t : selected) ids.push_back(t.id);
  esb::GammaSamplingConfig cfg;
  cfg.seed = seed;
  const auto result = esb::select_gammas(selected, sc.chain, sc.u_max, cfg);
  esb::json j;
  j["task_ids"] = ids;
  j["gammas"] = std::vector<double>(
      result.gammas.data(), result.gammas.data() + result.gammas.size());
  j["cap"] = result.cap;
  j["at_cap"] = result.feasible && !result.gammas.size()
                    ? false
                    : (result.feasible &&
                       result.gammas.maxCoeff() >= result.cap);
  if (result.feasible && result.gammas.size() &&
      result.gammas.maxCoeff() >= result.cap)
    j["note"] = "unbounded";
  j["samples_used"] = result.samples_used;
  j["min_margin"] = result.min_margin;
  j["feasible"] = result.feasible;
  std::cout << j.dump(2) << "\n";
  return result.feasible ? 0 : kExitSolver;
}

int cmd_verify(const std::string& suite, unsigned seed) {
  const auto results = esb::run_acceptance_suite(suite == "full", seed);
  int failures = 0;
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << r.index
              << ": " << r.name << " [" << r.detail << "]\n";
    if (!r.pass) ++failures;
  }
  std::cout << (failures ? "VERIFY: FAIL\n" : "VERIFY: PASS\n");
  return failures ? kExitAcceptance : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prioritized set-based task control simulator"};
  app.require_subcommand(1);

  std::string out, format = "csv", suite = "fast";
  std::vector<std::string> overrides, configs;
  unsigned seed = 2024;
  std::string scenario;

  auto* run = app.add_subcommand("run", "simulate a scenario");
  run->add_option("scenario", scenario, "builtin name or JSON file")
      ->required();
  run->add_option("--out", out, "trace output path");
  run->add_option("--override", overrides, "key.path=value patch");
  run->add_option("--format", format, "trace format")
      ->check(CLI::IsMember({"csv", "json"}));

  auto* scenarios = app.add_subcommand("scenarios", "list builtin scenarios");
  scenarios->add_option("--format", format, "output format")
      ->check(CLI::IsMember({"csv", "json"}));

  auto* classify =
      app.add_subcommand("classify", "pairwise task relationships");
  classify->add_option("scenario", scenario, "builtin name or JSON file")
      ->required();
  classify->add_option("--q", configs,
                       "configuration as comma-separated joint angles");
  classify->add_option("--override", overrides, "key.path=value patch");
  classify->add_option("--format", format, "output format")
      ->check(CLI::IsMember({"csv", "json"}));

  auto* gamma =
      app.add_subcommand("gamma-select", "select barrier gains by sampling");
  gamma->add_option("scenario", scenario, "builtin name or JSON file")
      ->required();
  gamma->add_option("--override", overrides, "key.path=value patch");
  gamma->add_option("--seed", seed, "sampling seed");

  auto* verify = app.add_subcommand("verify", "run the acceptance suite");
  verify->add_option("suite", suite, "fast or full")
      ->check(CLI::IsMember({"fast", "full"}));
  verify->add_option("--seed", seed, "seed for randomized criteria");

  app.require_subcommand(1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*run) return cmd_run(scenario, out, overrides, format);
    if (*scenarios) return cmd_scenarios(format);
    if (*classify) return cmd_classify(scenario, overrides, configs, format);
    if (*gamma) return cmd_gamma_select(scenario, overrides, seed);
    if (*verify) return cmd_verify(suite, seed);
  } catch (const esb::ScenarioParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::invalid_argument& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::runtime_error& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolver;
  }
  return 0;
}
