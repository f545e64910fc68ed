#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "superloc/scenario.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Equivariant super-localization: scenario runner"};
  app.require_subcommand(1, 1);

  std::string scenario_path, json_out;
  std::optional<double> tol;
  bool quiet = false;

  struct Entry {
    std::string name, help;
    superloc::Command cmd;
  };
  const std::vector<Entry> commands{
      {"localize", "evaluate the super and classical localization formulas", superloc::Command::Localize},
      {"oracle", "integrate numerically and run the super-Stokes checks", superloc::Command::Oracle},
      {"compare", "check localization against the oracle and the closed form", superloc::Command::Compare},
      {"brst-check", "run the BRST, ADHM and bookkeeping checks", superloc::Command::BrstCheck},
  };
  std::map<CLI::App*, superloc::Command> by_app;
  for (const auto& [name, help, cmd] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--scenario", scenario_path, "scenario JSON file")->required();
    sub->add_option("--tol", tol, "tolerance overriding the scenario's");
    sub->add_option("--json", json_out, "write the JSON report here");
    sub->add_flag("--quiet", quiet, "suppress the text summary");
    by_app[sub] = cmd;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  superloc::Command cmd = superloc::Command::Localize;
  for (const auto& [sub, c] : by_app)
    if (sub->parsed()) cmd = c;

  try {
    const superloc::Scenario scenario = superloc::load_scenario(scenario_path);
    const superloc::Report report = superloc::run_command(scenario, cmd, tol);
    if (!json_out.empty()) {
      std::ofstream out(json_out, std::ios::binary);
      if (!out) {
        std::cerr << "superloc: cannot write " << json_out << "\n";
        return 3;
      }
      out << report.to_json().dump(2) << "\n";
    }
    if (!quiet) std::cout << report.summary();
    return report.exit_code();
  } catch (const superloc::Error& e) {
    std::cerr << "superloc: " << e.what() << "\n";
    return e.code() == superloc::ErrorCode::SchemaError ? 2 : 3;
  } catch (const superloc::ComputationError& e) {
    std::cerr << "superloc: ComputationError: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "superloc: ComputationError: " << e.what() << "\n";
    return 3;
  }
}
