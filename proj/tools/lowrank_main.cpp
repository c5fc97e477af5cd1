#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lowrank/runner.hpp"

namespace {
constexpr const char* kVersion = "lowrank 1.0.0";
}

int main(int argc, char** argv) {
  CLI::App app{"Low-rank gradient training experiments: streaming batch PCA "
               "(SBPCA/SBPCAV) vs minibatch gradient descent"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(0, 1);

  std::string config_path;
  CLI::App* run = app.add_subcommand("run", "Execute the sweep described by a config file");
  run->add_option("config", config_path, "Path to a key=value experiment config")
      ->required();

  std::string report_dir;
  CLI::App* report = app.add_subcommand("report", "Summarize finished runs as a table");
  report->add_option("dir", report_dir, "Directory holding run outputs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    // CLI11 exits 0 for --help/--version; anything else is a config error.
    return code == 0 ? 0 : 1;
  }

  if (run->parsed()) return lowrank::run_command(config_path, std::cout, std::cerr);
  if (report->parsed()) return lowrank::report_command(report_dir, std::cout, std::cerr);

  std::cout << app.help();
  return 0;
}
