// Command-line front end: generate | proposals | train | advance | eval | plot.
// Configuration precedence: config file < OWODLAB_* environment < --set flags.
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "owodlab/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"desk-scale open-world detection laboratory"};
  app.require_subcommand(1);
  app.fallthrough();  // accept global flags after the subcommand name

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "INI config file");
  app.add_option("-s,--set", overrides, "override, e.g. --set train.iterations=500");

  int (*command)(const owodlab::RunConfig&) = nullptr;
  auto sub = [&](const char* name, const char* desc, int (*fn)(const owodlab::RunConfig&)) {
    app.add_subcommand(name, desc)->callback([&command, fn] { command = fn; });
  };
  sub("generate", "render the synthetic dataset and its annotations", owodlab::cmd_generate);
  sub("proposals", "precompute class-agnostic region proposals", owodlab::cmd_proposals);
  sub("train", "train the detector on the current task", owodlab::cmd_train);
  sub("advance", "introduce the next task and finetune on exemplars", owodlab::cmd_advance);
  sub("eval", "evaluate the current checkpoint on the test split", owodlab::cmd_eval);
  sub("plot", "render loss and controller-weight charts", owodlab::cmd_plot);

  CLI11_PARSE(app, argc, argv);

  try {
    owodlab::Config cfg;
    if (!config_path.empty()) cfg = owodlab::Config::load_file(config_path);
    cfg.apply_environment();
    for (const std::string& kv : overrides) {
      const std::size_t eq = kv.find('=');
      if (eq == std::string::npos) throw owodlab::ConfigError("--set expects key=value: " + kv);
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return command(owodlab::RunConfig::from(cfg));
  } catch (const owodlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return owodlab::kExitConfigError;
  }
}
