#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "predflow/harness/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"predflow: predictive coding, variational inference and normalizing-flow experiments"};
  app.require_subcommand(1);

  predflow::RunRequest request;
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  for (const char* name : {"train", "infer", "whiten", "compare-inference", "eval-elbo", "gen-data"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON experiment config")->required();
    sub->add_option("--seed", seed, "overrides the config's seed");
    sub->add_option("--out", out, "output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return predflow::kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  request.command = *predflow::command_from_string(sub->get_name());
  request.config = config;
  if (sub->count("--seed") > 0) request.seed = seed;
  request.out = out;
  return predflow::run_experiment(request, std::cerr);
}
