// lsm: landslide susceptibility pipeline driver.
#include "lsm/common.hpp"
#include "lsm/pipeline.hpp"

#include <CLI11.hpp>
#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Landslide susceptibility mapping pipeline"};
  app.require_subcommand(1, 1);
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  for (const auto& name : lsm::stage_names()) {
    auto* sub = app.add_subcommand(name, name == "all" ? "run ingest through report" : "run the " + name + " stage");
    sub->add_option("--config", config, name == "synth" ? "scene config (JSON, optional)" : "pipeline config (JSON)")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--out", out, "output directory");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  const CLI::App* sub = app.get_subcommands().front();
  lsm::StageOptions opt;
  if (sub->count("--seed")) opt.seed = seed;
  if (sub->count("--out")) opt.out = out;
  try {
    lsm::run_stage(sub->get_name(), config, opt);
  } catch (const lsm::ValidationError& e) {
    std::cerr << "[lsm] error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "[lsm] error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
