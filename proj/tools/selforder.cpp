#include "selforder/app.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace selforder;
  CLI::App cli{"Self-ordering of trapped particles in a multimode cavity"};
  cli.require_subcommand(1);
  std::string config_path, out_dir;
  int workers = 0;
  std::uint64_t seed = 0;
  bool seed_given = false;

  for (const char* name : {"couplings", "steady", "evolve", "mcwf", "scan"}) {
    auto* sub = cli.add_subcommand(name);
    sub->add_option("--config", config_path, "config file or bundle metadata.json")->required();
    sub->add_option("--out", out_dir, "output directory (default: config 'output')");
    sub->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { seed = s, seed_given = true; }, "RNG seed");
  }
  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? 0 : 2;
  }
  const std::string command = cli.get_subcommands().front()->get_name();
  try {
    auto cfg = config::load(config_path);
    if (workers > 0) cfg.workers = workers;
    if (seed_given) cfg.solver.seed = seed;
    const std::string dir = out_dir.empty() ? cfg.output : out_dir;
    const auto meta = app::run_command(command, cfg, dir);
    std::cout << command << ": wrote " << dir << "\n";
    if (meta.contains("results")) std::cout << meta["results"].dump(2) << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return app::exit_code_for(e);
  }
}
