#include <twss/cli.hpp>

int main(int argc, char** argv) {
  CLI::App app{"Total-wave solution space solver for 2-D Helmholtz volume scattering"};
  app.require_subcommand(1);
  std::string config;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"solve", "factorize, solve one incident wave, write field and trace artifacts"},
      {"check", "projector, Calderon, dimension and plane-wave survival checks"},
      {"compare", "compare against the dense Lippmann-Schwinger oracle"},
      {"bench", "factorization and solve timings over several wavenumbers"},
      {"oracle", "run the dense oracle alone"},
  };
  for (const auto& [name, help] : commands)
    app.add_subcommand(name, help)->add_option("config", config, "INI config file")->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : twss::cli::kConfigError;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  return twss::cli::run_command(cmd, config, std::cout, std::cerr);
}
