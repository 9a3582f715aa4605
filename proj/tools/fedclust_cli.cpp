#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fedclust/datagen.hpp"
#include "fedclust/errors.hpp"
#include "fedclust/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FEDCLUST_THREADS")) {
    char* end = nullptr;
    const unsigned long cap = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0' || cap == 0) {
      throw fedclust::ConfigError(std::string("FEDCLUST_THREADS must be a positive integer, got '") + env + "'");
    }
    n = std::min<std::size_t>(n, cap);
  }
  return n;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated clustering experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  bool overwrite = false;
  auto* run = app.add_subcommand("run", "Run an experiment grid and write results.csv / results.json");
  run->add_option("--config", config_path, "JSON config file");
  run->add_option("--set", overrides, "Override a config key, e.g. run.lambda=0.5")->take_all();
  run->add_option("--out", out_dir, "Output directory (defaults to the config's output)");
  run->add_flag("--overwrite", overwrite, "Replace existing results");

  std::string summary_in;
  auto* summarize = app.add_subcommand("summarize", "Mean and std of final NMI/Kappa per grid cell");
  summarize->add_option("--in", summary_in, "results.csv")->required();

  std::size_t components = 10, per_component = 500, dim = 32;
  double separation = fedclust::DatasetSource{}.separation;
  std::uint64_t data_seed = 7;
  std::string data_out;
  auto* make_data = app.add_subcommand("make-data", "Write a Gaussian mixture as FVD");
  make_data->add_option("--components", components)->check(CLI::PositiveNumber);
  make_data->add_option("--per-component", per_component)->check(CLI::PositiveNumber);
  make_data->add_option("--dim", dim)->check(CLI::PositiveNumber);
  make_data->add_option("--separation", separation)->check(CLI::NonNegativeNumber);
  make_data->add_option("--seed", data_seed);
  make_data->add_option("--out", data_out, "Output .fvd path")->required();

  std::string convert_in, convert_out;
  auto* convert = app.add_subcommand("convert", "Convert a CSV (header row, optional 'label' column) to FVD");
  convert->add_option("--in", convert_in)->required();
  convert->add_option("--out", convert_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      auto config = fedclust::parse_config_file(config_path, overrides);
      const std::filesystem::path dir = out_dir.empty() ? config.output : out_dir;
      if (!overwrite && (std::filesystem::exists(dir / "results.csv") ||
                         std::filesystem::exists(dir / "results.json"))) {
        throw fedclust::ConfigError("results already exist in " + dir.string() +
                                    " (pass --overwrite to replace them)");
      }
      fedclust::ExecutionOptions exec;
      exec.threads = worker_count();
      const auto rows = fedclust::run_experiment(config, exec, &std::cerr);
      fedclust::write_results(dir, config, rows, overwrite);
      std::cerr << "wrote " << rows.size() << " rows to " << dir.string() << '\n';
    } else if (*summarize) {
      std::cout << fedclust::summary_to_csv(fedclust::summarize_csv(summary_in));
    } else if (*make_data) {
      const auto data = fedclust::gaussian_mixture(components, per_component, dim, separation, data_seed);
      fedclust::save_fvd(data, data_out);
      std::cerr << "wrote " << data.size() << " x " << data.dim() << " to " << data_out << '\n';
    } else if (*convert) {
      const auto data = fedclust::load_csv(convert_in);
      fedclust::save_fvd(data, convert_out);
      std::cerr << "wrote " << data.size() << " x " << data.dim() << " to " << convert_out << '\n';
    }
  } catch (const fedclust::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
