#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pbo/harness.hpp"

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& list) {
  std::vector<std::uint64_t> seeds;
  std::string text = list;
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream fields(text);
  std::string field;
  while (fields >> field)
    seeds.push_back(static_cast<std::uint64_t>(
        pbo::detail::parse_integer(field, "option: --seed")));
  if (seeds.empty()) throw pbo::ParseError("option: --seed needs at least one seed");
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pbopt — policy-based optimization of multilayer dielectric mirrors"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "Run the configured experiment over its seeds");
  std::string config_path;
  run_cmd->add_option("config", config_path, "Experiment config file")->required();
  std::string seed_list;
  run_cmd->add_option("--seed", seed_list, "Override the seed list (comma-separated)");
  long budget = -1;
  run_cmd->add_option("--budget", budget, "Override the evaluation budget");
  int population = 0;
  run_cmd->add_option("--population", population, "Override the population size");
  std::string output_dir;
  run_cmd->add_option("--output", output_dir, "Override the output directory");
  int threads = -1;
  run_cmd->add_option("--threads", threads, "Override the evaluation thread count");

  run_cmd->callback([&] {
    auto config = pbo::parse_config_file(config_path);
    if (!seed_list.empty()) config.seeds = parse_seed_list(seed_list);
    if (population > 0) {
      config.pbo.population = population;
      if (budget < 0 && !config.budget_explicit)
        config.pbo.budget = 10000 - 10000 % static_cast<long>(population);
    }
    if (budget >= 0) config.pbo.budget = budget;
    if (!output_dir.empty()) config.output_dir = output_dir;
    if (threads >= 0) config.pbo.threads = threads;

    const auto artifacts = pbo::run_experiment(config);
    for (const auto& outcome : artifacts.outcomes)
      std::cout << "seed " << outcome.seed << ": best cost "
                << pbo::format_number(outcome.best_cost) << ", reflectance mean "
                << pbo::format_number(outcome.mean_rho) << " min "
                << pbo::format_number(outcome.min_rho) << " max "
                << pbo::format_number(outcome.max_rho) << "\n";
    std::cout << "aggregate: " << artifacts.aggregate_file << "\n";
  });

  auto* eval_cmd = app.add_subcommand("evaluate", "Score a stack file over a wavelength grid");
  std::string stack_path;
  eval_cmd->add_option("stackfile", stack_path, "Stack description file")->required();
  double lmin = 300, lmax = 500;
  int samples = 101;
  eval_cmd->add_option("--lmin", lmin, "Grid start, nm");
  eval_cmd->add_option("--lmax", lmax, "Grid end, nm");
  eval_cmd->add_option("--samples", samples, "Grid sample count");
  std::string spectrum_out;
  eval_cmd->add_option("--out", spectrum_out, "Write the spectrum CSV here");

  eval_cmd->callback([&] {
    pbo::SpectrumGrid<double> grid{lmin, lmax, samples};
    const auto evaluation = pbo::evaluate_stack(stack_path, grid, spectrum_out);
    std::cout << "mean " << pbo::format_number(evaluation.mean_rho) << " min "
              << pbo::format_number(evaluation.min_rho) << " max "
              << pbo::format_number(evaluation.max_rho) << "\n";
  });

  auto* agg_cmd = app.add_subcommand("aggregate", "Rebuild aggregate.csv from per-seed histories");
  std::string dir;
  agg_cmd->add_option("dir", dir, "Directory holding history_seed*.csv files")->required();
  agg_cmd->callback([&] { std::cout << pbo::aggregate_directory(dir) << "\n"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const pbo::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "fault: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
