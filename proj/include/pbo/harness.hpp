#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pbo/format.hpp"
#include "pbo/optimizer.hpp"
#include "pbo/tmm.hpp"

namespace pbo {

template <typename Scalar = double>
struct RunConfig {
  std::string problem = "mirror-max";  // or "mirror-flat"
  MirrorProblem<Scalar> mirror;
  PboConfig<Scalar> pbo;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string output_dir = "runs";
  bool budget_explicit = false;  // whether the config file pinned the budget

  void validate() const {
    if (problem != "mirror-max" && problem != "mirror-flat")
      throw std::invalid_argument("config: problem must be mirror-max or mirror-flat");
    if (seeds.empty()) throw std::invalid_argument("config: seeds must be non-empty");
    for (std::size_t i = 0; i < seeds.size(); ++i)
      for (std::size_t j = i + 1; j < seeds.size(); ++j)
        if (seeds[i] == seeds[j]) throw std::invalid_argument("config: seeds must be distinct");
    if (output_dir.empty()) throw std::invalid_argument("config: output_dir must be non-empty");
    mirror.validate();
    pbo.validate();
  }
};

namespace detail {

inline std::string trim(std::string_view text) {
  const auto begin = text.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = text.find_last_not_of(" \t\r");
  return std::string(text.substr(begin, end - begin + 1));
}

inline bool parse_flag(const std::string& value, const std::string& where) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ParseError(where + ": expected on/off, got '" + value + "'");
}

inline long parse_integer(const std::string& value, const std::string& where) {
  long out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ParseError(where + ": expected an integer, got '" + value + "'");
  return out;
}

inline double parse_real(const std::string& value, const std::string& where) {
  try {
    return parse_number(value);
  } catch (const std::invalid_argument&) {
    throw ParseError(where + ": expected a number, got '" + value + "'");
  }
}

}  // namespace detail

// Flat `key = value` format with `#` comments. Unknown keys and invariant
// violations are reported with the file and key they came from. A budget left
// unset defaults to 10000 rounded down to a population multiple.
template <typename Scalar = double>
RunConfig<Scalar> parse_config(std::istream& in, const std::string& label = "config") {
  RunConfig<Scalar> config;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string entry = detail::trim(line);
    if (entry.empty()) continue;
    const std::string where = label + ":" + std::to_string(line_number);

    const auto equals = entry.find('=');
    if (equals == std::string::npos) throw ParseError(where + ": expected 'key = value'");
    const std::string key = detail::trim(entry.substr(0, equals));
    const std::string value = detail::trim(entry.substr(equals + 1));
    if (key.empty() || value.empty()) throw ParseError(where + ": expected 'key = value'");
    const std::string at_key = where + ": " + key;

    if (key == "problem") {
      config.problem = value;
    } else if (key == "layers") {
      config.mirror.n_l = static_cast<int>(detail::parse_integer(value, at_key));
    } else if (key == "thickness_min") {
      config.mirror.thickness_min = Scalar(detail::parse_real(value, at_key));
    } else if (key == "thickness_max") {
      config.mirror.thickness_max = Scalar(detail::parse_real(value, at_key));
    } else if (key == "alpha") {
      config.mirror.alpha = Scalar(detail::parse_real(value, at_key));
    } else if (key == "lambda_min") {
      config.mirror.grid.lambda_min = Scalar(detail::parse_real(value, at_key));
    } else if (key == "lambda_max") {
      config.mirror.grid.lambda_max = Scalar(detail::parse_real(value, at_key));
    } else if (key == "lambda_samples") {
      config.mirror.grid.samples = static_cast<int>(detail::parse_integer(value, at_key));
    } else if (key == "population") {
      config.pbo.population = static_cast<int>(detail::parse_integer(value, at_key));
    } else if (key == "elites") {
      config.pbo.elites = static_cast<int>(detail::parse_integer(value, at_key));
    } else if (key == "budget") {
      config.pbo.budget = detail::parse_integer(value, at_key);
      config.budget_explicit = true;
    } else if (key == "clip") {
      config.pbo.clip_eps = Scalar(detail::parse_real(value, at_key));
    } else if (key == "epochs") {
      config.pbo.epochs = static_cast<int>(detail::parse_integer(value, at_key));
    } else if (key == "sigma_min") {
      config.pbo.sigma_min = Scalar(detail::parse_real(value, at_key));
    } else if (key == "sigma_max") {
      config.pbo.sigma_max = Scalar(detail::parse_real(value, at_key));
    } else if (key == "covariance") {
      if (value == "auto")
        config.pbo.covariance = CovarianceMode::kAuto;
      else if (value == "full")
        config.pbo.covariance = CovarianceMode::kFull;
      else if (value == "diagonal")
        config.pbo.covariance = CovarianceMode::kDiagonal;
      else
        throw ParseError(at_key + ": expected auto, full, or diagonal");
    } else if (key == "hidden_width") {
      config.pbo.hidden_width = static_cast<int>(detail::parse_integer(value, at_key));
    } else if (key == "learning_rate") {
      config.pbo.learning_rate = Scalar(detail::parse_real(value, at_key));
    } else if (key == "whiten") {
      if (value == "population")
        config.pbo.sample_std = false;
      else if (value == "sample")
        config.pbo.sample_std = true;
      else
        throw ParseError(at_key + ": expected population or sample");
    } else if (key == "threads") {
      config.pbo.threads = static_cast<int>(detail::parse_integer(value, at_key));
    } else if (key == "progress") {
      config.pbo.progress = detail::parse_flag(value, at_key);
    } else if (key == "seeds") {
      config.seeds.clear();
      std::string list = value;
      std::replace(list.begin(), list.end(), ',', ' ');
      std::istringstream fields(list);
      std::string field;
      while (fields >> field)
        config.seeds.push_back(
            static_cast<std::uint64_t>(detail::parse_integer(field, at_key)));
    } else if (key == "output_dir") {
      config.output_dir = value;
    } else {
      throw ParseError(where + ": unknown key '" + key + "'");
    }
  }

  if (!config.budget_explicit)
    config.pbo.budget = 10000 - 10000 % static_cast<long>(config.pbo.population);
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(label + ": " + e.what());
  }
  return config;
}

template <typename Scalar = double>
RunConfig<Scalar> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file '" + path + "'");
  return parse_config<Scalar>(in, path);
}

// Applies the PBO_THREADS environment override, equivalent to `threads = N`.
template <typename Scalar>
void apply_thread_override(RunConfig<Scalar>& config) {
  if (const char* env = std::getenv("PBO_THREADS")) {
    config.pbo.threads =
        static_cast<int>(detail::parse_integer(env, "environment: PBO_THREADS"));
    if (config.pbo.threads < 0)
      throw ParseError("environment: PBO_THREADS must be >= 0");
  }
}

template <typename Scalar = double>
struct SeedOutcome {
  std::uint64_t seed = 0;
  Scalar best_cost = 0;
  StackDesign<Scalar> best_stack;
  VectorX<Scalar> best_spectrum;
  Scalar mean_rho = 0, min_rho = 0, max_rho = 0;
  std::vector<Scalar> best_history;  // best-so-far cost per evaluation
  std::vector<Scalar> mean_history;  // population mean cost per generation
};

template <typename Scalar = double>
struct RunArtifacts {
  std::vector<std::string> history_files;
  std::vector<std::string> stack_files;
  std::vector<std::string> spectrum_files;
  std::string aggregate_file;
  std::vector<SeedOutcome<Scalar>> outcomes;
};

namespace detail {

template <typename Scalar>
void write_history_csv(const std::string& path, const std::vector<Scalar>& mean_history,
                       const std::vector<Scalar>& best_history, int population) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "# gen_mean_cost is the population mean cost of each generation;\n";
  out << "# best_cost is the best cost seen up to that evaluation count.\n";
  out << "evaluations,gen_mean_cost,best_cost\n";
  for (std::size_t g = 0; g < mean_history.size(); ++g) {
    const long evaluations = static_cast<long>(g + 1) * population;
    out << format_number(evaluations) << "," << format_number(double(mean_history[g])) << ","
        << format_number(double(best_history[evaluations - 1])) << "\n";
  }
}

template <typename Scalar>
void write_spectrum_csv(const std::string& path, const SpectrumGrid<Scalar>& grid,
                        const VectorX<Scalar>& spectrum) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "lambda_nm,reflectance\n";
  for (int i = 0; i < grid.samples; ++i)
    out << format_number(double(grid.lambda(i))) << ","
        << format_number(double(spectrum(i))) << "\n";
}

struct HistoryTable {
  std::vector<long> evaluations;
  std::vector<double> gen_mean_cost;
  std::vector<double> best_cost;
};

inline HistoryTable read_history_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open history file '" + path + "'");
  HistoryTable table;
  std::string line;
  int line_number = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (trim(line) != "evaluations,gen_mean_cost,best_cost")
        throw ParseError(path + ":" + std::to_string(line_number) + ": unexpected header");
      header_seen = true;
      continue;
    }
    std::istringstream fields(line);
    std::string a, b, c;
    if (!std::getline(fields, a, ',') || !std::getline(fields, b, ',') ||
        !std::getline(fields, c))
      throw ParseError(path + ":" + std::to_string(line_number) + ": expected three columns");
    const std::string where = path + ":" + std::to_string(line_number);
    table.evaluations.push_back(parse_integer(trim(a), where));
    table.gen_mean_cost.push_back(parse_real(trim(b), where));
    table.best_cost.push_back(parse_real(trim(c), where));
  }
  if (!header_seen) throw ParseError(path + ": missing header");
  return table;
}

}  // namespace detail

// Rebuilds <dir>/aggregate.csv from every history_seed*.csv in the directory.
// lo/hi are the across-seed mean minus/plus one (population) standard
// deviation; rows must line up across seeds.
inline std::string aggregate_directory(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("history_seed", 0) == 0 && name.size() > 4 &&
        name.substr(name.size() - 4) == ".csv")
      files.push_back(entry.path().string());
  }
  if (files.empty()) throw ParseError("no history_seed*.csv files in '" + dir + "'");
  std::sort(files.begin(), files.end());

  std::vector<detail::HistoryTable> tables;
  for (const auto& file : files) {
    tables.push_back(detail::read_history_csv(file));
    if (tables.back().evaluations != tables.front().evaluations)
      throw ParseError("history files in '" + dir + "' do not share an evaluation grid");
  }

  const std::string path = (fs::path(dir) / "aggregate.csv").string();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "evaluations,avg_mean,avg_lo,avg_hi,best_mean,best_lo,best_hi\n";
  const double count = static_cast<double>(tables.size());
  for (std::size_t row = 0; row < tables.front().evaluations.size(); ++row) {
    auto stats = [&](auto field) {
      double mean = 0;
      for (const auto& t : tables) mean += (t.*field)[row];
      mean /= count;
      double var = 0;
      for (const auto& t : tables) {
        const double d = (t.*field)[row] - mean;
        var += d * d;
      }
      const double sd = std::sqrt(var / count);
      return std::pair{mean, sd};
    };
    const auto [avg_mean, avg_sd] = stats(&detail::HistoryTable::gen_mean_cost);
    const auto [best_mean, best_sd] = stats(&detail::HistoryTable::best_cost);
    out << format_number(tables.front().evaluations[row]) << ","
        << format_number(avg_mean) << "," << format_number(avg_mean - avg_sd) << ","
        << format_number(avg_mean + avg_sd) << "," << format_number(best_mean) << ","
        << format_number(best_mean - best_sd) << "," << format_number(best_mean + best_sd)
        << "\n";
  }
  return path;
}

// Runs the configured experiment once per seed and writes, per seed, the cost
// history, the best stack, and its reflectance spectrum, then the across-seed
// aggregate. Any seed failure aborts the whole experiment with the seed named.
template <typename Scalar>
RunArtifacts<Scalar> run_experiment(RunConfig<Scalar> config) {
  namespace fs = std::filesystem;
  apply_thread_override(config);
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("config: ") + e.what());
  }

  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  {
    const std::string probe = (fs::path(config.output_dir) / ".writable").string();
    std::ofstream test(probe);
    if (!test) throw std::runtime_error("output directory '" + config.output_dir +
                                        "' is not writable");
    test.close();
    fs::remove(probe, ec);
  }

  const MirrorProblem<Scalar> problem = config.mirror;
  const bool flat = config.problem == "mirror-flat";
  auto objective = [problem, flat](const VectorX<Scalar>& thicknesses,
                                   const Eigen::VectorXi& choices) {
    return flat ? cost_flat(thicknesses, choices, problem)
                : cost_max(thicknesses, choices, problem);
  };

  RunArtifacts<Scalar> artifacts;
  for (const std::uint64_t seed : config.seeds) {
    PboConfig<Scalar> pbo_config = config.pbo;
    pbo_config.seed = seed;
    OptimizationResult<Scalar> result;
    try {
      result = run(objective, problem.space(), pbo_config);
    } catch (const std::exception& e) {
      throw std::runtime_error("seed " + std::to_string(seed) + ": " + e.what());
    }

    SeedOutcome<Scalar> outcome;
    outcome.seed = seed;
    outcome.best_cost = result.best_cost;
    outcome.best_stack = assemble_stack(result.best_physical, result.best_action.a_d, problem);
    outcome.best_spectrum = reflectance_spectrum(outcome.best_stack, problem.grid);
    outcome.mean_rho = outcome.best_spectrum.mean();
    outcome.min_rho = outcome.best_spectrum.minCoeff();
    outcome.max_rho = outcome.best_spectrum.maxCoeff();
    outcome.best_history = std::move(result.best_history);
    outcome.mean_history = std::move(result.mean_history);

    const std::string tag = "seed" + std::to_string(seed);
    const std::string history = (fs::path(config.output_dir) / ("history_" + tag + ".csv")).string();
    const std::string stack = (fs::path(config.output_dir) / ("best_stack_" + tag + ".txt")).string();
    const std::string spectrum =
        (fs::path(config.output_dir) / ("best_spectrum_" + tag + ".csv")).string();
    detail::write_history_csv(history, outcome.mean_history, outcome.best_history,
                              pbo_config.population);
    write_stack_file(stack, outcome.best_stack);
    detail::write_spectrum_csv(spectrum, problem.grid, outcome.best_spectrum);

    artifacts.history_files.push_back(history);
    artifacts.stack_files.push_back(stack);
    artifacts.spectrum_files.push_back(spectrum);
    artifacts.outcomes.push_back(std::move(outcome));
  }

  artifacts.aggregate_file = aggregate_directory(config.output_dir);
  return artifacts;
}

template <typename Scalar = double>
struct StackEvaluation {
  StackDesign<Scalar> stack;
  VectorX<Scalar> spectrum;
  Scalar mean_rho = 0, min_rho = 0, max_rho = 0;
};

// Scores a stack file over the grid; optionally writes the spectrum CSV.
template <typename Scalar = double>
StackEvaluation<Scalar> evaluate_stack(const std::string& stack_path,
                                       const SpectrumGrid<Scalar>& grid,
                                       const std::string& spectrum_path = {}) {
  StackEvaluation<Scalar> evaluation;
  evaluation.stack = read_stack_file<Scalar>(stack_path);
  evaluation.spectrum = reflectance_spectrum(evaluation.stack, grid);
  evaluation.mean_rho = evaluation.spectrum.mean();
  evaluation.min_rho = evaluation.spectrum.minCoeff();
  evaluation.max_rho = evaluation.spectrum.maxCoeff();
  if (!spectrum_path.empty()) detail::write_spectrum_csv(spectrum_path, grid, evaluation.spectrum);
  return evaluation;
}

}  // namespace pbo
