#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gibbslab/montecarlo.hpp"

namespace gibbslab::cli {

struct Tolerances {
  double stationarity = 1e-10;
  double dlr = 1e-12;
  double consistency = 1e-12;
  double reversal = 1e-12;
  double oscillation = 1e-10;
  double switching = 1e-10;
};

struct FamilySpec {
  std::string type;  // heat_bath | cyclic | file
  double weight = 1.0;
  double kappa = 1.0;
  std::filesystem::path path;
};

struct InitialSpec {
  std::string kind = "uniform";  // uniform | point | product
  std::uint64_t state_index = 0;
  std::vector<double> weights;
};

struct NuSpec {
  std::string kind = "product";  // product | transfer | exact
  std::vector<double> weights;
  double beta = 0.0;
};

struct ExperimentConfig {
  // model
  int q = 2;
  std::vector<int> torus_sides;
  double beta = 1.0;
  std::string potential_kind;  // zero | ising | potts | file | inline
  double coupling = 1.0;
  double field = 0.0;
  std::filesystem::path potential_path;
  std::string potential_inline;  // JSON text of an inline potential

  std::vector<FamilySpec> families;

  std::string task;
  std::uint64_t seed = 0;
  int workers = 0;
  std::filesystem::path out_dir = "out";
  Tolerances tol;

  // task sections
  double evolve_t_max = 5.0;
  int evolve_points = 50;
  InitialSpec evolve_initial;

  int entropy_n_max = 2;
  NuSpec entropy_nu;
  std::string entropy_mu = "torus";  // torus | transfer

  std::string reverse_output = "reversed_rates.json";

  double sim_horizon = 20.0;
  int sim_replicas = 1000;
  std::vector<double> sim_times;
  int sim_window_half = 1;
  InitialSpec sim_initial;
  bool sim_event_log = false;
  std::uint64_t sim_min_count = 30;

  std::string raw_text;  // verbatim config, hashed into the manifest
};

struct ValidationResult {
  std::optional<ExperimentConfig> config;
  std::vector<std::string> errors;
  bool ok() const { return config.has_value() && errors.empty(); }
};

// Full structural validation; collects every problem instead of failing fast.
ValidationResult validate(const std::string& config_text,
                          const std::filesystem::path& base_dir);
ValidationResult validate(const std::string& config_text,
                          const std::filesystem::path& base_dir,
                          const std::string& fallback_task);

// Exit codes: 0 ok, 1 checks failed, 2 invalid config, 3 capacity, 4 numeric contract.
int run_experiment(const ExperimentConfig& config);

int main_entry(int argc, const char* const* argv);

}  // namespace gibbslab::cli
