#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "gibbslab/ctmc.hpp"
#include "gibbslab/dynamics.hpp"
#include "gibbslab/gibbs.hpp"
#include "gibbslab/lattice.hpp"

namespace gibbslab {

std::uint64_t splitmix64(std::uint64_t& state);
// Stream seed for one replica, derived from the root seed by counter split.
std::uint64_t replica_stream(std::uint64_t root_seed, std::uint64_t replica);

// Initial-law sampler descriptor.
struct InitialLaw {
  enum class Kind { point_mass, uniform_product, product, exact };
  Kind kind = Kind::uniform_product;
  Configuration eta0;              // point_mass
  std::vector<double> site_law;    // product: one weight per spin value
  ProbVector exact_law;            // exact: inversion sampling over states
  int q = 2;

  static InitialLaw point(Configuration eta);
  static InitialLaw uniform(int q);
  static InitialLaw product(int q, std::vector<double> site_law);
  static InitialLaw from_exact(ProbVector law, int q);

  Configuration sample(const Torus& geom, std::mt19937_64& rng) const;
};

struct SimulationRun {
  RateFamily rates;
  Torus torus{std::vector<int>{1}};
  InitialLaw law;
  double horizon = 0.0;
  int replicas = 1;
  std::uint64_t seed = 0;
  bool log_events = false;
};

struct EventLogEntry {
  double time;
  int site;
  Spin value;
};

struct GillespieResult {
  Configuration final_state;
  std::vector<EventLogEntry> log;
  bool absorbed = false;
  double absorbed_at = 0.0;
  std::uint64_t events = 0;
};

// Event-driven exact-in-law sampling with a Fenwick tree over the per-rule
// translate slots; local rate refresh after every applied update.
class GillespieEngine {
 public:
  GillespieEngine(const RateFamily& rates, const Torus& geom);

  void reset(const Configuration& eta0);
  const Configuration& state() const { return state_; }
  double time() const { return time_; }
  double total_rate() const;
  // Advances to the given time; returns false if the process absorbed.
  bool advance_to(double t, std::mt19937_64& rng, std::vector<EventLogEntry>* log = nullptr,
                  std::uint64_t* events = nullptr);
  // Applies exactly one event; returns the waiting time, nullopt when absorbed.
  std::optional<double> advance_one(std::mt19937_64& rng);

 private:
  bool do_event(std::mt19937_64& rng, std::vector<EventLogEntry>* log);
  void refresh_slot(std::size_t slot);
  void fenwick_set(std::size_t i, double value);
  double fenwick_total() const;
  std::size_t fenwick_sample(double target) const;
  void rebuild();

  const RateFamily* rates_;
  Torus geom_;
  struct Slot {
    const UpdateRule* rule;
    std::vector<int> dep;
    std::vector<int> shape;
  };
  std::vector<Slot> slots_;
  std::vector<std::vector<std::uint32_t>> touching_;  // site -> slots to refresh
  std::vector<double> weight_, tree_;
  Configuration state_;
  double time_ = 0.0;
  std::uint64_t since_rebuild_ = 0;
};

GillespieResult gillespie_run(const SimulationRun& run, const Configuration& eta0,
                              std::uint64_t replica = 0);

struct EmpiricalMarginal {
  Window window;
  int q = 2;
  std::uint64_t replicas = 0;
  std::vector<std::uint64_t> counts;  // per window configuration

  std::vector<double> frequencies() const;
};

EmpiricalMarginal ensemble_window_marginal(const SimulationRun& run, const Window& w, double t);
// One trajectory per replica with snapshots at the given increasing times.
std::vector<EmpiricalMarginal> ensemble_window_marginals(const SimulationRun& run,
                                                         const Window& w,
                                                         std::span<const double> times);
std::vector<EmpiricalMarginal> ensemble_window_marginals_ref(const SimulationRun& run,
                                                             const Window& w,
                                                             std::span<const double> times);

// Cross-ratio residual of empirical single-site conditionals against the
// specification; patterns below the count floor are skipped.
double attractor_residual(const EmpiricalMarginal& emp, const Specification& spec,
                          std::uint64_t min_count = 30);

// Time-averaged state occupation of one long trajectory (enumerable tori).
ProbVector occupation_average(const RateFamily& rates, const Torus& geom,
                              const Configuration& eta0, std::uint64_t n_events,
                              std::uint64_t seed);

}  // namespace gibbslab
