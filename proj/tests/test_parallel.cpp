#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gibbslab/ctmc.hpp"
#include "gibbslab/dynamics.hpp"
#include "gibbslab/entropy.hpp"
#include "gibbslab/montecarlo.hpp"
#include "gibbslab/parallel.hpp"

using namespace gibbslab;

namespace {

Potential ising_1d(double k) {
  Potential pot = ising_potential(1, 1.0);
  pot.beta = k;
  return pot;
}

}  // namespace

TEST_CASE("blocked reductions are identical to the serial reference") {
  auto term = [](std::size_t i) { return std::sin(static_cast<double>(i)) / (i + 1.0); };
  for (std::size_t n : {0ul, 1ul, 4095ul, 4096ul, 4097ul, 100000ul})
    CHECK(par::blocked_sum(n, term) == par::blocked_sum_ref(n, term));
}

TEST_CASE("parallel generator assembly matches the serial reference exactly") {
  const Torus t({10});
  const Potential pot = ising_1d(0.5);
  const Specification spec(pot, t);
  const RateFamily rates = mix(1.0, make_heat_bath(spec), 0.5, make_cyclic(spec, 1.0));
  const SparseGenerator a = assemble_generator(rates, t);
  const SparseGenerator b = assemble_generator_ref(rates, t);
  CHECK(a.row_ptr == b.row_ptr);
  CHECK(a.col == b.col);
  CHECK(a.val == b.val);
  CHECK(a.exit == b.exit);
}

TEST_CASE("parallel uniformization matches the serial reference exactly") {
  const Torus t({9});
  const Potential pot = ising_1d(0.4);
  const Specification spec(pot, t);
  const SparseGenerator gen = assemble_generator(make_heat_bath(spec), t);
  ProbVector nu = ProbVector::point_mass(gen.n, 17);
  const ProbVector a = evolve(nu, gen, 3.2);
  const ProbVector b = evolve_ref(nu, gen, 3.2);
  CHECK(a.p == b.p);
}

TEST_CASE("entropy kernels do not depend on the worker count") {
  const Torus t({17});
  const Potential pot = ising_1d(0.3);
  const Specification spec(pot, t);
  const RateFamily rates = make_heat_bath(spec);
  Potential alt = pot;
  alt.beta = 0.15;
  const TransferSource nu(alt);
  const TransferSource mu(pot);
  const TruncationScheme sch(t, 2);

  const int save = par::max_workers();
  par::set_workers(1);
  const double g_serial = g_n(rates, nu, mu, sch, 2);
  const double s_serial = s_n(rates, spec, nu, sch, 2);
  par::set_workers(save);
  const double g_parallel = g_n(rates, nu, mu, sch, 2);
  const double s_parallel = s_n(rates, spec, nu, sch, 2);
  CHECK(g_serial == g_parallel);
  CHECK(s_serial == s_parallel);
}

TEST_CASE("gillespie ensembles are schedule independent") {
  const Torus t({12});
  const Potential pot = ising_1d(0.4);
  const Specification spec(pot, t);
  SimulationRun run;
  run.rates = make_heat_bath(spec);
  run.torus = t;
  run.seed = 3;
  run.replicas = 300;
  run.law = InitialLaw::uniform(2);
  const Window w = centered_cube(t, 1);
  const std::vector<double> times = {0.5, 2.0};
  const auto a = ensemble_window_marginals(run, w, times);
  const auto b = ensemble_window_marginals_ref(run, w, times);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].counts == b[k].counts);
}
