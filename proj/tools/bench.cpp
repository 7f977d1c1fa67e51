// Timings of the OpenMP kernels against their serial references.

#include <chrono>
#include <cstdio>

#include "gibbslab/ctmc.hpp"
#include "gibbslab/dynamics.hpp"
#include "gibbslab/entropy.hpp"
#include "gibbslab/gibbs.hpp"
#include "gibbslab/montecarlo.hpp"
#include "gibbslab/parallel.hpp"

using namespace gibbslab;

namespace {

template <class F>
double time_ms(F&& fn, int reps = 3) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void report(const char* name, double serial_ms, double parallel_ms) {
  std::printf("%-28s serial %9.2f ms   parallel %9.2f ms   speedup %5.2fx\n", name,
              serial_ms, parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main() {
  std::printf("workers: %d\n", par::max_workers());

  // generator assembly + uniformization on a q=2 chain of 14 sites
  {
    const Torus geom({14});
    const Potential pot = [] {
      Potential p = ising_potential(1, 1.0);
      p.beta = 0.4;
      return p;
    }();
    const Specification spec(pot, geom);
    const RateFamily rates = make_heat_bath(spec);

    SparseGenerator gen;
    const double tser = time_ms([&] { gen = assemble_generator_ref(rates, geom); });
    const double tpar = time_ms([&] { gen = assemble_generator(rates, geom); });
    report("assemble_generator", tser, tpar);

    const ProbVector nu = ProbVector::point_mass(gen.n, 0);
    const double eser = time_ms([&] { (void)evolve_ref(nu, gen, 2.0); });
    const double epar = time_ms([&] { (void)evolve(nu, gen, 2.0); });
    report("evolve (uniformization)", eser, epar);
  }

  // windowed entropy functional on a q=2 chain of 33 sites
  {
    const Torus geom({33});
    Potential pot = ising_potential(1, 1.0);
    pot.beta = 0.3;
    const Specification spec(pot, geom);
    const RateFamily rates = make_heat_bath(spec);
    const TruncationScheme sch(geom, 3);
    Potential alt = pot;
    alt.beta = 0.15;
    const TransferSource nu(alt);
    const TransferSource mu(pot);

    double v1 = 0.0, v2 = 0.0;
    const int save = par::max_workers();
    const double tser = time_ms([&] {
      par::set_workers(1);
      v1 = g_n(rates, nu, mu, sch, 3);
    }, 1);
    const double tpar = time_ms([&] {
      par::set_workers(save);
      v2 = g_n(rates, nu, mu, sch, 3);
    }, 1);
    report("g_n (n = 3)", tser, tpar);
    std::printf("  worker-count invariance: |difference| = %.3e\n", std::abs(v1 - v2));

    double s1 = 0.0, s2 = 0.0;
    const double sser = time_ms([&] {
      par::set_workers(1);
      s1 = s_n(rates, spec, nu, sch, 3);
    }, 1);
    const double spar = time_ms([&] {
      par::set_workers(save);
      s2 = s_n(rates, spec, nu, sch, 3);
    }, 1);
    report("s_n (n = 3)", sser, spar);
    std::printf("  worker-count invariance: |difference| = %.3e\n", std::abs(s1 - s2));
  }

  // Gillespie ensemble on a q=3 chain of 64 sites
  {
    const Torus geom({64});
    Potential pot = potts_potential(1, 3, 1.0);
    pot.beta = 0.5;
    const Specification spec(pot, geom);
    const RateFamily rates = mix(1.0, make_heat_bath(spec), 1.0, make_cyclic(spec, 1.0));

    SimulationRun run;
    run.rates = rates;
    run.torus = geom;
    run.law = InitialLaw::uniform(3);
    run.horizon = 2.0;
    run.replicas = 200;
    run.seed = 7;
    const Window w = centered_cube(geom, 1);
    const double times[1] = {2.0};

    std::vector<EmpiricalMarginal> a, b;
    const double tser = time_ms([&] { a = ensemble_window_marginals_ref(run, w, times); }, 1);
    const double tpar = time_ms([&] { b = ensemble_window_marginals(run, w, times); }, 1);
    report("gillespie ensemble", tser, tpar);
    bool same = a[0].counts == b[0].counts;
    std::printf("  replica streams reproducible across schedules: %s\n", same ? "yes" : "NO");
  }
  return 0;
}
