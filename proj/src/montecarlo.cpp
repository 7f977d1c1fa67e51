#include "gibbslab/montecarlo.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gibbslab {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t replica_stream(std::uint64_t root_seed, std::uint64_t replica) {
  std::uint64_t s = root_seed;
  std::uint64_t mixed = splitmix64(s);
  s = mixed ^ (replica * 0xD1342543DE82EF95ULL + 0x2545F4914F6CDD1DULL);
  return splitmix64(s);
}

namespace {

// Uniform in [0,1) from the top 53 bits; avoids the library distribution so
// streams are identical across standard library implementations.
double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double exponential(std::mt19937_64& rng) {
  double u;
  do {
    u = uniform01(rng);
  } while (u <= 0.0);
  return -std::log(u);
}

}  // namespace

InitialLaw InitialLaw::point(Configuration eta) {
  InitialLaw law;
  law.kind = Kind::point_mass;
  law.q = eta.q;
  law.eta0 = std::move(eta);
  return law;
}

InitialLaw InitialLaw::uniform(int q) {
  InitialLaw law;
  law.kind = Kind::uniform_product;
  law.q = q;
  return law;
}

InitialLaw InitialLaw::product(int q, std::vector<double> site_law) {
  InitialLaw law;
  law.kind = Kind::product;
  law.q = q;
  law.site_law = std::move(site_law);
  if (law.site_law.size() != static_cast<std::size_t>(q))
    throw std::invalid_argument("product law needs one weight per spin value");
  return law;
}

InitialLaw InitialLaw::from_exact(ProbVector dist, int q) {
  InitialLaw law;
  law.kind = Kind::exact;
  law.q = q;
  law.exact_law = std::move(dist);
  law.exact_law.validate(1e-9);
  return law;
}

Configuration InitialLaw::sample(const Torus& geom, std::mt19937_64& rng) const {
  const int n = geom.site_count();
  switch (kind) {
    case Kind::point_mass:
      if (static_cast<int>(eta0.spins.size()) != n)
        throw std::invalid_argument("point mass does not match the torus");
      return eta0;
    case Kind::uniform_product: {
      Configuration out(q, std::vector<Spin>(n, 0));
      for (int s = 0; s < n; ++s)
        out.spins[s] = static_cast<Spin>(std::min<int>(
            q - 1, static_cast<int>(uniform01(rng) * q)));
      return out;
    }
    case Kind::product: {
      Configuration out(q, std::vector<Spin>(n, 0));
      for (int s = 0; s < n; ++s) {
        double u = uniform01(rng);
        Spin v = static_cast<Spin>(q - 1);
        for (int j = 0; j < q; ++j) {
          u -= site_law[j];
          if (u < 0.0) {
            v = static_cast<Spin>(j);
            break;
          }
        }
        out.spins[s] = v;
      }
      return out;
    }
    case Kind::exact: {
      // inversion over the enumerated state space
      const StateCodec codec(q, n);
      if (exact_law.size() != codec.state_count())
        throw std::invalid_argument("exact law does not match the torus");
      double u = uniform01(rng);
      std::size_t pick = exact_law.size() - 1;
      for (std::size_t s = 0; s < exact_law.size(); ++s) {
        u -= exact_law[s];
        if (u < 0.0) {
          pick = s;
          break;
        }
      }
      return decode_config(pick, q, n);
    }
  }
  throw std::logic_error("unreachable");
}

GillespieEngine::GillespieEngine(const RateFamily& rates, const Torus& geom)
    : rates_(&rates), geom_(geom) {
  for (const auto& rule : rates.rules)
    for (double v : rule.values)
      if (v < 0.0) throw ContractError("negative transition rate");
  const int n = geom_.site_count();
  for (const auto& rule : rates.rules) {
    for (int x = 0; x < n; ++x) {
      Slot slot{&rule, {}, {}};
      slot.dep.resize(rule.dependence.size());
      for (std::size_t i = 0; i < rule.dependence.size(); ++i)
        slot.dep[i] = geom_.translate_site(x, rule.dependence[i]);
      slot.shape.resize(rule.shape.size());
      for (std::size_t i = 0; i < rule.shape.size(); ++i)
        slot.shape[i] = geom_.translate_site(x, rule.shape[i]);
      slots_.push_back(std::move(slot));
    }
  }
  touching_.assign(n, {});
  for (std::size_t i = 0; i < slots_.size(); ++i)
    for (int site : slots_[i].dep)
      touching_[site].push_back(static_cast<std::uint32_t>(i));
  weight_.assign(slots_.size(), 0.0);
  std::size_t cap = 1;
  while (cap < slots_.size()) cap <<= 1;
  tree_.assign(2 * cap, 0.0);
  state_ = Configuration{};
}

void GillespieEngine::rebuild() {
  const std::size_t cap = tree_.size() / 2;
  std::fill(tree_.begin(), tree_.end(), 0.0);
  for (std::size_t i = 0; i < weight_.size(); ++i) tree_[cap + i] = weight_[i];
  for (std::size_t i = cap - 1; i >= 1; --i) tree_[i] = tree_[2 * i] + tree_[2 * i + 1];
  since_rebuild_ = 0;
}

void GillespieEngine::fenwick_set(std::size_t i, double value) {
  const std::size_t cap = tree_.size() / 2;
  std::size_t node = cap + i;
  tree_[node] = value;
  for (node >>= 1; node >= 1; node >>= 1)
    tree_[node] = tree_[2 * node] + tree_[2 * node + 1];
}

double GillespieEngine::fenwick_total() const { return tree_[1]; }

std::size_t GillespieEngine::fenwick_sample(double target) const {
  const std::size_t cap = tree_.size() / 2;
  std::size_t node = 1;
  while (node < cap) {
    const double left = tree_[2 * node];
    if (target < left) {
      node = 2 * node;
    } else {
      target -= left;
      node = 2 * node + 1;
    }
  }
  std::size_t slot = node - cap;
  if (slot >= slots_.size()) slot = slots_.size() - 1;
  return slot;
}

void GillespieEngine::refresh_slot(std::size_t i) {
  const Slot& slot = slots_[i];
  const UpdateRule& rule = *slot.rule;
  std::size_t dep_idx = 0, pw = 1;
  for (int site : slot.dep) {
    dep_idx += static_cast<std::size_t>(state_.spins[site]) * pw;
    pw *= static_cast<std::size_t>(rule.q);
  }
  double total = 0.0;
  std::size_t cur = 0;
  pw = 1;
  for (int site : slot.shape) {
    cur += static_cast<std::size_t>(state_.spins[site]) * pw;
    pw *= static_cast<std::size_t>(rule.q);
  }
  for (std::size_t c = 0; c < rule.cols(); ++c)
    if (c != cur) total += rule.rate(dep_idx, c);
  weight_[i] = total;
  fenwick_set(i, total);
}

void GillespieEngine::reset(const Configuration& eta0) {
  if (static_cast<int>(eta0.spins.size()) != geom_.site_count() || eta0.q != rates_->q)
    throw std::invalid_argument("configuration does not match the engine");
  state_ = eta0;
  time_ = 0.0;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const Slot& slot = slots_[i];
    const UpdateRule& rule = *slot.rule;
    std::size_t dep_idx = 0, pw = 1;
    for (int site : slot.dep) {
      dep_idx += static_cast<std::size_t>(state_.spins[site]) * pw;
      pw *= static_cast<std::size_t>(rule.q);
    }
    std::size_t cur = 0;
    pw = 1;
    for (int site : slot.shape) {
      cur += static_cast<std::size_t>(state_.spins[site]) * pw;
      pw *= static_cast<std::size_t>(rule.q);
    }
    double total = 0.0;
    for (std::size_t c = 0; c < rule.cols(); ++c)
      if (c != cur) total += rule.rate(dep_idx, c);
    weight_[i] = total;
  }
  rebuild();
}

double GillespieEngine::total_rate() const { return fenwick_total(); }

bool GillespieEngine::do_event(std::mt19937_64& rng, std::vector<EventLogEntry>* log) {
  const std::size_t slot_id = fenwick_sample(uniform01(rng) * fenwick_total());
  const Slot& slot = slots_[slot_id];
  const UpdateRule& rule = *slot.rule;
  std::size_t dep_idx = 0, pw = 1;
  for (int site : slot.dep) {
    dep_idx += static_cast<std::size_t>(state_.spins[site]) * pw;
    pw *= static_cast<std::size_t>(rule.q);
  }
  std::size_t cur = 0;
  pw = 1;
  for (int site : slot.shape) {
    cur += static_cast<std::size_t>(state_.spins[site]) * pw;
    pw *= static_cast<std::size_t>(rule.q);
  }
  // pick the target within the slot
  double u = uniform01(rng) * weight_[slot_id];
  std::size_t chosen = rule.cols();
  for (std::size_t c = 0; c < rule.cols(); ++c) {
    if (c == cur) continue;
    u -= rule.rate(dep_idx, c);
    if (u < 0.0) {
      chosen = c;
      break;
    }
  }
  if (chosen == rule.cols()) {
    // numerical slack between the tree and the freshly computed row
    for (std::size_t c = rule.cols(); c-- > 0;) {
      if (c == cur) continue;
      if (rule.rate(dep_idx, c) > 0.0) {
        chosen = c;
        break;
      }
    }
    if (chosen == rule.cols()) {
      refresh_slot(slot_id);
      return false;  // stale slot; no event applied
    }
  }

  std::size_t cc = chosen;
  for (std::size_t k = 0; k < slot.shape.size(); ++k) {
    const Spin v = static_cast<Spin>(cc % static_cast<std::size_t>(rule.q));
    cc /= static_cast<std::size_t>(rule.q);
    if (state_.spins[slot.shape[k]] != v) {
      state_.spins[slot.shape[k]] = v;
      if (log) log->push_back({time_, slot.shape[k], v});
    }
  }
  for (int site : slot.shape)
    for (std::uint32_t s : touching_[site]) refresh_slot(s);
  if (++since_rebuild_ >= 65536) rebuild();
  return true;
}

bool GillespieEngine::advance_to(double t_end, std::mt19937_64& rng,
                                 std::vector<EventLogEntry>* log, std::uint64_t* events) {
  while (true) {
    const double total = fenwick_total();
    if (total <= 0.0) return false;  // absorbing state: the process halts
    const double wait = exponential(rng) / total;
    if (time_ + wait > t_end) {
      time_ = t_end;
      return true;
    }
    time_ += wait;
    if (do_event(rng, log) && events) ++(*events);
  }
}

std::optional<double> GillespieEngine::advance_one(std::mt19937_64& rng) {
  double waited = 0.0;
  while (true) {
    const double total = fenwick_total();
    if (total <= 0.0) return std::nullopt;
    const double wait = exponential(rng) / total;
    time_ += wait;
    waited += wait;
    if (do_event(rng, nullptr)) return waited;
  }
}

GillespieResult gillespie_run(const SimulationRun& run, const Configuration& eta0,
                              std::uint64_t replica) {
  GillespieEngine engine(run.rates, run.torus);
  engine.reset(eta0);
  std::mt19937_64 rng(replica_stream(run.seed, replica));
  GillespieResult result;
  std::vector<EventLogEntry> log;
  const bool alive = engine.advance_to(run.horizon, rng,
                                       run.log_events ? &log : nullptr, &result.events);
  result.final_state = engine.state();
  result.log = std::move(log);
  result.absorbed = !alive;
  result.absorbed_at = alive ? 0.0 : engine.time();
  return result;
}

std::vector<double> EmpiricalMarginal::frequencies() const {
  std::vector<double> out(counts.size(), 0.0);
  if (replicas == 0) return out;
  for (std::size_t i = 0; i < counts.size(); ++i)
    out[i] = static_cast<double>(counts[i]) / static_cast<double>(replicas);
  return out;
}

namespace {

template <bool Parallel>
std::vector<EmpiricalMarginal> ensemble_impl(const SimulationRun& run, const Window& w,
                                             std::span<const double> times) {
  for (std::size_t i = 1; i < times.size(); ++i)
    if (times[i] < times[i - 1]) throw std::invalid_argument("times must be nondecreasing");
  if (run.replicas < 1) throw std::invalid_argument("need at least one replica");

  const std::size_t ncfg = local_count(run.rates.q, w.size());
  std::vector<EmpiricalMarginal> out(times.size());
  for (std::size_t k = 0; k < times.size(); ++k) {
    out[k].window = w;
    out[k].q = run.rates.q;
    out[k].replicas = static_cast<std::uint64_t>(run.replicas);
    out[k].counts.assign(ncfg, 0);
  }

  const int workers =
#ifdef _OPENMP
      Parallel ? omp_get_max_threads() : 1;
#else
      1;
#endif
  std::vector<std::vector<std::vector<std::uint64_t>>> local(
      workers, std::vector<std::vector<std::uint64_t>>(times.size(),
                                                       std::vector<std::uint64_t>(ncfg, 0)));

  auto run_replica = [&](int r, int worker) {
    GillespieEngine engine(run.rates, run.torus);
    std::mt19937_64 rng(replica_stream(run.seed, static_cast<std::uint64_t>(r)));
    engine.reset(run.law.sample(run.torus, rng));
    for (std::size_t k = 0; k < times.size(); ++k) {
      engine.advance_to(times[k], rng, nullptr, nullptr);
      std::size_t idx = 0, pw = 1;
      for (int site : w.sites) {
        idx += static_cast<std::size_t>(engine.state().spins[site]) * pw;
        pw *= static_cast<std::size_t>(run.rates.q);
      }
      local[worker][k][idx] += 1;
    }
  };

  if constexpr (Parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 16)
#endif
    for (int r = 0; r < run.replicas; ++r) {
#ifdef _OPENMP
      run_replica(r, omp_get_thread_num());
#else
      run_replica(r, 0);
#endif
    }
  } else {
    for (int r = 0; r < run.replicas; ++r) run_replica(r, 0);
  }

  // integer counts: the merge order cannot change the result
  for (int wk = 0; wk < workers; ++wk)
    for (std::size_t k = 0; k < times.size(); ++k)
      for (std::size_t i = 0; i < ncfg; ++i) out[k].counts[i] += local[wk][k][i];
  return out;
}

}  // namespace

std::vector<EmpiricalMarginal> ensemble_window_marginals(const SimulationRun& run,
                                                         const Window& w,
                                                         std::span<const double> times) {
  return ensemble_impl<true>(run, w, times);
}

std::vector<EmpiricalMarginal> ensemble_window_marginals_ref(const SimulationRun& run,
                                                             const Window& w,
                                                             std::span<const double> times) {
  return ensemble_impl<false>(run, w, times);
}

EmpiricalMarginal ensemble_window_marginal(const SimulationRun& run, const Window& w, double t) {
  const double times[1] = {t};
  return ensemble_window_marginals(run, w, times)[0];
}

double attractor_residual(const EmpiricalMarginal& emp, const Specification& spec,
                          std::uint64_t min_count) {
  const Torus& geom = spec.torus();
  const int q = emp.q;
  // interior sites: single-site dependence fully inside the window
  std::vector<int> interior;
  std::vector<std::vector<int>> context_sites;
  for (int site : emp.window.sites) {
    const Window dep = spec.dependence(Window{{site}});
    if (!window_subset(dep, emp.window)) continue;
    std::vector<int> ctx;
    for (int s : dep.sites)
      if (s != site) ctx.push_back(s);
    interior.push_back(site);
    context_sites.push_back(std::move(ctx));
  }
  if (interior.empty())
    throw InsufficientDataError("window has no interior site for the cross-ratio");

  std::vector<std::size_t> site_pos(geom.site_count(), 0);
  for (std::size_t i = 0; i < emp.window.sites.size(); ++i)
    site_pos[emp.window.sites[i]] = i;

  bool any_pattern = false;
  double worst = 0.0;
  std::vector<Spin> wvals(emp.window.sites.size());
  Configuration eta(q, std::vector<Spin>(geom.site_count(), 0));
  std::vector<double> grow(q);
  for (std::size_t k = 0; k < interior.size(); ++k) {
    const int site = interior[k];
    const auto& ctx = context_sites[k];
    // counts per (context pattern, center spin)
    const std::size_t npat = local_count(q, static_cast<int>(ctx.size()));
    std::vector<std::uint64_t> pat_counts(npat * q, 0);
    for (std::size_t cfg = 0; cfg < emp.counts.size(); ++cfg) {
      if (emp.counts[cfg] == 0) continue;
      local_decode(q, cfg, wvals);
      std::size_t pat = 0, pw = 1;
      for (int s : ctx) {
        pat += static_cast<std::size_t>(wvals[site_pos[s]]) * pw;
        pw *= static_cast<std::size_t>(q);
      }
      pat_counts[pat * q + wvals[site_pos[site]]] += emp.counts[cfg];
    }
    std::vector<Spin> pvals(ctx.size());
    for (std::size_t pat = 0; pat < npat; ++pat) {
      std::uint64_t total = 0;
      for (int j = 0; j < q; ++j) total += pat_counts[pat * q + j];
      if (total < min_count) continue;
      any_pattern = true;
      local_decode(q, pat, pvals);
      for (std::size_t i = 0; i < ctx.size(); ++i) eta.spins[ctx[i]] = pvals[i];
      spec.gamma_site_row(site, eta, grow);
      for (int a = 0; a < q; ++a)
        for (int b = a + 1; b < q; ++b) {
          const double fa = static_cast<double>(pat_counts[pat * q + a]) / total;
          const double fb = static_cast<double>(pat_counts[pat * q + b]) / total;
          worst = std::max(worst, std::abs(fa * grow[b] - fb * grow[a]));
        }
    }
  }
  if (!any_pattern)
    throw InsufficientDataError("no boundary pattern reached the count floor");
  return worst;
}

ProbVector occupation_average(const RateFamily& rates, const Torus& geom,
                              const Configuration& eta0, std::uint64_t n_events,
                              std::uint64_t seed) {
  const StateCodec codec(rates.q, geom.site_count());
  if (codec.state_count() > (StateIndex{1} << 20))
    throw CapacityError("occupation average needs an enumerable torus");
  GillespieEngine engine(rates, geom);
  engine.reset(eta0);
  std::mt19937_64 rng(replica_stream(seed, 0));

  std::vector<double> mass(codec.state_count(), 0.0);
  for (std::uint64_t e = 0; e < n_events; ++e) {
    const StateIndex cur = codec.encode(engine.state().spins);
    const auto waited = engine.advance_one(rng);
    if (!waited) break;  // absorbed
    mass[cur] += *waited;
  }
  ProbVector occ;
  occ.p = std::move(mass);
  const double s = occ.sum();
  if (s <= 0.0) throw NumericError("no occupation mass accumulated");
  for (double& v : occ.p) v /= s;
  return occ;
}

}  // namespace gibbslab
