#include "gibbslab/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "gibbslab/parallel.hpp"

namespace gibbslab {

int Potential::range() const {
  int r = 0;
  for (const auto& term : terms)
    for (const auto& o : term.offsets)
      for (int c : o) r = std::max(r, std::abs(c));
  return r;
}

void Potential::validate() const {
  if (q < 2) throw std::invalid_argument("potential needs q >= 2");
  for (const auto& term : terms) {
    if (term.offsets.empty()) throw std::invalid_argument("empty shape in potential");
    const std::size_t d = term.offsets.front().size();
    bool has_origin = false;
    std::set<std::vector<int>> distinct;
    for (const auto& o : term.offsets) {
      if (o.size() != d) throw std::invalid_argument("mixed offset dimensions");
      if (!distinct.insert(o).second) throw std::invalid_argument("duplicate offset in shape");
      if (std::all_of(o.begin(), o.end(), [](int c) { return c == 0; })) has_origin = true;
    }
    if (!has_origin) throw std::invalid_argument("shape must contain the origin");
    if (term.values.size() != local_count(q, static_cast<int>(term.offsets.size())))
      throw std::invalid_argument("interaction table size mismatch");
  }
}

Potential zero_potential(int q) {
  Potential pot;
  pot.q = q;
  pot.beta = 1.0;
  return pot;
}

Potential ising_potential(int dim, double coupling, double field) {
  Potential pot;
  pot.q = 2;
  pot.beta = 1.0;
  auto sigma = [](Spin s) { return s == 0 ? -1.0 : 1.0; };
  for (int axis = 0; axis < dim; ++axis) {
    InteractionTerm pair;
    std::vector<int> origin(dim, 0), step(dim, 0);
    step[axis] = 1;
    pair.offsets = {origin, step};
    pair.values.resize(4);
    for (Spin a = 0; a < 2; ++a)
      for (Spin b = 0; b < 2; ++b)
        pair.values[local_index(2, std::vector<Spin>{a, b})] = -coupling * sigma(a) * sigma(b);
    pot.terms.push_back(std::move(pair));
  }
  if (field != 0.0) {
    InteractionTerm single;
    single.offsets = {std::vector<int>(dim, 0)};
    single.values = {-field * sigma(0), -field * sigma(1)};
    pot.terms.push_back(std::move(single));
  }
  pot.validate();
  return pot;
}

Potential potts_potential(int dim, int q, double coupling) {
  Potential pot;
  pot.q = q;
  pot.beta = 1.0;
  for (int axis = 0; axis < dim; ++axis) {
    InteractionTerm pair;
    std::vector<int> origin(dim, 0), step(dim, 0);
    step[axis] = 1;
    pair.offsets = {origin, step};
    pair.values.assign(local_count(q, 2), 0.0);
    for (Spin a = 0; a < q; ++a)
      pair.values[local_index(q, std::vector<Spin>{a, a})] = -coupling;
    pot.terms.push_back(std::move(pair));
  }
  pot.validate();
  return pot;
}

namespace {

// Value of one translated term under spins read from xi on delta, else from
// the boundary configuration.
double term_value(const InteractionTerm& term, const Torus& geom, int x,
                  const Window& delta, std::span<const Spin> xi,
                  const Configuration& boundary, int q) {
  std::size_t idx = 0;
  std::size_t p = 1;
  for (const auto& o : term.offsets) {
    const int site = geom.translate_site(x, o);
    const auto it = std::lower_bound(delta.sites.begin(), delta.sites.end(), site);
    Spin s;
    if (it != delta.sites.end() && *it == site)
      s = xi[static_cast<std::size_t>(it - delta.sites.begin())];
    else
      s = boundary.spins[site];
    idx += static_cast<std::size_t>(s) * p;
    p *= static_cast<std::size_t>(q);
  }
  return term.values[idx];
}

}  // namespace

Specification::Specification(Potential pot, Torus geom)
    : pot_(std::move(pot)), geom_(std::move(geom)) {
  pot_.validate();
  for (const auto& term : pot_.terms)
    if (term.offsets.front().size() != static_cast<std::size_t>(geom_.dim()))
      throw GeometryError("potential dimension does not match the torus");
  if (2 * pot_.range() >= geom_.min_side())
    throw GeometryError("interaction range must be below half the torus side");

  // delta = min over single-site conditionals, enumerated over the
  // dependence neighborhood of one site (all sites equivalent).
  const Window origin{{0}};
  const Window dep = dependence(origin);
  std::vector<int> rest;
  for (int s : dep.sites)
    if (s != 0) rest.push_back(s);
  Configuration eta(pot_.q, std::vector<Spin>(geom_.site_count(), 0));
  double best = 1.0;
  std::vector<Spin> boundary(rest.size());
  std::vector<double> row(pot_.q);
  for (std::size_t b = 0; b < local_count(pot_.q, static_cast<int>(rest.size())); ++b) {
    local_decode(pot_.q, b, boundary);
    for (std::size_t i = 0; i < rest.size(); ++i) eta.spins[rest[i]] = boundary[i];
    gamma_site_row(0, eta, row);
    for (int j = 0; j < pot_.q; ++j) best = std::min(best, row[j]);
  }
  delta_ = best;
}

std::vector<std::pair<int, int>> Specification::terms_meeting(const Window& delta) const {
  std::vector<std::pair<int, int>> out;
  std::set<std::pair<int, int>> seen;
  for (int t = 0; t < static_cast<int>(pot_.terms.size()); ++t) {
    for (const auto& o : pot_.terms[t].offsets) {
      std::vector<int> neg(o.begin(), o.end());
      for (int& c : neg) c = -c;
      for (int s : delta.sites) {
        const int x = geom_.translate_site(s, neg);
        if (seen.insert({t, x}).second) out.emplace_back(t, x);
      }
    }
  }
  return out;
}

Window Specification::dependence(const Window& delta) const {
  std::set<int> sites(delta.sites.begin(), delta.sites.end());
  for (const auto& [t, x] : terms_meeting(delta))
    for (const auto& o : pot_.terms[t].offsets) sites.insert(geom_.translate_site(x, o));
  Window out;
  out.sites.assign(sites.begin(), sites.end());
  return out;
}

void Specification::gamma_row(const Window& delta, const Configuration& boundary,
                              std::span<double> out) const {
  if (delta.sites.empty()) return;
  const auto meeting = terms_meeting(delta);
  const std::size_t nloc = local_count(pot_.q, delta.size());
  std::vector<Spin> zeta(delta.sites.size());
  for (std::size_t z = 0; z < nloc; ++z) {
    local_decode(pot_.q, z, zeta);
    double e = 0.0;
    for (const auto& [t, x] : meeting)
      e += term_value(pot_.terms[t], geom_, x, delta, zeta, boundary, pot_.q);
    out[z] = e;
  }
  const double e0 = *std::min_element(out.begin(), out.end());
  double zsum = 0.0;
  for (std::size_t z = 0; z < nloc; ++z) {
    out[z] = std::exp(-pot_.beta * (out[z] - e0));
    zsum += out[z];
  }
  for (std::size_t z = 0; z < nloc; ++z) out[z] /= zsum;
}

double Specification::gamma(const Window& delta, std::span<const Spin> xi,
                            const Configuration& boundary) const {
  if (delta.sites.empty()) return 1.0;
  std::vector<double> row(local_count(pot_.q, delta.size()));
  gamma_row(delta, boundary, row);
  return row[local_index(pot_.q, xi)];
}

void Specification::gamma_site_row(int site, const Configuration& eta,
                                   std::span<double> out) const {
  const Window delta{{site}};
  const auto meeting = terms_meeting(delta);
  double emin = kInf;
  for (Spin j = 0; j < pot_.q; ++j) {
    double e = 0.0;
    const Spin xi[1] = {j};
    for (const auto& [t, x] : meeting)
      e += term_value(pot_.terms[t], geom_, x, delta, xi, eta, pot_.q);
    out[j] = e;
    emin = std::min(emin, e);
  }
  double zsum = 0.0;
  for (int j = 0; j < pot_.q; ++j) {
    out[j] = std::exp(-pot_.beta * (out[j] - emin));
    zsum += out[j];
  }
  for (int j = 0; j < pot_.q; ++j) out[j] /= zsum;
}

double Specification::gamma_single(int site, Spin value, const Configuration& eta) const {
  std::vector<double> row(pot_.q);
  gamma_site_row(site, eta, row);
  return row[value];
}

Specification build_specification(const Potential& pot, const Torus& geom) {
  return Specification(pot, geom);
}

double torus_energy(const Potential& pot, const Torus& geom, const Configuration& eta) {
  double h = 0.0;
  for (const auto& term : pot.terms) {
    for (int x = 0; x < geom.site_count(); ++x) {
      std::size_t idx = 0;
      std::size_t p = 1;
      for (const auto& o : term.offsets) {
        idx += static_cast<std::size_t>(eta.spins[geom.translate_site(x, o)]) * p;
        p *= static_cast<std::size_t>(pot.q);
      }
      h += term.values[idx];
    }
  }
  return h;
}

ProbVector exact_gibbs(const Potential& pot, const Torus& geom) {
  pot.validate();
  const StateCodec codec(pot.q, geom.site_count());
  if (codec.state_count() > (StateIndex{1} << 24))
    throw CapacityError("state space exceeds the 2^24 enumeration guard");
  const std::size_t n = static_cast<std::size_t>(codec.state_count());
  std::vector<double> logw(n);
  par::for_each_index(n, [&](std::size_t s) {
    Configuration eta(pot.q, std::vector<Spin>(geom.site_count(), 0));
    codec.decode(s, eta.spins);
    logw[s] = -pot.beta * torus_energy(pot, geom, eta);
  });
  const double m = *std::max_element(logw.begin(), logw.end());
  ProbVector mu;
  mu.p.resize(n);
  for (std::size_t s = 0; s < n; ++s) mu.p[s] = std::exp(logw[s] - m);
  mu.normalize();
  return mu;
}

double dlr_residual(const ProbVector& mu, const Specification& spec, const Window& delta) {
  if (delta.sites.empty()) return 0.0;
  const Torus& geom = spec.torus();
  const StateCodec codec(spec.q(), geom.site_count());
  const std::size_t nloc = local_count(spec.q(), delta.size());
  double worst = 0.0;
  Configuration eta(spec.q(), std::vector<Spin>(geom.site_count(), 0));
  std::vector<Spin> zeta(delta.sites.size());
  for (std::size_t s = 0; s < mu.size(); ++s) {
    codec.decode(s, eta.spins);
    double cyl = 0.0;
    StateIndex base = s;
    for (int i = 0; i < delta.size(); ++i) base = codec.with_digit(base, delta.sites[i], 0);
    for (std::size_t z = 0; z < nloc; ++z) {
      local_decode(spec.q(), z, zeta);
      StateIndex t = base;
      for (int i = 0; i < delta.size(); ++i)
        t += static_cast<StateIndex>(zeta[i]) * codec.pow(delta.sites[i]);
      cyl += mu[t];
    }
    if (cyl == 0.0) throw NumericError("zero marginal on the conditioning cylinder");
    const auto xi = project_window(eta, delta);
    worst = std::max(worst, std::abs(mu[s] / cyl - spec.gamma(delta, xi, eta)));
  }
  return worst;
}

double consistency_residual(const Specification& spec, const Window& delta,
                            const Window& lam, const Configuration& eta) {
  if (!window_subset(delta, lam)) throw std::invalid_argument("delta must lie inside lambda");
  const int q = spec.q();
  const std::size_t n_lam = local_count(q, lam.size());
  const std::size_t n_delta = local_count(q, delta.size());
  std::vector<int> delta_pos;
  for (int s : delta.sites) {
    const auto it = std::lower_bound(lam.sites.begin(), lam.sites.end(), s);
    delta_pos.push_back(static_cast<int>(it - lam.sites.begin()));
  }

  std::vector<double> lam_row(n_lam);
  spec.gamma_row(lam, eta, lam_row);

  // lhs(target) = sum_zeta gamma_L(zeta|eta) gamma_D(target | zeta_{L\D} eta)
  // rhs(target) = sum_{zeta: zeta_D = target} gamma_L(zeta|eta)
  std::vector<double> lhs(n_delta, 0.0), rhs(n_delta, 0.0);
  Configuration inner = eta;
  std::vector<Spin> zeta(lam.sites.size());
  std::vector<double> delta_row(n_delta);
  for (std::size_t z = 0; z < n_lam; ++z) {
    local_decode(q, z, zeta);
    for (std::size_t i = 0; i < lam.sites.size(); ++i) inner.spins[lam.sites[i]] = zeta[i];
    spec.gamma_row(delta, inner, delta_row);
    std::size_t own = 0, pw = 1;
    for (int pos : delta_pos) {
      own += static_cast<std::size_t>(zeta[pos]) * pw;
      pw *= static_cast<std::size_t>(q);
    }
    rhs[own] += lam_row[z];
    for (std::size_t t = 0; t < n_delta; ++t) lhs[t] += lam_row[z] * delta_row[t];
  }
  double worst = 0.0;
  for (std::size_t t = 0; t < n_delta; ++t)
    worst = std::max(worst, std::abs(lhs[t] - rhs[t]));
  return worst;
}

namespace {

// Marginal table of mu on the window, little-endian in window order.
std::vector<double> marginal_table(const ProbVector& mu, const StateCodec& codec,
                                   const Window& w) {
  std::vector<double> table(local_count(codec.q(), w.size()), 0.0);
  std::vector<Spin> values(w.sites.size());
  for (std::size_t s = 0; s < mu.size(); ++s) {
    for (std::size_t i = 0; i < w.sites.size(); ++i)
      values[i] = codec.digit(s, w.sites[i]);
    table[local_index(codec.q(), values)] += mu[s];
  }
  return table;
}

}  // namespace

LogRatioBound log_ratio_bound_check(const ProbVector& mu, const Torus& geom, int q,
                                    const Window& delta, const Window& lam,
                                    double nonnull_delta) {
  if (!window_subset(delta, lam)) throw std::invalid_argument("delta must lie inside lambda");
  LogRatioBound out;
  out.bound = delta.size() * std::log(1.0 / nonnull_delta);
  if (delta.sites.empty()) return out;

  const StateCodec codec(q, geom.site_count());
  const auto table = marginal_table(mu, codec, lam);
  std::vector<int> delta_pos;
  for (int s : delta.sites) {
    const auto it = std::lower_bound(lam.sites.begin(), lam.sites.end(), s);
    delta_pos.push_back(static_cast<int>(it - lam.sites.begin()));
  }
  std::vector<Spin> eta(lam.sites.size()), xi(delta.sites.size());
  double worst = 0.0;
  for (std::size_t e = 0; e < table.size(); ++e) {
    local_decode(q, e, eta);
    for (std::size_t z = 0; z < local_count(q, delta.size()); ++z) {
      local_decode(q, z, xi);
      std::size_t mixed = e;
      for (std::size_t i = 0; i < delta_pos.size(); ++i) {
        std::size_t p = 1;
        for (int k = 0; k < delta_pos[i]; ++k) p *= static_cast<std::size_t>(q);
        mixed += (static_cast<std::size_t>(xi[i]) -
                  static_cast<std::size_t>(eta[delta_pos[i]])) * p;
      }
      const double lhs = std::abs(std::log(table[mixed] / table[e]));
      worst = std::max(worst, lhs);
    }
  }
  out.worst_lhs = worst;
  out.holds = worst <= out.bound + 1e-12;
  return out;
}

double pushforward_density_residual(const ProbVector& mu, const Specification& spec,
                                    const Window& delta, std::span<const Spin> xi) {
  const Torus& geom = spec.torus();
  const StateCodec codec(spec.q(), geom.site_count());
  const std::size_t n = mu.size();
  // Every event on the finite torus is a disjoint union of singletons, so it
  // suffices to compare the two measures pointwise.
  std::vector<double> lhs(n, 0.0), rhs(n, 0.0);
  std::vector<Spin> spins(geom.site_count());
  for (std::size_t s = 0; s < n; ++s) {
    StateIndex t = s;
    for (int i = 0; i < delta.size(); ++i)
      t = codec.with_digit(t, delta.sites[i], xi[i]);
    lhs[t] += mu[s];
    codec.decode(s, spins);
    Configuration eta(spec.q(), spins);
    const auto own = project_window(eta, delta);
    if (std::equal(own.begin(), own.end(), xi.begin(), xi.end())) {
      const double gx = spec.gamma(delta, xi, eta);
      double ratio_sum = 0.0;
      std::vector<Spin> zeta(delta.sites.size());
      for (std::size_t z = 0; z < local_count(spec.q(), delta.size()); ++z) {
        local_decode(spec.q(), z, zeta);
        ratio_sum += spec.gamma(delta, zeta, eta) / gx;
      }
      rhs[s] = mu[s] * ratio_sum;
    }
  }
  double worst = 0.0;
  for (std::size_t s = 0; s < n; ++s) worst = std::max(worst, std::abs(lhs[s] - rhs[s]));
  return worst;
}

TransferMatrix1D::TransferMatrix1D(const Potential& pot) : q_(pot.q) {
  pot.validate();
  std::vector<double> pair(static_cast<std::size_t>(q_) * q_, 0.0);
  std::vector<double> single(q_, 0.0);
  for (const auto& term : pot.terms) {
    if (term.offsets.front().size() != 1)
      throw GeometryError("transfer matrix needs a one-dimensional potential");
    if (term.offsets.size() == 1) {
      for (int a = 0; a < q_; ++a) single[a] += term.values[a];
    } else if (term.offsets.size() == 2) {
      // canonical nearest-neighbor shape {0, 1}
      std::vector<std::vector<int>> sorted = term.offsets;
      std::sort(sorted.begin(), sorted.end());
      if (sorted != std::vector<std::vector<int>>{{0}, {1}})
        throw GeometryError("transfer matrix needs nearest-neighbor shapes");
      const bool flip = term.offsets[0] == std::vector<int>{1};
      for (Spin a = 0; a < q_; ++a)
        for (Spin b = 0; b < q_; ++b) {
          const std::vector<Spin> loc = flip ? std::vector<Spin>{b, a} : std::vector<Spin>{a, b};
          pair[a * q_ + b] += term.values[local_index(q_, loc)];
        }
    } else {
      throw GeometryError("transfer matrix needs nearest-neighbor shapes");
    }
  }
  transfer_.resize(pair.size());
  for (int a = 0; a < q_; ++a)
    for (int b = 0; b < q_; ++b)
      transfer_[a * q_ + b] = std::exp(-pot.beta * (pair[a * q_ + b] + single[a]));

  // Perron pair by power iteration; T is strictly positive.
  left_.assign(q_, 1.0 / q_);
  right_.assign(q_, 1.0 / q_);
  double lam = 0.0;
  for (int it = 0; it < 100000; ++it) {
    std::vector<double> nr(q_, 0.0), nl(q_, 0.0);
    for (int a = 0; a < q_; ++a)
      for (int b = 0; b < q_; ++b) {
        nr[a] += transfer_[a * q_ + b] * right_[b];
        nl[b] += left_[a] * transfer_[a * q_ + b];
      }
    double sr = 0.0, sl = 0.0;
    for (int a = 0; a < q_; ++a) {
      sr += nr[a];
      sl += nl[a];
    }
    double drift = 0.0;
    for (int a = 0; a < q_; ++a) {
      nr[a] /= sr;
      nl[a] /= sl;
      drift = std::max(drift, std::abs(nr[a] - right_[a]) + std::abs(nl[a] - left_[a]));
    }
    right_ = nr;
    left_ = nl;
    lam = sr;
    if (drift < 1e-16 && it > 4) break;
  }
  lambda_ = lam;
  if (!(lambda_ > 0.0) || !std::isfinite(lambda_))
    throw NumericError("degenerate transfer matrix");
  inner_ = 0.0;
  for (int a = 0; a < q_; ++a) inner_ += left_[a] * right_[a];
}

double TransferMatrix1D::window_prob(std::span<const int> positions,
                                     std::span<const Spin> values) const {
  if (positions.empty()) return 1.0;
  for (std::size_t i = 1; i < positions.size(); ++i)
    if (positions[i] <= positions[i - 1])
      throw std::invalid_argument("positions must be strictly increasing");
  const int span = positions.back() - positions.front() + 1;
  const int free = span - static_cast<int>(positions.size());
  if (free > 20) throw CapacityError("window gap too wide for the transfer sum");

  // chi[a] at the left edge, propagate T/lambda across the span, constrain
  // fixed positions, close with the right eigenvector.
  std::vector<double> chi(left_);
  std::size_t next = 0;
  for (int pos = positions.front(); pos <= positions.back(); ++pos) {
    if (positions[next] == pos) {
      const Spin v = values[next];
      for (int a = 0; a < q_; ++a)
        if (a != v) chi[a] = 0.0;
      ++next;
    }
    if (pos == positions.back()) break;
    std::vector<double> out(q_, 0.0);
    for (int a = 0; a < q_; ++a) {
      if (chi[a] == 0.0) continue;
      for (int b = 0; b < q_; ++b) out[b] += chi[a] * transfer_[a * q_ + b] / lambda_;
    }
    chi = std::move(out);
  }
  double p = 0.0;
  for (int a = 0; a < q_; ++a) p += chi[a] * right_[a];
  return p / inner_;
}

ProbVector TransferMatrix1D::window_marginal(std::span<const int> positions) const {
  ProbVector out;
  out.p.resize(local_count(q_, static_cast<int>(positions.size())));
  std::vector<Spin> values(positions.size());
  for (std::size_t z = 0; z < out.p.size(); ++z) {
    local_decode(q_, z, values);
    out.p[z] = window_prob(positions, values);
  }
  return out;
}

double beta_mixing_bound(const ProbVector& mu, const Torus& geom, int q,
                         const Window& lam, int n) {
  const Window inner_ball = centered_cube(geom, n);
  if (!window_subset(lam, inner_ball))
    throw std::invalid_argument("lambda must lie inside the separating cube");
  Window outer;
  for (int s = 0; s < geom.site_count(); ++s)
    if (!inner_ball.contains(s)) outer.sites.push_back(s);

  const std::size_t na = local_count(q, lam.size());
  const std::size_t nb = local_count(q, outer.size());
  if (na * nb > (std::size_t{1} << 20))
    throw CapacityError("atom count exceeds the 2^20 mixing guard");

  const StateCodec codec(q, geom.site_count());
  std::vector<double> joint(na * nb, 0.0), pa(na, 0.0), pb(nb, 0.0);
  std::vector<Spin> va(lam.sites.size()), vb(outer.sites.size());
  for (std::size_t s = 0; s < mu.size(); ++s) {
    for (std::size_t i = 0; i < lam.sites.size(); ++i) va[i] = codec.digit(s, lam.sites[i]);
    for (std::size_t i = 0; i < outer.sites.size(); ++i) vb[i] = codec.digit(s, outer.sites[i]);
    const std::size_t ia = local_index(q, va);
    const std::size_t ib = local_index(q, vb);
    joint[ia * nb + ib] += mu[s];
    pa[ia] += mu[s];
    pb[ib] += mu[s];
  }
  double total = 0.0;
  for (std::size_t ia = 0; ia < na; ++ia)
    for (std::size_t ib = 0; ib < nb; ++ib)
      total += std::abs(joint[ia * nb + ib] - pa[ia] * pb[ib]);
  return 0.5 * total;
}

}  // namespace gibbslab
