#include "gibbslab/entropy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>

#include "gibbslab/parallel.hpp"

namespace gibbslab {

std::vector<double> MarginalSource::table(const Window& w) const {
  std::vector<double> out(local_count(q(), w.size()));
  std::vector<Spin> values(w.sites.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    local_decode(q(), i, values);
    out[i] = prob(w, values);
  }
  return out;
}

ExactTorusSource::ExactTorusSource(ProbVector mu, int q, const Torus& geom)
    : MarginalSource(q, true, "torus-exact"),
      mu_(std::move(mu)),
      codec_(q, geom.site_count()) {
  if (mu_.size() != codec_.state_count())
    throw std::invalid_argument("measure size does not match the torus");
  mu_.validate(1e-9);
}

double ExactTorusSource::prob(const Window& w, std::span<const Spin> values) const {
  double total = 0.0;
  for (std::size_t s = 0; s < mu_.size(); ++s) {
    bool match = true;
    for (std::size_t i = 0; i < w.sites.size() && match; ++i)
      match = codec_.digit(s, w.sites[i]) == values[i];
    if (match) total += mu_[s];
  }
  return total;
}

std::vector<double> ExactTorusSource::table(const Window& w) const {
  std::vector<double> out(local_count(q(), w.size()), 0.0);
  std::vector<std::size_t> pow(w.sites.size());
  std::size_t p = 1;
  for (std::size_t i = 0; i < w.sites.size(); ++i) {
    pow[i] = p;
    p *= static_cast<std::size_t>(q());
  }
  for (std::size_t s = 0; s < mu_.size(); ++s) {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < w.sites.size(); ++i)
      idx += static_cast<std::size_t>(codec_.digit(s, w.sites[i])) * pow[i];
    out[idx] += mu_[s];
  }
  return out;
}

ProductSource::ProductSource(int q, std::vector<double> site_law)
    : MarginalSource(q, true, "product"), law_(std::move(site_law)) {
  if (law_.size() != static_cast<std::size_t>(q))
    throw std::invalid_argument("product law needs one weight per spin value");
  double s = 0.0;
  for (double v : law_) {
    if (v < 0.0) throw std::invalid_argument("product law weights must be nonnegative");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-12) throw std::invalid_argument("product law must sum to one");
}

double ProductSource::prob(const Window&, std::span<const Spin> values) const {
  double p = 1.0;
  for (Spin v : values) p *= law_[v];
  return p;
}

TransferSource::TransferSource(const Potential& pot)
    : MarginalSource(pot.q, true, "transfer"), tm_(pot) {}

double TransferSource::prob(const Window& w, std::span<const Spin> values) const {
  if (w.sites.empty()) return 1.0;
  std::vector<std::pair<int, Spin>> ordered(w.sites.size());
  for (std::size_t i = 0; i < w.sites.size(); ++i) ordered[i] = {w.sites[i], values[i]};
  std::sort(ordered.begin(), ordered.end());
  std::vector<int> pos(ordered.size());
  std::vector<Spin> val(ordered.size());
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    pos[i] = ordered[i].first;
    val[i] = ordered[i].second;
  }
  return tm_.window_prob(pos, val);
}

TruncationScheme::TruncationScheme(const Torus& geom, int n_max)
    : geom_(geom), n_max_(n_max) {
  if (n_max < 1) throw std::invalid_argument("scheme needs n_max >= 1");
  if ((1 << (n_max + 1)) - 1 > geom_.min_side())
    throw GeometryError("window sequence does not fit: need 2^(n+1)-1 <= side");
}

Window TruncationScheme::lambda(int n) const {
  if (n < 1 || n > n_max_) throw std::invalid_argument("n outside the scheme");
  return centered_cube(geom_, (1 << n) - 1);
}

Window TruncationScheme::lambda_tilde(int n) const {
  if (n < 1 || n > n_max_) throw std::invalid_argument("n outside the scheme");
  return centered_cube(geom_, (1 << n) - n - 1);
}

Window TruncationScheme::ball(int center_site, int radius) const {
  if (radius < 0) return Window{};
  return ball_window(geom_, center_site, radius);
}

double h_window(const MarginalSource& nu, const MarginalSource& mu, const Window& lam) {
  const auto nt = nu.table(lam);
  const auto mt = mu.table(lam);
  double check = 0.0;
  for (double v : nt) check += v;
  if (std::abs(check - 1.0) > 1e-9)
    throw ContractError("marginal source is not consistent on the window");
  double h = 0.0;
  for (std::size_t i = 0; i < nt.size(); ++i) {
    if (nt[i] == 0.0) continue;
    if (mt[i] == 0.0) return kInf;
    h += nt[i] * std::log(nt[i] / mt[i]);
  }
  return h;
}

namespace {

struct Placement {
  const UpdateRule* rule;
  int x;
  std::vector<int> dep;    // dependence sites, table order
  std::vector<int> shape;  // shape sites, shape order
  Window shape_window;     // sorted
};

std::vector<int> sites_of(const Torus& geom, std::span<const std::vector<int>> offsets, int x) {
  std::vector<int> out(offsets.size());
  for (std::size_t i = 0; i < offsets.size(); ++i)
    out[i] = geom.translate_site(x, offsets[i]);
  return out;
}

// Rule translates whose shape meets (or lies inside) the window. The census
// must respect the combinatorial bound #translates <= |shape| |window|.
std::vector<Placement> collect_placements(const RateFamily& rates, const Torus& geom,
                                          const Window& region, bool inside_only) {
  std::vector<Placement> out;
  for (const auto& rule : rates.rules) {
    std::size_t count = 0;
    for (int x = 0; x < geom.site_count(); ++x) {
      Placement p{&rule, x, sites_of(geom, rule.dependence, x), sites_of(geom, rule.shape, x), {}};
      std::vector<int> sorted = p.shape;
      std::sort(sorted.begin(), sorted.end());
      p.shape_window.sites = sorted;
      const bool keep = inside_only ? window_subset(p.shape_window, region)
                                    : windows_intersect(p.shape_window, region);
      if (!keep) continue;
      ++count;
      out.push_back(std::move(p));
    }
    if (!inside_only &&
        count > rule.shape.size() * static_cast<std::size_t>(region.size()))
      throw ContractError("translate census exceeds the |shape||window| bound");
  }
  return out;
}

// Window listing lam's sites first (in lam order), then the extra sites.
struct JointWindow {
  Window window;
  std::size_t lam_count = 0;
  std::vector<std::size_t> pow;  // q^position

  JointWindow(int q, const Window& lam, std::span<const int> extra_candidates) {
    window.sites = lam.sites;
    std::vector<int> extras;
    for (int s : extra_candidates)
      if (!std::binary_search(lam.sites.begin(), lam.sites.end(), s)) extras.push_back(s);
    std::sort(extras.begin(), extras.end());
    extras.erase(std::unique(extras.begin(), extras.end()), extras.end());
    window.sites.insert(window.sites.end(), extras.begin(), extras.end());
    lam_count = lam.sites.size();
    pow.resize(window.sites.size() + 1);
    std::size_t p = 1;
    for (std::size_t i = 0; i <= window.sites.size(); ++i) {
      pow[i] = p;
      p *= static_cast<std::size_t>(q);
    }
  }

  std::size_t position(int site) const {
    const auto it = std::find(window.sites.begin(), window.sites.end(), site);
    if (it == window.sites.end()) throw std::logic_error("site missing from joint window");
    return static_cast<std::size_t>(it - window.sites.begin());
  }
};

double g_core(const RateFamily& rates_in, const MarginalSource& nu, const MarginalSource& mu,
              const TruncationScheme& sch, int n, bool tilde) {
  if (!nu.exact() || !mu.exact())
    throw ContractError("entropy functionals need exact marginal sources");
  const RateFamily rates = merge_shape_classes(rates_in);
  const Torus& geom = sch.torus();
  const int q = rates.q;
  const Window lam = sch.lambda(n);
  const auto nuL = nu.table(lam);
  const auto muL = mu.table(lam);
  const std::size_t n_lam = nuL.size();
  std::vector<double> logr(n_lam);
  for (std::size_t i = 0; i < n_lam; ++i) {
    if (muL[i] <= 0.0)
      throw ContractError("g_n requires mu positive on the window cylinders");
    logr[i] = nuL[i] > 0.0 ? std::log(nuL[i] / muL[i]) : -kInf;
  }

  const auto placements =
      collect_placements(rates, geom, tilde ? sch.lambda_tilde(n) : lam, tilde);

  double total = 0.0;
  for (const auto& p : placements) {
    const JointWindow J(q, lam, p.dep);
    const bool plain = J.window.sites.size() == lam.sites.size();
    const std::vector<double> owned = plain ? std::vector<double>() : nu.table(J.window);
    const std::vector<double>& nuJ = plain ? nuL : owned;
    std::vector<std::size_t> dep_pow(p.dep.size());
    for (std::size_t i = 0; i < p.dep.size(); ++i) dep_pow[i] = J.pow[J.position(p.dep[i])];
    // shape digits that live inside lam move the target cylinder
    struct ShapeSlot {
      std::size_t lam_pow;
      bool in_lam;
      std::size_t j_pow;
    };
    std::vector<ShapeSlot> slots(p.shape.size());
    for (std::size_t k = 0; k < p.shape.size(); ++k) {
      const std::size_t pos = J.position(p.shape[k]);
      slots[k] = {pos < J.lam_count ? J.pow[pos] : 0, pos < J.lam_count, J.pow[pos]};
    }
    const UpdateRule& rule = *p.rule;
    const std::size_t ncols = rule.cols();

    total += par::blocked_sum(nuJ.size(), [&](std::size_t omega) {
      const double w = nuJ[omega];
      if (!(w > 0.0)) return 0.0;
      std::size_t dep_idx = 0;
      {
        std::size_t pw = 1;
        for (std::size_t i = 0; i < dep_pow.size(); ++i) {
          dep_idx += ((omega / dep_pow[i]) % static_cast<std::size_t>(q)) * pw;
          pw *= static_cast<std::size_t>(q);
        }
      }
      const std::size_t src = omega % J.pow[J.lam_count];
      double acc = 0.0;
      for (std::size_t c = 0; c < ncols; ++c) {
        const double r = rule.rate(dep_idx, c);
        if (r == 0.0) continue;
        long long tgt = static_cast<long long>(src);
        bool moved = false;
        std::size_t cc = c;
        for (std::size_t k = 0; k < slots.size(); ++k) {
          const long long xi_k = static_cast<long long>(cc % static_cast<std::size_t>(q));
          cc /= static_cast<std::size_t>(q);
          const long long cur =
              static_cast<long long>((omega / slots[k].j_pow) % static_cast<std::size_t>(q));
          if (slots[k].in_lam && xi_k != cur) {
            tgt += (xi_k - cur) * static_cast<long long>(slots[k].lam_pow);
            moved = true;
          } else if (xi_k != cur) {
            moved = true;
          }
        }
        if (!moved) continue;  // xi equal to the current shape configuration
        acc += r * (logr[static_cast<std::size_t>(tgt)] - logr[src]);
      }
      return w * acc;
    });
  }
  return total;
}

}  // namespace

double g_n(const RateFamily& rates, const MarginalSource& nu, const MarginalSource& mu,
           const TruncationScheme& sch, int n) {
  return g_core(rates, nu, mu, sch, n, false);
}

double g_tilde_n(const RateFamily& rates, const MarginalSource& nu, const MarginalSource& mu,
                 const TruncationScheme& sch, int n) {
  return g_core(rates, nu, mu, sch, n, true);
}

double truncated_rate(const UpdateRule& rule, const Torus& geom, int x, const Window& ball,
                      const Configuration& eta, std::span<const Spin> xi) {
  const auto dep = sites_of(geom, rule.dependence, x);
  const std::size_t q = static_cast<std::size_t>(rule.q);
  std::size_t base = 0;
  std::vector<std::size_t> free_pow;
  {
    std::size_t pw = 1;
    for (int site : dep) {
      if (ball.contains(site))
        base += static_cast<std::size_t>(eta.spins[site]) * pw;
      else
        free_pow.push_back(pw);
      pw *= q;
    }
  }
  const std::size_t col = local_index(rule.q, xi);
  double best = kInf;
  std::vector<Spin> free_vals(free_pow.size(), 0);
  const std::size_t nfree = local_count(rule.q, static_cast<int>(free_pow.size()));
  for (std::size_t v = 0; v < nfree; ++v) {
    local_decode(rule.q, v, free_vals);
    std::size_t row = base;
    for (std::size_t i = 0; i < free_pow.size(); ++i)
      row += static_cast<std::size_t>(free_vals[i]) * free_pow[i];
    best = std::min(best, rule.rate(row, col));
  }
  return best;
}

namespace {

// F_0(arg) nu(xi eta) with the three-branch case split; the integral
// argument is assembled by the caller.
double f_value(double integral, double nu_xi_eta, double nu_eta) {
  if (nu_xi_eta > 0.0) return phi(integral / nu_xi_eta) * nu_xi_eta;
  if (nu_eta > 0.0) return -kInf;
  return 0.0;
}

}  // namespace

double f_term(const MarginalSource& nu, const Specification& spec, const TruncationScheme& sch,
              int n, std::span<const Spin> eta_lambda, const Window& delta,
              std::span<const Spin> xi, RatioOrientation orientation) {
  const Window lam = sch.lambda(n);
  if (!window_subset(delta, lam)) throw std::invalid_argument("delta must lie inside lambda_n");
  const int q = nu.q();
  const Torus& geom = sch.torus();

  std::vector<Spin> mixed(eta_lambda.begin(), eta_lambda.end());
  std::vector<int> delta_pos;
  for (int s : delta.sites) {
    const auto it = std::lower_bound(lam.sites.begin(), lam.sites.end(), s);
    delta_pos.push_back(static_cast<int>(it - lam.sites.begin()));
  }
  for (std::size_t i = 0; i < delta_pos.size(); ++i) mixed[delta_pos[i]] = xi[i];
  const double nu_xi_eta = nu.prob(lam, mixed);
  const double nu_eta = nu.prob(lam, eta_lambda);
  if (nu_xi_eta <= 0.0) return f_value(0.0, nu_xi_eta, nu_eta);

  const Window dep = spec.dependence(delta);
  const JointWindow J(q, lam, dep.sites);
  const std::size_t n_extra =
      local_count(q, static_cast<int>(J.window.sites.size() - J.lam_count));
  Configuration omega(q, std::vector<Spin>(geom.site_count(), 0));
  for (std::size_t i = 0; i < lam.sites.size(); ++i) omega.spins[lam.sites[i]] = eta_lambda[i];
  std::vector<Spin> eta_delta(delta.sites.size());
  for (std::size_t i = 0; i < delta.sites.size(); ++i)
    eta_delta[i] = eta_lambda[delta_pos[i]];

  std::vector<Spin> extra(J.window.sites.size() - J.lam_count);
  std::vector<Spin> joint(J.window.sites.size());
  std::copy(eta_lambda.begin(), eta_lambda.end(), joint.begin());
  std::vector<double> grow(local_count(q, delta.size()));
  double integral = 0.0;
  for (std::size_t z = 0; z < n_extra; ++z) {
    local_decode(q, z, extra);
    for (std::size_t i = 0; i < extra.size(); ++i) {
      omega.spins[J.window.sites[J.lam_count + i]] = extra[i];
      joint[J.lam_count + i] = extra[i];
    }
    const double w = nu.prob(J.window, joint);
    if (w == 0.0) continue;
    spec.gamma_row(delta, omega, grow);
    const double g_xi = grow[local_index(q, xi)];
    const double g_eta = grow[local_index(q, eta_delta)];
    const double ratio =
        orientation == RatioOrientation::key_equality ? g_xi / g_eta : g_eta / g_xi;
    integral += w * ratio;
  }
  return f_value(integral, nu_xi_eta, nu_eta);
}

double s_n(const RateFamily& rates_in, const Specification& spec, const MarginalSource& nu,
           const TruncationScheme& sch, int n, RatioOrientation orientation) {
  if (!nu.exact()) throw ContractError("entropy functionals need exact marginal sources");
  const RateFamily rates = merge_shape_classes(rates_in);
  const Torus& geom = sch.torus();
  const int q = rates.q;
  const std::size_t qs = static_cast<std::size_t>(q);
  const Window lam = sch.lambda(n);
  const auto nuL = nu.table(lam);
  const std::size_t n_lam = nuL.size();
  const auto placements = collect_placements(rates, geom, sch.lambda_tilde(n), true);

  std::atomic<bool> sign_violation{false};
  double total = 0.0;
  for (const auto& p : placements) {
    const Window delta_sorted = p.shape_window;
    const Window dep_gamma = spec.dependence(delta_sorted);
    const JointWindow J(q, lam, dep_gamma.sites);
    const bool plain = J.window.sites.size() == lam.sites.size();
    const std::vector<double> owned = plain ? std::vector<double>() : nu.table(J.window);
    const std::vector<double>& nuJ = plain ? nuL : owned;
    const Window ball = sch.ball(p.x, n - 1);
    const UpdateRule& rule = *p.rule;
    const std::size_t ncols = rule.cols();
    const std::size_t n_extra =
        local_count(q, static_cast<int>(J.window.sites.size() - J.lam_count));

    // gamma ratio table over the dependence neighborhood of delta:
    // gtable[cfg * ncols + loc] = gamma(value at loc | boundary cfg)
    const std::size_t n_gamma_cfg = local_count(q, dep_gamma.size());
    std::vector<double> gtable(n_gamma_cfg * ncols);
    {
      Configuration boundary(q, std::vector<Spin>(geom.site_count(), 0));
      std::vector<Spin> cfg(dep_gamma.sites.size());
      std::vector<double> row(ncols);
      for (std::size_t g = 0; g < n_gamma_cfg; ++g) {
        local_decode(q, g, cfg);
        for (std::size_t i = 0; i < dep_gamma.sites.size(); ++i)
          boundary.spins[dep_gamma.sites[i]] = cfg[i];
        spec.gamma_row(delta_sorted, boundary, row);
        std::copy(row.begin(), row.end(), gtable.begin() + g * ncols);
      }
    }
    // digit extractors for the gamma boundary index from (eta, extra) pairs
    struct DigitSlot {
      bool in_lam;
      std::size_t pow;  // lam pow or extra pow
    };
    std::vector<DigitSlot> gslots(dep_gamma.sites.size());
    for (std::size_t i = 0; i < dep_gamma.sites.size(); ++i) {
      const std::size_t pos = J.position(dep_gamma.sites[i]);
      gslots[i] = {pos < J.lam_count, pos < J.lam_count
                                          ? J.pow[pos]
                                          : J.pow[pos] / J.pow[J.lam_count]};
    }

    // shape bookkeeping: lam powers per shape slot and the map between the
    // shape order and the sorted window order
    std::vector<std::size_t> shape_lam_pow(p.shape.size());
    std::vector<int> sorted_from_shape(p.shape.size());
    for (std::size_t k = 0; k < p.shape.size(); ++k) {
      const auto it = std::lower_bound(lam.sites.begin(), lam.sites.end(), p.shape[k]);
      if (it == lam.sites.end() || *it != p.shape[k])
        throw std::logic_error("shape site escaped lambda");
      std::size_t pw = 1;
      for (auto jt = lam.sites.begin(); jt != it; ++jt) pw *= qs;
      shape_lam_pow[k] = pw;
      const auto st =
          std::lower_bound(delta_sorted.sites.begin(), delta_sorted.sites.end(), p.shape[k]);
      sorted_from_shape[k] = static_cast<int>(st - delta_sorted.sites.begin());
    }
    // column permutation: sorted-window local index for each shape-order column
    std::vector<std::size_t> col_sorted(ncols);
    {
      std::vector<Spin> xi(p.shape.size()), xi_sorted(p.shape.size());
      for (std::size_t c = 0; c < ncols; ++c) {
        local_decode(q, c, xi);
        for (std::size_t k = 0; k < p.shape.size(); ++k)
          xi_sorted[sorted_from_shape[k]] = xi[k];
        col_sorted[c] = local_index(q, xi_sorted);
      }
    }

    // truncated reverse rate precomputation: the start configuration is
    // (xi on delta, eta elsewhere); dependence digits outside the ball are
    // minimized over
    struct TruncSlot {
      enum Kind { shape, lam, free } kind;
      std::size_t src_pow;   // shape pow (shape order) or lam pow
      std::size_t rule_pow;  // q^position in the rule table
    };
    std::vector<TruncSlot> tslots;
    std::vector<std::size_t> free_pows;
    {
      std::size_t pw = 1;
      for (std::size_t i = 0; i < rule.dependence.size(); ++i) {
        const int site = geom.translate_site(p.x, rule.dependence[i]);
        if (!ball.contains(site)) {
          // the truncation minimizes over everything outside the ball
          free_pows.push_back(pw);
        } else if (const auto sh = std::find(p.shape.begin(), p.shape.end(), site);
                   sh != p.shape.end()) {
          std::size_t spw = 1;
          for (auto kt = p.shape.begin(); kt != sh; ++kt) spw *= qs;
          tslots.push_back({TruncSlot::shape, spw, pw});
        } else {
          const auto it = std::lower_bound(lam.sites.begin(), lam.sites.end(), site);
          if (it == lam.sites.end() || *it != site)
            throw std::logic_error("ball site escaped lambda");
          std::size_t lpw = 1;
          for (auto jt = lam.sites.begin(); jt != it; ++jt) lpw *= qs;
          tslots.push_back({TruncSlot::lam, lpw, pw});
        }
        pw *= qs;
      }
    }
    const std::size_t n_free = local_count(q, static_cast<int>(free_pows.size()));

    total += par::blocked_sum(n_lam, [&](std::size_t eta_idx) {
      const double nu_eta = nuL[eta_idx];
      double acc = 0.0;
      // local index of eta on delta in sorted order
      std::size_t eta_loc = 0;
      for (std::size_t k = 0; k < p.shape.size(); ++k) {
        std::size_t spos = 1;
        for (int s = 0; s < sorted_from_shape[k]; ++s) spos *= qs;
        eta_loc += ((eta_idx / shape_lam_pow[k]) % qs) * spos;
      }
      for (std::size_t c = 0; c < ncols; ++c) {
        // target cylinder index and the diagonal skip
        bool same = true;
        long long xi_eta_idx = static_cast<long long>(eta_idx);
        {
          std::size_t cc = c;
          for (std::size_t k = 0; k < p.shape.size(); ++k) {
            const long long xi_k = static_cast<long long>(cc % qs);
            cc /= qs;
            const long long cur = static_cast<long long>((eta_idx / shape_lam_pow[k]) % qs);
            if (xi_k != cur) {
              same = false;
              xi_eta_idx += (xi_k - cur) * static_cast<long long>(shape_lam_pow[k]);
            }
          }
        }
        if (same) continue;
        const double nu_xi_eta = nuL[static_cast<std::size_t>(xi_eta_idx)];
        if (nu_xi_eta <= 0.0 && nu_eta <= 0.0) continue;

        // truncated reverse rate; the target column is eta's shape values
        double trunc = kInf;
        {
          std::size_t base = 0;
          for (const auto& slot : tslots) {
            std::size_t digit;
            if (slot.kind == TruncSlot::shape)
              digit = (c / slot.src_pow) % qs;
            else
              digit = (eta_idx / slot.src_pow) % qs;
            base += digit * slot.rule_pow;
          }
          std::size_t eta_col = 0;
          {
            std::size_t pw = 1;
            for (std::size_t k = 0; k < p.shape.size(); ++k) {
              eta_col += ((eta_idx / shape_lam_pow[k]) % qs) * pw;
              pw *= qs;
            }
          }
          for (std::size_t v = 0; v < n_free; ++v) {
            std::size_t row = base;
            std::size_t vv = v;
            for (std::size_t i = 0; i < free_pows.size(); ++i) {
              row += (vv % qs) * free_pows[i];
              vv /= qs;
            }
            trunc = std::min(trunc, rule.rate(row, eta_col));
          }
        }
        if (trunc == 0.0) continue;

        double fval;
        if (nu_xi_eta > 0.0) {
          const std::size_t xi_loc = col_sorted[c];
          double integral = 0.0;
          for (std::size_t z = 0; z < n_extra; ++z) {
            const double w = nuJ[eta_idx + z * J.pow[J.lam_count]];
            if (w == 0.0) continue;
            std::size_t gidx = 0, pw = 1;
            for (const auto& slot : gslots) {
              const std::size_t digit =
                  slot.in_lam ? (eta_idx / slot.pow) % qs : (z / slot.pow) % qs;
              gidx += digit * pw;
              pw *= qs;
            }
            const double g_xi = gtable[gidx * ncols + xi_loc];
            const double g_eta = gtable[gidx * ncols + eta_loc];
            const double ratio = orientation == RatioOrientation::key_equality
                                     ? g_xi / g_eta
                                     : g_eta / g_xi;
            integral += w * ratio;
          }
          fval = phi(integral / nu_xi_eta) * nu_xi_eta;
        } else {
          fval = -kInf;
        }
        const double term = fval * trunc;
        if (term > 1e-12) sign_violation.store(true, std::memory_order_relaxed);
        acc += term;
      }
      return acc;
    });
  }
  if (sign_violation.load())
    throw ContractError("s_n produced a positive addend");
  return total;
}

double S_n(const RateFamily& rates_in, const Specification& spec, const MarginalSource& nu,
           const MarginalSource& mu, const TruncationScheme& sch, int n) {
  (void)spec;  // the mu ratios replace the conditional kernels here
  if (!nu.exact() || !mu.exact())
    throw ContractError("entropy functionals need exact marginal sources");
  const RateFamily rates = merge_shape_classes(rates_in);
  const Torus& geom = sch.torus();
  const int q = rates.q;
  const Window lam = sch.lambda(n);
  const auto nuL = nu.table(lam);
  const auto muL = mu.table(lam);
  const std::size_t n_lam = nuL.size();
  for (double v : muL)
    if (v <= 0.0) throw ContractError("S_n requires mu positive on the window cylinders");
  const auto placements = collect_placements(rates, geom, sch.lambda_tilde(n), true);

  std::atomic<bool> sign_violation{false};
  double total = 0.0;
  for (const auto& p : placements) {
    const JointWindow J(q, lam, p.dep);
    const bool plain = J.window.sites.size() == lam.sites.size();
    const std::vector<double> owned = plain ? std::vector<double>() : nu.table(J.window);
    const std::vector<double>& nuJ = plain ? nuL : owned;
    const UpdateRule& rule = *p.rule;
    const std::size_t ncols = rule.cols();
    const std::size_t n_extra =
        local_count(q, static_cast<int>(J.window.sites.size() - J.lam_count));
    std::vector<std::size_t> dep_pow(p.dep.size());
    for (std::size_t i = 0; i < p.dep.size(); ++i) dep_pow[i] = J.pow[J.position(p.dep[i])];
    std::vector<std::size_t> shape_lam_pow(p.shape.size());
    for (std::size_t k = 0; k < p.shape.size(); ++k) {
      const auto it = std::lower_bound(lam.sites.begin(), lam.sites.end(), p.shape[k]);
      if (it == lam.sites.end() || *it != p.shape[k])
        throw std::logic_error("shape site escaped lambda");
      std::size_t pw = 1;
      for (auto jt = lam.sites.begin(); jt != it; ++jt) pw *= static_cast<std::size_t>(q);
      shape_lam_pow[k] = pw;
    }

    total += par::blocked_sum(n_lam, [&](std::size_t eta_idx) {
      const double nu_eta = nuL[eta_idx];
      const double mu_eta = muL[eta_idx];
      thread_local Configuration filled;
      thread_local std::vector<Spin> lam_vals, xi_vals;
      if (filled.spins.size() != static_cast<std::size_t>(geom.site_count()) || filled.q != q) {
        filled.q = q;
        filled.spins.assign(geom.site_count(), 0);
      }
      lam_vals.resize(lam.sites.size());
      local_decode(q, eta_idx, lam_vals);
      xi_vals.resize(p.shape.size());

      double acc = 0.0;
      for (std::size_t c = 0; c < ncols; ++c) {
        local_decode(q, c, xi_vals);
        bool same = true;
        long long xi_eta_idx = static_cast<long long>(eta_idx);
        for (std::size_t k = 0; k < p.shape.size(); ++k) {
          const std::size_t lam_pos_digit =
              (eta_idx / shape_lam_pow[k]) % static_cast<std::size_t>(q);
          if (xi_vals[k] != lam_pos_digit) {
            same = false;
            xi_eta_idx += (static_cast<long long>(xi_vals[k]) -
                           static_cast<long long>(lam_pos_digit)) *
                          static_cast<long long>(shape_lam_pow[k]);
          }
        }
        if (same) continue;
        const double nu_xi_eta = nuL[static_cast<std::size_t>(xi_eta_idx)];
        const double mu_xi_eta = muL[static_cast<std::size_t>(xi_eta_idx)];

        // truncated rate c^(n): conditional average of the rate over the
        // eta cylinder, falling back to the zero-filled extension.
        double c_n;
        if (nu_eta > 0.0) {
          double avg = 0.0;
          for (std::size_t z = 0; z < n_extra; ++z) {
            const double w = nuJ[eta_idx + z * J.pow[J.lam_count]];
            if (w == 0.0) continue;
            const std::size_t omega = eta_idx + z * J.pow[J.lam_count];
            std::size_t dep_idx = 0, pw = 1;
            for (std::size_t i = 0; i < dep_pow.size(); ++i) {
              dep_idx += ((omega / dep_pow[i]) % static_cast<std::size_t>(q)) * pw;
              pw *= static_cast<std::size_t>(q);
            }
            avg += w * rule.rate(dep_idx, c);
          }
          c_n = avg / nu_eta;
        } else {
          for (std::size_t i = 0; i < lam.sites.size(); ++i)
            filled.spins[lam.sites[i]] = lam_vals[i];
          std::size_t dep_idx = 0, pw = 1;
          for (int site : p.dep) {
            dep_idx += static_cast<std::size_t>(filled.spins[site]) * pw;
            pw *= static_cast<std::size_t>(q);
          }
          c_n = rule.rate(dep_idx, c);
        }
        if (c_n == 0.0) continue;

        double F;
        if (nu_xi_eta > 0.0) {
          const double u = (nu_eta * mu_xi_eta) / (nu_xi_eta * mu_eta);
          F = phi(u) * nu_xi_eta;
        } else if (nu_eta > 0.0) {
          F = -kInf;
        } else {
          continue;
        }
        const double term = F * c_n * mu_eta / mu_xi_eta;
        if (term > 1e-12) sign_violation.store(true, std::memory_order_relaxed);
        acc += term;
      }
      return acc;
    });
  }
  if (sign_violation.load())
    throw ContractError("S_n produced a positive addend");
  return total;
}

double g_correction(int n, int dim) {
  double log_g = 0.0;
  for (int k = n; k < 64; ++k) {
    const double denom = std::pow(2.0, k + 2) - 1.0;
    log_g += dim * std::log1p(-1.0 / denom);
    if (1.0 / denom < 1e-18) break;
  }
  return std::exp(log_g);
}

CorrectedSequence corrected_sequence(std::span<const double> s_values, int first_n, int dim) {
  if (s_values.size() < 2) throw std::invalid_argument("need at least two s_n values");
  CorrectedSequence out;
  for (std::size_t i = 0; i < s_values.size(); ++i) {
    const int n = first_n + static_cast<int>(i);
    const double volume = std::pow(std::pow(2.0, n + 1) - 1.0, dim);
    out.values.push_back(g_correction(n, dim) * s_values[i] / volume);
  }
  out.nonincreasing = true;
  for (std::size_t i = 1; i < out.values.size(); ++i)
    if (out.values[i] > out.values[i - 1] + 1e-12) out.nonincreasing = false;
  return out;
}

Configuration fill_configuration(std::span<const Spin> eta_lambda, int n,
                                 const TruncationScheme& sch, int q) {
  const Window lam = sch.lambda(n);
  if (eta_lambda.size() != static_cast<std::size_t>(lam.size()))
    throw std::invalid_argument("window values do not match lambda_n");
  Configuration out(q, std::vector<Spin>(sch.torus().site_count(), 0));
  for (std::size_t i = 0; i < eta_lambda.size(); ++i)
    out.spins[lam.sites[i]] = eta_lambda[i];
  return out;
}

double boundary_constant(const RateFamily& rates, double nonnull_delta_mu) {
  const double sup = rates.sup_rate();
  const double qr = std::pow(static_cast<double>(rates.q), rates.max_shape_size());
  return sup * qr * std::max(std::log(1.0 / nonnull_delta_mu), std::exp(-1.0));
}

bool truncation_dichotomy(const UpdateRule& rule, const Torus& geom, int x,
                          const TruncationScheme& sch) {
  const auto dep = sites_of(geom, rule.dependence, x);
  int cover_radius = 0;
  for (int s : dep) cover_radius = std::max(cover_radius, geom.distance(x, s));
  Configuration eta(rule.q, std::vector<Spin>(geom.site_count(), 0));
  std::vector<Spin> dep_vals(dep.size());
  std::vector<Spin> xi(rule.shape.size());
  for (std::size_t row = 0; row < rule.rows(); ++row) {
    local_decode(rule.q, row, dep_vals);
    for (std::size_t i = 0; i < dep.size(); ++i) eta.spins[dep[i]] = dep_vals[i];
    for (std::size_t c = 0; c < rule.cols(); ++c) {
      local_decode(rule.q, c, xi);
      double prev = -1.0;
      for (int r = 0; r <= cover_radius; ++r) {
        const double v = truncated_rate(rule, geom, x, sch.ball(x, r), eta, xi);
        if (v + 1e-15 < prev) return false;  // must be nondecreasing in the radius
        prev = v;
      }
      // the covering ball reproduces the plain rate, which together with
      // monotonicity gives the positive-from-some-radius-on dichotomy
      if (std::abs(prev - rule.rate(row, c)) > 1e-15) return false;
    }
  }
  return true;
}

}  // namespace gibbslab
