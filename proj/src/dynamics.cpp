#include "gibbslab/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "gibbslab/parallel.hpp"

namespace gibbslab {

void UpdateRule::finalize() {
  if (shape.empty()) throw std::invalid_argument("rule needs a nonempty shape");
  const std::size_t d = shape.front().size();
  bool origin = false;
  for (const auto& o : shape) {
    if (o.size() != d) throw std::invalid_argument("mixed offset dimensions");
    if (std::all_of(o.begin(), o.end(), [](int c) { return c == 0; })) origin = true;
  }
  if (!origin) throw std::invalid_argument("shape must contain the origin");
  shape_pos.clear();
  for (const auto& o : shape) {
    const auto it = std::find(dependence.begin(), dependence.end(), o);
    if (it == dependence.end())
      throw std::invalid_argument("dependence must contain the shape");
    shape_pos.push_back(static_cast<int>(it - dependence.begin()));
  }
  if (values.size() != rows() * cols())
    throw std::invalid_argument("rate table size mismatch");
}

double UpdateRule::sup_rate() const {
  double m = 0.0;
  for (double v : values) m = std::max(m, v);
  return m;
}

std::optional<double> UpdateRule::min_positive_rate() const {
  std::optional<double> m;
  for (double v : values)
    if (v > 0.0 && (!m || v < *m)) m = v;
  return m;
}

double UpdateRule::oscillation(int dep_pos, Spin i, std::size_t xi_index) const {
  std::size_t p = 1;
  for (int k = 0; k < dep_pos; ++k) p *= static_cast<std::size_t>(q);
  double worst = 0.0;
  for (std::size_t row = 0; row < rows(); ++row) {
    const std::size_t digit = (row / p) % static_cast<std::size_t>(q);
    const std::size_t flipped_row = row + (static_cast<std::size_t>(i) - digit) * p;
    worst = std::max(worst, std::abs(rate(flipped_row, xi_index) - rate(row, xi_index)));
  }
  return worst;
}

double RateFamily::sup_rate() const {
  double m = 0.0;
  for (const auto& r : rules) m = std::max(m, r.sup_rate());
  return m;
}

std::optional<double> RateFamily::kappa() const {
  std::optional<double> m;
  for (const auto& r : rules) {
    const auto k = r.min_positive_rate();
    if (k && (!m || *k < *m)) m = k;
  }
  return m;
}

int RateFamily::max_shape_size() const {
  int m = 0;
  for (const auto& r : rules)
    if (r.sup_rate() > 0.0) m = std::max(m, static_cast<int>(r.shape.size()));
  return m;
}

namespace {

std::vector<int> signed_offset(const Torus& geom, int site) {
  auto c = geom.coords_of(site);
  for (int a = 0; a < geom.dim(); ++a)
    if (2 * c[a] > geom.side(a)) c[a] -= geom.side(a);
  return c;
}

// Dependence sites of a rule translated to x, in table (offset) order.
std::vector<int> dep_sites(const UpdateRule& rule, const Torus& geom, int x) {
  std::vector<int> out(rule.dependence.size());
  for (std::size_t i = 0; i < rule.dependence.size(); ++i)
    out[i] = geom.translate_site(x, rule.dependence[i]);
  return out;
}

std::vector<int> shape_sites(const UpdateRule& rule, const Torus& geom, int x) {
  std::vector<int> out(rule.shape.size());
  for (std::size_t i = 0; i < rule.shape.size(); ++i)
    out[i] = geom.translate_site(x, rule.shape[i]);
  return out;
}

std::size_t dep_index_of(const UpdateRule& rule, std::span<const int> sites,
                         const Configuration& eta) {
  std::size_t idx = 0;
  std::size_t p = 1;
  for (int s : sites) {
    idx += static_cast<std::size_t>(eta.spins[s]) * p;
    p *= static_cast<std::size_t>(rule.q);
  }
  return idx;
}

// Rate table of single-site rules derived from the specification.
template <class Body>
UpdateRule build_single_site_rule(const Specification& spec, Body&& fill_row) {
  const Torus& geom = spec.torus();
  UpdateRule rule;
  rule.q = spec.q();
  rule.shape = {std::vector<int>(geom.dim(), 0)};
  const Window dep_w = spec.dependence(Window{{0}});
  int origin_pos = -1;
  for (std::size_t i = 0; i < dep_w.sites.size(); ++i) {
    rule.dependence.push_back(signed_offset(geom, dep_w.sites[i]));
    if (dep_w.sites[i] == 0) origin_pos = static_cast<int>(i);
  }
  rule.values.assign(local_count(rule.q, static_cast<int>(rule.dependence.size())) *
                         static_cast<std::size_t>(rule.q),
                     0.0);
  Configuration eta(rule.q, std::vector<Spin>(geom.site_count(), 0));
  std::vector<Spin> dep_values(rule.dependence.size());
  std::vector<double> gamma_row(rule.q);
  const std::size_t nrows = local_count(rule.q, static_cast<int>(rule.dependence.size()));
  for (std::size_t row = 0; row < nrows; ++row) {
    local_decode(rule.q, row, dep_values);
    for (std::size_t i = 0; i < dep_w.sites.size(); ++i)
      eta.spins[dep_w.sites[i]] = dep_values[i];
    spec.gamma_site_row(0, eta, gamma_row);
    const Spin cur = dep_values[origin_pos];
    fill_row(cur, gamma_row, std::span<double>(&rule.values[row * rule.q], rule.q));
  }
  rule.finalize();
  return rule;
}

}  // namespace

RateFamily make_heat_bath(const Specification& spec) {
  RateFamily fam;
  fam.q = spec.q();
  fam.rules.push_back(build_single_site_rule(
      spec, [&](Spin cur, const std::vector<double>& gamma_row, std::span<double> out) {
        for (int j = 0; j < spec.q(); ++j)
          out[j] = (j == cur) ? 0.0 : gamma_row[j];
      }));
  return fam;
}

RateFamily make_cyclic(const Specification& spec, double kappa) {
  if (spec.q() < 2) throw std::invalid_argument("cyclic dynamics needs q >= 2");
  if (kappa <= 0.0) throw std::invalid_argument("cyclic dynamics needs kappa > 0");
  RateFamily fam;
  fam.q = spec.q();
  fam.rules.push_back(build_single_site_rule(
      spec, [&](Spin cur, const std::vector<double>& gamma_row, std::span<double> out) {
        const int next = (cur + 1) % spec.q();
        out[next] = kappa / gamma_row[cur];
      }));
  return fam;
}

RateFamily mix(double a, const RateFamily& r1, double b, const RateFamily& r2) {
  if (a < 0.0 || b < 0.0) throw std::invalid_argument("mixture weights must be nonnegative");
  if (a == 0.0 && b == 0.0) throw ContractError("degenerate mixture: both weights zero");
  if (r1.q != r2.q) throw std::invalid_argument("mixture needs matching local state spaces");
  RateFamily out;
  out.q = r1.q;
  auto add = [&](double w, const RateFamily& fam) {
    if (w == 0.0) return;
    for (const auto& rule : fam.rules) {
      UpdateRule scaled = rule;
      for (double& v : scaled.values) v *= w;
      out.rules.push_back(std::move(scaled));
    }
  };
  add(a, r1);
  add(b, r2);
  return out;
}

RateFamily time_reversal(const RateFamily& rates, const Specification& spec) {
  const Torus& geom = spec.torus();
  RateFamily out;
  out.q = rates.q;
  for (const auto& rule : rates.rules) {
    // joint dependence: the rule's own plus the specification's around Delta
    const Window delta0 = offsets_at(geom, rule.shape, 0);
    const Window spec_dep = spec.dependence(delta0);
    std::vector<std::vector<int>> dep = rule.dependence;
    for (int s : spec_dep.sites) {
      const auto o = signed_offset(geom, s);
      if (std::find(dep.begin(), dep.end(), o) == dep.end()) dep.push_back(o);
    }

    UpdateRule rev;
    rev.q = rule.q;
    rev.shape = rule.shape;
    rev.dependence = dep;

    // positions of the original dependence and of the shape inside the new list
    std::vector<int> old_pos;
    for (const auto& o : rule.dependence)
      old_pos.push_back(static_cast<int>(
          std::find(dep.begin(), dep.end(), o) - dep.begin()));
    std::vector<int> shape_in_new;
    for (const auto& o : rule.shape)
      shape_in_new.push_back(static_cast<int>(
          std::find(dep.begin(), dep.end(), o) - dep.begin()));

    // map shape order -> sorted-window order for gamma evaluation
    std::vector<int> shape_sites_sorted = delta0.sites;
    std::vector<int> sorted_from_shape(rule.shape.size());
    for (std::size_t k = 0; k < rule.shape.size(); ++k) {
      const int site = geom.translate_site(0, rule.shape[k]);
      const auto it = std::lower_bound(shape_sites_sorted.begin(), shape_sites_sorted.end(), site);
      sorted_from_shape[k] = static_cast<int>(it - shape_sites_sorted.begin());
    }

    const std::size_t nrows = local_count(rev.q, static_cast<int>(dep.size()));
    const std::size_t ncols = local_count(rev.q, static_cast<int>(rev.shape.size()));
    rev.values.assign(nrows * ncols, 0.0);

    Configuration eta(rev.q, std::vector<Spin>(geom.site_count(), 0));
    std::vector<int> dep_site(dep.size());
    for (std::size_t i = 0; i < dep.size(); ++i) dep_site[i] = geom.site_of(dep[i]);

    std::vector<Spin> omega(dep.size()), xi(rule.shape.size());
    std::vector<Spin> eta_delta_sorted(rule.shape.size()), xi_sorted(rule.shape.size());
    for (std::size_t row = 0; row < nrows; ++row) {
      local_decode(rev.q, row, omega);
      for (std::size_t i = 0; i < dep.size(); ++i) eta.spins[dep_site[i]] = omega[i];
      for (std::size_t k = 0; k < rule.shape.size(); ++k)
        eta_delta_sorted[sorted_from_shape[k]] = omega[shape_in_new[k]];
      const double g_eta = spec.gamma(delta0, eta_delta_sorted, eta);
      for (std::size_t c = 0; c < ncols; ++c) {
        local_decode(rev.q, c, xi);
        bool same = true;
        for (std::size_t k = 0; k < xi.size(); ++k)
          if (xi[k] != omega[shape_in_new[k]]) same = false;
        if (same) continue;  // diagonal stays zero
        // c_Delta(xi eta_{Delta^c}, eta_Delta): original table at the
        // dependence row with xi written into the shape slots.
        std::size_t fwd_row = 0;
        {
          std::size_t p = 1;
          for (std::size_t i = 0; i < rule.dependence.size(); ++i) {
            Spin v = omega[old_pos[i]];
            for (std::size_t k = 0; k < rule.shape.size(); ++k)
              if (rule.shape_pos[k] == static_cast<int>(i)) v = xi[k];
            fwd_row += static_cast<std::size_t>(v) * p;
            p *= static_cast<std::size_t>(rule.q);
          }
        }
        std::size_t eta_col = 0;
        {
          std::size_t p = 1;
          for (std::size_t k = 0; k < rule.shape.size(); ++k) {
            eta_col += static_cast<std::size_t>(omega[shape_in_new[k]]) * p;
            p *= static_cast<std::size_t>(rule.q);
          }
        }
        const double c_rev = rule.rate(fwd_row, eta_col);
        if (c_rev == 0.0) continue;
        for (std::size_t k = 0; k < xi.size(); ++k) xi_sorted[sorted_from_shape[k]] = xi[k];
        const double g_xi = spec.gamma(delta0, xi_sorted, eta);
        rev.values[row * ncols + c] = c_rev * g_xi / g_eta;
      }
    }
    rev.finalize();
    out.rules.push_back(std::move(rev));
  }
  return out;
}

namespace {

// One rule per translation class: offsets shifted so the lexicographically
// smallest shape offset sits at the origin, tables summed.
struct CanonicalRule {
  std::vector<std::vector<int>> shape;  // sorted
  std::vector<std::vector<int>> dependence;  // sorted union
  std::vector<std::pair<const UpdateRule*, std::vector<int>>> members;  // rule, shift
};

std::vector<int> min_offset(const std::vector<std::vector<int>>& offsets) {
  return *std::min_element(offsets.begin(), offsets.end());
}

std::vector<std::vector<int>> shifted(const std::vector<std::vector<int>>& offsets,
                                      const std::vector<int>& v) {
  std::vector<std::vector<int>> out = offsets;
  for (auto& o : out)
    for (std::size_t a = 0; a < o.size(); ++a) o[a] -= v[a];
  return out;
}

}  // namespace

double rule_rate_at(const UpdateRule& rule, const Torus& geom, int x,
                    const Configuration& eta, std::span<const Spin> xi) {
  std::vector<int> sites(rule.dependence.size());
  for (std::size_t i = 0; i < rule.dependence.size(); ++i)
    sites[i] = geom.translate_site(x, rule.dependence[i]);
  std::size_t row = 0, pw = 1;
  for (int s : sites) {
    row += static_cast<std::size_t>(eta.spins[s]) * pw;
    pw *= static_cast<std::size_t>(rule.q);
  }
  return rule.rate(row, local_index(rule.q, xi));
}

RateFamily merge_shape_classes(const RateFamily& rates) {
  std::map<std::vector<std::vector<int>>, CanonicalRule> classes;
  for (const auto& rule : rates.rules) {
    const std::vector<int> v = min_offset(rule.shape);
    auto key = shifted(rule.shape, v);
    std::sort(key.begin(), key.end());
    auto& cls = classes[key];
    cls.shape = key;
    for (const auto& o : shifted(rule.dependence, v))
      if (std::find(cls.dependence.begin(), cls.dependence.end(), o) == cls.dependence.end())
        cls.dependence.push_back(o);
    cls.members.emplace_back(&rule, v);
  }
  RateFamily out;
  out.q = rates.q;
  const int q = rates.q;
  for (auto& [key, cls] : classes) {
    std::sort(cls.dependence.begin(), cls.dependence.end());
    UpdateRule merged;
    merged.q = q;
    merged.shape = cls.shape;
    merged.dependence = cls.dependence;
    const std::size_t nrows = local_count(q, static_cast<int>(cls.dependence.size()));
    const std::size_t ncols = local_count(q, static_cast<int>(cls.shape.size()));
    merged.values.assign(nrows * ncols, 0.0);
    std::vector<Spin> cfg(cls.dependence.size()), xi(cls.shape.size());
    for (const auto& [rule, v] : cls.members) {
      // member positions inside the canonical lists
      std::vector<int> dep_pos, col_pos;
      for (const auto& o : shifted(rule->dependence, v)) {
        const auto it = std::find(cls.dependence.begin(), cls.dependence.end(), o);
        dep_pos.push_back(static_cast<int>(it - cls.dependence.begin()));
      }
      for (const auto& o : shifted(rule->shape, v)) {
        const auto it = std::find(cls.shape.begin(), cls.shape.end(), o);
        col_pos.push_back(static_cast<int>(it - cls.shape.begin()));
      }
      for (std::size_t row = 0; row < nrows; ++row) {
        local_decode(q, row, cfg);
        std::size_t mrow = 0, pw = 1;
        for (std::size_t i = 0; i < dep_pos.size(); ++i) {
          mrow += static_cast<std::size_t>(cfg[dep_pos[i]]) * pw;
          pw *= static_cast<std::size_t>(q);
        }
        for (std::size_t c = 0; c < ncols; ++c) {
          local_decode(q, c, xi);
          std::size_t mcol = 0, cw = 1;
          for (std::size_t k = 0; k < col_pos.size(); ++k) {
            mcol += static_cast<std::size_t>(xi[col_pos[k]]) * cw;
            cw *= static_cast<std::size_t>(q);
          }
          merged.values[row * ncols + c] += rule->rate(mrow, mcol);
        }
      }
    }
    merged.finalize();
    out.rules.push_back(std::move(merged));
  }
  return out;
}

double rate_family_distance(const RateFamily& a, const RateFamily& b) {
  if (a.q != b.q) throw std::invalid_argument("families have different local state spaces");
  const RateFamily ma = merge_shape_classes(a);
  const RateFamily mb = merge_shape_classes(b);
  std::map<std::vector<std::vector<int>>, std::pair<const UpdateRule*, const UpdateRule*>> by_shape;
  for (const auto& r : ma.rules) by_shape[r.shape].first = &r;
  for (const auto& r : mb.rules) by_shape[r.shape].second = &r;
  double worst = 0.0;
  for (const auto& [shape, pair] : by_shape) {
    const UpdateRule* ra = pair.first;
    const UpdateRule* rb = pair.second;
    if (!ra || !rb) {
      const UpdateRule* solo = ra ? ra : rb;
      worst = std::max(worst, solo->sup_rate());
      continue;
    }
    // union dependence, evaluate both tables on it
    std::vector<std::vector<int>> dep = ra->dependence;
    for (const auto& o : rb->dependence)
      if (std::find(dep.begin(), dep.end(), o) == dep.end()) dep.push_back(o);
    std::vector<int> pos_a, pos_b;
    for (const auto& o : ra->dependence)
      pos_a.push_back(static_cast<int>(std::find(dep.begin(), dep.end(), o) - dep.begin()));
    for (const auto& o : rb->dependence)
      pos_b.push_back(static_cast<int>(std::find(dep.begin(), dep.end(), o) - dep.begin()));
    const int q = a.q;
    std::vector<Spin> cfg(dep.size());
    const std::size_t nrows = local_count(q, static_cast<int>(dep.size()));
    for (std::size_t row = 0; row < nrows; ++row) {
      local_decode(q, row, cfg);
      auto row_of = [&](const std::vector<int>& pos) {
        std::size_t r = 0, pw = 1;
        for (std::size_t i = 0; i < pos.size(); ++i) {
          r += static_cast<std::size_t>(cfg[pos[i]]) * pw;
          pw *= static_cast<std::size_t>(q);
        }
        return r;
      };
      const std::size_t rowa = row_of(pos_a);
      const std::size_t rowb = row_of(pos_b);
      for (std::size_t c = 0; c < ra->cols(); ++c)
        worst = std::max(worst, std::abs(ra->rate(rowa, c) - rb->rate(rowb, c)));
    }
  }
  return worst;
}

namespace {

template <bool Parallel>
SparseGenerator assemble_impl(const RateFamily& rates, const Torus& geom) {
  for (const auto& rule : rates.rules)
    for (double v : rule.values)
      if (v < 0.0) throw ContractError("negative transition rate");

  const StateCodec codec(rates.q, geom.site_count());
  if (codec.state_count() > (StateIndex{1} << 24))
    throw CapacityError("state space exceeds the 2^24 enumeration guard");
  const std::size_t n = static_cast<std::size_t>(codec.state_count());
  const int nsites = geom.site_count();

  // per-translate site lists, likewise in table order
  struct Placed {
    const UpdateRule* rule;
    std::vector<int> dep;
    std::vector<int> shape;
  };
  std::vector<Placed> placed;
  for (const auto& rule : rates.rules)
    for (int x = 0; x < nsites; ++x) {
      Placed p{&rule, dep_sites(rule, geom, x), shape_sites(rule, geom, x)};
      std::vector<int> sorted = p.shape;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw GeometryError("update shape wraps onto itself");
      placed.push_back(std::move(p));
    }

  auto row_edges = [&](std::size_t s, std::vector<std::pair<std::uint32_t, double>>& out) {
    out.clear();
    for (const auto& p : placed) {
      std::size_t dep_idx = 0;
      {
        std::size_t pw = 1;
        for (int site : p.dep) {
          dep_idx += static_cast<std::size_t>(codec.digit(s, site)) * pw;
          pw *= static_cast<std::size_t>(rates.q);
        }
      }
      const std::size_t ncols = p.rule->cols();
      std::size_t cur_col = 0;
      {
        std::size_t pw = 1;
        for (int site : p.shape) {
          cur_col += static_cast<std::size_t>(codec.digit(s, site)) * pw;
          pw *= static_cast<std::size_t>(rates.q);
        }
      }
      std::vector<Spin> xi(p.shape.size());
      for (std::size_t c = 0; c < ncols; ++c) {
        if (c == cur_col) continue;
        const double r = p.rule->rate(dep_idx, c);
        if (r <= 0.0) continue;
        local_decode(rates.q, c, xi);
        StateIndex t = s;
        for (std::size_t k = 0; k < xi.size(); ++k)
          t = codec.with_digit(t, p.shape[k], xi[k]);
        out.emplace_back(static_cast<std::uint32_t>(t), r);
      }
    }
    std::sort(out.begin(), out.end());
    std::size_t w = 0;
    for (std::size_t i = 0; i < out.size();) {
      std::size_t j = i;
      double r = 0.0;
      while (j < out.size() && out[j].first == out[i].first) r += out[j++].second;
      out[w++] = {out[i].first, r};
      i = j;
    }
    out.resize(w);
  };

  SparseGenerator g;
  g.n = n;
  g.row_ptr.assign(n + 1, 0);
  {
    auto count_row = [&](std::size_t s) {
      thread_local std::vector<std::pair<std::uint32_t, double>> buf;
      row_edges(s, buf);
      g.row_ptr[s + 1] = buf.size();
    };
    if constexpr (Parallel)
      par::for_each_index(n, count_row);
    else
      for (std::size_t s = 0; s < n; ++s) count_row(s);
  }
  for (std::size_t s = 0; s < n; ++s) g.row_ptr[s + 1] += g.row_ptr[s];
  g.col.resize(g.row_ptr[n]);
  g.val.resize(g.row_ptr[n]);
  g.exit.assign(n, 0.0);
  {
    auto fill_row = [&](std::size_t s) {
      thread_local std::vector<std::pair<std::uint32_t, double>> buf;
      row_edges(s, buf);
      double e = 0.0;
      for (std::size_t k = 0; k < buf.size(); ++k) {
        g.col[g.row_ptr[s] + k] = buf[k].first;
        g.val[g.row_ptr[s] + k] = buf[k].second;
        e += buf[k].second;
      }
      g.exit[s] = e;
    };
    if constexpr (Parallel)
      par::for_each_index(n, fill_row);
    else
      for (std::size_t s = 0; s < n; ++s) fill_row(s);
  }

  g.trow_ptr.assign(n + 1, 0);
  for (std::uint32_t c : g.col) g.trow_ptr[c + 1] += 1;
  for (std::size_t x = 0; x < n; ++x) g.trow_ptr[x + 1] += g.trow_ptr[x];
  g.tcol.resize(g.col.size());
  g.tval.resize(g.val.size());
  std::vector<std::uint64_t> cursor(g.trow_ptr.begin(), g.trow_ptr.end() - 1);
  for (std::size_t x = 0; x < n; ++x)
    for (std::uint64_t k = g.row_ptr[x]; k < g.row_ptr[x + 1]; ++k) {
      const std::uint32_t c = g.col[k];
      g.tcol[cursor[c]] = static_cast<std::uint32_t>(x);
      g.tval[cursor[c]] = g.val[k];
      ++cursor[c];
    }
  return g;
}

}  // namespace

SparseGenerator assemble_generator(const RateFamily& rates, const Torus& geom) {
  return assemble_impl<true>(rates, geom);
}

SparseGenerator assemble_generator_ref(const RateFamily& rates, const Torus& geom) {
  return assemble_impl<false>(rates, geom);
}

ConditionReport check_rate_conditions(const RateFamily& rates, const Specification& spec,
                                      const Torus& geom) {
  ConditionReport rep;
  rep.r1 = rep.r4 = rep.r5 = true;  // structural unless a witness appears

  for (std::size_t r = 0; r < rates.rules.size(); ++r) {
    const auto& rule = rates.rules[r];
    for (std::size_t i = 0; i < rule.values.size(); ++i)
      if (rule.values[i] < 0.0) {
        rep.r1 = rep.r5 = false;
        rep.witnesses.push_back("rule " + std::to_string(r) + " entry " + std::to_string(i) +
                                ": negative rate " + std::to_string(rule.values[i]));
      }
  }

  rep.r2 = true;  // finitely many shapes by construction
  rep.max_shape = rates.max_shape_size();
  rep.kappa = rates.kappa().value_or(0.0);

  // L1: total flip rate at the origin
  for (const auto& rule : rates.rules) {
    double per_xi = 0.0;
    for (std::size_t c = 0; c < rule.cols(); ++c) {
      double sup = 0.0;
      for (std::size_t row = 0; row < rule.rows(); ++row)
        sup = std::max(sup, rule.rate(row, c));
      per_xi += sup;
    }
    rep.l1_sum += static_cast<double>(rule.shape.size()) * per_xi;
  }

  // L2 / R3: oscillation series at the origin, summed over rule translates
  // whose dependence neighborhood covers it.
  if (rep.r1) {
    for (const auto& rule : rates.rules) {
      for (std::size_t pos = 0; pos < rule.dependence.size(); ++pos) {
        for (std::size_t c = 0; c < rule.cols(); ++c)
          for (int i = 0; i < rates.q; ++i)
            rep.l2_sum += rule.oscillation(static_cast<int>(pos), static_cast<Spin>(i), c);
      }
    }
    rep.r3 = true;
  }

  // R6: exact strong connectivity when enumerable, else a sufficient
  // certificate: some single-site rule cycles every spin in every context.
  bool r6 = false;
  const double state_bits = geom.site_count() * std::log2(static_cast<double>(rates.q));
  if (rep.r1 && state_bits <= 20.0) {
    r6 = is_irreducible(assemble_generator(rates, geom));
    if (!r6) rep.witnesses.push_back("transition graph is not strongly connected");
  } else if (rep.r1) {
    for (const auto& rule : rates.rules) {
      if (rule.shape.size() != 1) continue;
      const int p0 = rule.shape_pos[0];
      std::size_t stride = 1;
      for (int k = 0; k < p0; ++k) stride *= static_cast<std::size_t>(rates.q);
      bool rule_ok = true;
      for (std::size_t row = 0; rule_ok && row < rule.rows(); ++row) {
        if ((row / stride) % static_cast<std::size_t>(rates.q) != 0) continue;
        // spin digraph for this context: a -> b iff c(.., a -> b) > 0
        for (int start = 0; rule_ok && start < rates.q; ++start) {
          std::vector<char> seen(rates.q, 0);
          seen[start] = 1;
          for (int pass = 0; pass < rates.q; ++pass)
            for (int a = 0; a < rates.q; ++a) {
              if (!seen[a]) continue;
              const std::size_t arow = row + static_cast<std::size_t>(a) * stride;
              for (int b = 0; b < rates.q; ++b)
                if (rule.rate(arow, static_cast<std::size_t>(b)) > 0.0) seen[b] = 1;
            }
          rule_ok = std::all_of(seen.begin(), seen.end(), [](char v) { return v != 0; });
        }
      }
      if (rule_ok) {
        r6 = true;
        break;
      }
    }
    if (!r6) rep.witnesses.push_back("no single-site cycle certificate");
  }
  rep.r6 = r6;

  if (rep.r1) {
    const RateFamily rhat = time_reversal(rates, spec);
    const int n_max = spec.potential().range() + 3;
    for (int n = 0; n <= n_max; ++n)
      rep.beta_tail_table.push_back(beta_tail(rates, rhat, geom, n));
  }
  return rep;
}

double switching_residual(const RateFamily& rates, const Specification& spec,
                          const ProbVector& mu, std::span<const double> f,
                          std::span<const double> g, const Window& delta) {
  const Torus& geom = spec.torus();
  const StateCodec codec(rates.q, geom.site_count());
  const RateFamily rhat = time_reversal(rates, spec);

  auto one_side = [&](const RateFamily& fam, bool reversed) {
    double total = 0.0;
    for (const auto& rule : fam.rules) {
      for (int x = 0; x < geom.site_count(); ++x) {
        Window w = offsets_at(geom, rule.shape, x);
        if (w.sites != delta.sites) continue;
        const auto dsites = dep_sites(rule, geom, x);
        const auto ssites = shape_sites(rule, geom, x);
        const std::size_t ncols = rule.cols();
        std::vector<Spin> xi(rule.shape.size());
        for (std::size_t s = 0; s < mu.size(); ++s) {
          if (mu[s] == 0.0) continue;
          std::size_t dep_idx = 0, pw = 1;
          for (int site : dsites) {
            dep_idx += static_cast<std::size_t>(codec.digit(s, site)) * pw;
            pw *= static_cast<std::size_t>(rates.q);
          }
          for (std::size_t c = 0; c < ncols; ++c) {
            const double r = rule.rate(dep_idx, c);
            if (r == 0.0) continue;
            local_decode(rates.q, c, xi);
            StateIndex t = s;
            for (std::size_t k = 0; k < xi.size(); ++k)
              t = codec.with_digit(t, ssites[k], xi[k]);
            // forward: c f(omega) g(xi omega); reversed: chat f(xi omega) g(omega)
            const double pair_val = reversed ? f[t] * g[s] : f[s] * g[t];
            total += mu[s] * r * pair_val;
          }
        }
      }
    }
    return total;
  };

  return std::abs(one_side(rates, false) - one_side(rhat, true));
}

namespace {

double net_rate_change(const RateFamily& fam, const Torus& geom, int z,
                       const Configuration& eta, const Configuration& eta_flipped) {
  double total = 0.0;
  for (const auto& rule : fam.rules) {
    // only translates whose dependence window contains z contribute;
    // x = z - o hits each of them exactly once
    for (const auto& o : rule.dependence) {
      std::vector<int> neg(o.begin(), o.end());
      for (int& c : neg) c = -c;
      const int x = geom.translate_site(z, neg);
      const auto dsites = dep_sites(rule, geom, x);
      const std::size_t a = dep_index_of(rule, dsites, eta);
      const std::size_t b = dep_index_of(rule, dsites, eta_flipped);
      if (a == b) continue;
      for (std::size_t c = 0; c < rule.cols(); ++c)
        total += rule.rate(b, c) - rule.rate(a, c);
    }
  }
  return total;
}

}  // namespace

double oscillation_residual(const RateFamily& rates, const RateFamily& rhat,
                            const Torus& geom, int z, Spin i, const Configuration& eta) {
  const Configuration eta_flipped = flipped(eta, z, i);
  const double dc = net_rate_change(rates, geom, z, eta, eta_flipped);
  const double dchat = net_rate_change(rhat, geom, z, eta, eta_flipped);
  return std::abs(dc - dchat);
}

namespace {

double total_rate_at(const RateFamily& fam, const Torus& geom, const Configuration& eta) {
  double total = 0.0;
  for (const auto& rule : fam.rules)
    for (int x = 0; x < geom.site_count(); ++x) {
      const auto dsites = dep_sites(rule, geom, x);
      const std::size_t row = dep_index_of(rule, dsites, eta);
      for (std::size_t c = 0; c < rule.cols(); ++c) total += rule.rate(row, c);
    }
  return total;
}

}  // namespace

double oscillation_residual_window(const RateFamily& rates, const RateFamily& rhat,
                                   const Torus& geom, const Window& lam,
                                   const Configuration& eta) {
  const double base = total_rate_at(rates, geom, eta) - total_rate_at(rhat, geom, eta);
  double total = 0.0;
  Configuration zeta = eta;
  std::vector<Spin> vals(lam.sites.size());
  for (std::size_t v = 0; v < local_count(eta.q, lam.size()); ++v) {
    local_decode(eta.q, v, vals);
    for (std::size_t k = 0; k < vals.size(); ++k) zeta.spins[lam.sites[k]] = vals[k];
    total += (total_rate_at(rates, geom, zeta) - total_rate_at(rhat, geom, zeta)) - base;
  }
  return std::abs(total);
}

double detailed_balance_residual(const SparseGenerator& gen, const ProbVector& mu) {
  return par::max_over(gen.n, [&](std::size_t x) {
    double worst = 0.0;
    for (std::uint64_t k = gen.row_ptr[x]; k < gen.row_ptr[x + 1]; ++k) {
      const std::uint32_t y = gen.col[k];
      const double forward = mu[x] * gen.val[k];
      const double backward = mu[y] * gen.rate(y, static_cast<std::uint32_t>(x));
      worst = std::max(worst, std::abs(forward - backward));
    }
    return worst;
  });
}

double beta_tail(const RateFamily& rates, const RateFamily& rhat, const Torus& geom, int n) {
  if (2 * n + 1 > geom.min_side()) return 0.0;
  const Window cube = centered_cube(geom, n);
  std::vector<int> center_coords(geom.dim());
  for (int a = 0; a < geom.dim(); ++a) center_coords[a] = geom.side(a) / 2;
  const int z = geom.site_of(center_coords);

  auto family_tail = [&](const RateFamily& fam) {
    double worst = 0.0;
    for (int i = 0; i < fam.q; ++i) {
      double sum = 0.0;
      for (const auto& rule : fam.rules)
        for (int x = 0; x < geom.site_count(); ++x) {
          const Window w = offsets_at(geom, rule.shape, x);
          if (windows_intersect(w, cube)) continue;
          const auto dsites = dep_sites(rule, geom, x);
          const auto it = std::find(dsites.begin(), dsites.end(), z);
          if (it == dsites.end()) continue;
          const int pos = static_cast<int>(it - dsites.begin());
          for (std::size_t c = 0; c < rule.cols(); ++c)
            sum += rule.oscillation(pos, static_cast<Spin>(i), c);
        }
      worst = std::max(worst, sum);
    }
    return worst;
  };
  return std::max(family_tail(rates), family_tail(rhat));
}

}  // namespace gibbslab
