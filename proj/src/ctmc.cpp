#include "gibbslab/ctmc.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "gibbslab/parallel.hpp"

namespace gibbslab {

ProbVector ProbVector::uniform(std::size_t n) {
  ProbVector v;
  v.p.assign(n, 1.0 / static_cast<double>(n));
  return v;
}

ProbVector ProbVector::point_mass(std::size_t n, std::size_t state) {
  ProbVector v;
  v.p.assign(n, 0.0);
  v.p[state] = 1.0;
  return v;
}

double ProbVector::sum() const {
  double s = 0.0;
  for (double x : p) s += x;
  return s;
}

void ProbVector::normalize() {
  const double s = sum();
  if (s <= 0.0) throw NumericError("cannot normalize a zero measure");
  for (double& x : p) x /= s;
}

bool ProbVector::strictly_positive() const {
  for (double x : p)
    if (x <= 0.0) return false;
  return true;
}

void ProbVector::validate(double tol) const {
  for (double x : p)
    if (x < 0.0) throw ContractError("probability vector has a negative entry");
  if (std::abs(sum() - 1.0) > tol)
    throw ContractError("probability vector is not normalized");
}

double l1_distance(const ProbVector& a, const ProbVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

double tv_distance(const ProbVector& a, const ProbVector& b) {
  return 0.5 * l1_distance(a, b);
}

SparseGenerator SparseGenerator::from_edges(
    std::size_t n, std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> edges) {
  for (const auto& [from, to, rate] : edges) {
    if (from >= n || to >= n) throw std::out_of_range("edge endpoint out of range");
    if (from == to) throw ContractError("diagonal entries are implicit");
    if (rate < 0.0) throw ContractError("negative transition rate");
  }
  std::sort(edges.begin(), edges.end(),
            [](const auto& a, const auto& b) {
              return std::pair(std::get<0>(a), std::get<1>(a)) <
                     std::pair(std::get<0>(b), std::get<1>(b));
            });
  SparseGenerator g;
  g.n = n;
  g.row_ptr.assign(n + 1, 0);
  g.exit.assign(n, 0.0);
  for (std::size_t i = 0; i < edges.size();) {
    std::size_t j = i;
    double r = 0.0;
    while (j < edges.size() && std::get<0>(edges[j]) == std::get<0>(edges[i]) &&
           std::get<1>(edges[j]) == std::get<1>(edges[i])) {
      r += std::get<2>(edges[j]);
      ++j;
    }
    if (r > 0.0) {
      g.col.push_back(std::get<1>(edges[i]));
      g.val.push_back(r);
      g.row_ptr[std::get<0>(edges[i]) + 1] += 1;
      g.exit[std::get<0>(edges[i])] += r;
    }
    i = j;
  }
  for (std::size_t x = 0; x < n; ++x) g.row_ptr[x + 1] += g.row_ptr[x];

  // transpose
  g.trow_ptr.assign(n + 1, 0);
  for (std::uint32_t c : g.col) g.trow_ptr[c + 1] += 1;
  for (std::size_t x = 0; x < n; ++x) g.trow_ptr[x + 1] += g.trow_ptr[x];
  g.tcol.resize(g.col.size());
  g.tval.resize(g.val.size());
  std::vector<std::uint64_t> cursor(g.trow_ptr.begin(), g.trow_ptr.end() - 1);
  for (std::size_t x = 0; x < n; ++x) {
    for (std::uint64_t k = g.row_ptr[x]; k < g.row_ptr[x + 1]; ++k) {
      const std::uint32_t c = g.col[k];
      g.tcol[cursor[c]] = static_cast<std::uint32_t>(x);
      g.tval[cursor[c]] = g.val[k];
      ++cursor[c];
    }
  }
  return g;
}

double SparseGenerator::rate(std::uint32_t from, std::uint32_t to) const {
  for (std::uint64_t k = row_ptr[from]; k < row_ptr[from + 1]; ++k)
    if (col[k] == to) return val[k];
  return 0.0;
}

double SparseGenerator::max_exit() const {
  double m = 0.0;
  for (double e : exit) m = std::max(m, e);
  return m;
}

std::vector<double> SparseGenerator::apply_to_function(std::span<const double> f) const {
  std::vector<double> out(n, 0.0);
  for (std::size_t x = 0; x < n; ++x) {
    double acc = 0.0;
    for (std::uint64_t k = row_ptr[x]; k < row_ptr[x + 1]; ++k)
      acc += val[k] * (f[col[k]] - f[x]);
    out[x] = acc;
  }
  return out;
}

namespace {

// Iterative DFS reachability along the given CSR structure.
void reach(std::size_t n, const std::vector<std::uint64_t>& ptr,
           const std::vector<std::uint32_t>& adj, std::uint32_t start,
           std::vector<char>& seen) {
  std::vector<std::uint32_t> stack{start};
  seen.assign(n, 0);
  seen[start] = 1;
  while (!stack.empty()) {
    const std::uint32_t x = stack.back();
    stack.pop_back();
    for (std::uint64_t k = ptr[x]; k < ptr[x + 1]; ++k) {
      const std::uint32_t y = adj[k];
      if (!seen[y]) {
        seen[y] = 1;
        stack.push_back(y);
      }
    }
  }
}

}  // namespace

bool is_irreducible(const SparseGenerator& gen) {
  if (gen.n == 0) return false;
  if (gen.n == 1) return true;
  std::vector<char> seen;
  reach(gen.n, gen.row_ptr, gen.col, 0, seen);
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) return false;
  reach(gen.n, gen.trow_ptr, gen.tcol, 0, seen);
  return std::find(seen.begin(), seen.end(), 0) == seen.end();
}

namespace {

// One uniformization step: out = mu (I + L/lambda), through the transpose.
void markov_step(const SparseGenerator& gen, double lambda,
                 std::span<const double> mu, std::span<double> out) {
  par::for_each_index(gen.n, [&](std::size_t x) {
    double inflow = 0.0;
    for (std::uint64_t k = gen.trow_ptr[x]; k < gen.trow_ptr[x + 1]; ++k)
      inflow += mu[gen.tcol[k]] * gen.tval[k];
    out[x] = mu[x] + (inflow - mu[x] * gen.exit[x]) / lambda;
  });
}

void markov_step_ref(const SparseGenerator& gen, double lambda,
                     std::span<const double> mu, std::span<double> out) {
  for (std::size_t x = 0; x < gen.n; ++x) {
    double inflow = 0.0;
    for (std::uint64_t k = gen.trow_ptr[x]; k < gen.trow_ptr[x + 1]; ++k)
      inflow += mu[gen.tcol[k]] * gen.tval[k];
    out[x] = mu[x] + (inflow - mu[x] * gen.exit[x]) / lambda;
  }
}

}  // namespace

ProbVector stationary(const SparseGenerator& gen) {
  if (gen.n == 0) throw std::invalid_argument("empty generator");
  if (!is_irreducible(gen))
    throw NonUniquenessError("generator is reducible: stationary law not unique");
  if (gen.n == 1) return ProbVector::point_mass(1, 0);

  const double lambda = 1.05 * gen.max_exit();
  ProbVector mu = ProbVector::uniform(gen.n);
  std::vector<double> next(gen.n);
  const std::size_t max_iter = 2000000;
  for (std::size_t it = 0; it < max_iter; ++it) {
    markov_step(gen, lambda, mu.p, next);
    double delta = 0.0;
    for (std::size_t x = 0; x < gen.n; ++x)
      delta = std::max(delta, std::abs(next[x] - mu.p[x]));
    mu.p.swap(next);
    if ((it & 63u) == 0) {
      const double s = mu.sum();
      for (double& v : mu.p) v /= s;
    }
    // mu^T L = lambda (mu P - mu)
    if (delta * lambda < 1e-13) break;
  }
  mu.normalize();
  if (stationarity_residual(mu, gen) > 1e-10 * std::max(1.0, lambda))
    throw NumericError("stationary solve did not converge");
  return mu;
}

double stationarity_residual(const ProbVector& mu, const SparseGenerator& gen) {
  return par::max_over(gen.n, [&](std::size_t x) {
    double inflow = 0.0;
    for (std::uint64_t k = gen.trow_ptr[x]; k < gen.trow_ptr[x + 1]; ++k)
      inflow += mu[gen.tcol[k]] * gen.tval[k];
    return std::abs(inflow - mu[x] * gen.exit[x]);
  });
}

double relative_entropy(const ProbVector& nu, const ProbVector& mu) {
  double h = 0.0;
  for (std::size_t x = 0; x < nu.size(); ++x) {
    if (nu[x] == 0.0) continue;  // 0 log 0 = 0
    if (mu[x] == 0.0) return kInf;
    h += nu[x] * std::log(nu[x] / mu[x]);
  }
  return h;
}

double phi(double u) {
  if (u > 0.0) return u - u * std::log(u) - 1.0;
  return -1.0;
}

double entropy_loss_generator_form(const ProbVector& nu, const ProbVector& mu,
                                   const SparseGenerator& gen) {
  if (!mu.strictly_positive()) throw ContractError("entropy loss needs mu > 0");
  double total = 0.0;
  for (std::size_t x = 0; x < gen.n; ++x) {
    double inflow = 0.0;
    for (std::uint64_t k = gen.trow_ptr[x]; k < gen.trow_ptr[x + 1]; ++k)
      inflow += nu[gen.tcol[k]] * gen.tval[k];
    const double outflow = nu[x] * gen.exit[x];
    if (nu[x] == 0.0) {
      if (inflow > 0.0) return -kInf;
      continue;
    }
    total += (inflow - outflow) * std::log(nu[x] / mu[x]);
  }
  return total;
}

double entropy_loss_phi_form(const ProbVector& nu, const ProbVector& mu,
                             const SparseGenerator& gen) {
  if (!mu.strictly_positive()) throw ContractError("entropy loss needs mu > 0");
  const double res = stationarity_residual(mu, gen);
  if (res > 1e-6 * std::max(1.0, gen.max_exit()))
    throw ContractError("phi representation requires a stationary mu");
  double total = 0.0;
  for (std::size_t x = 0; x < gen.n; ++x) {
    for (std::uint64_t k = gen.trow_ptr[x]; k < gen.trow_ptr[x + 1]; ++k) {
      const std::uint32_t y = gen.tcol[k];
      const double Lyx = gen.tval[k];
      if (nu[x] == 0.0) {
        if (nu[y] * Lyx > 0.0) return -kInf;
        continue;
      }
      const double u = (mu[x] * nu[y]) / (nu[x] * mu[y]);
      total += nu[x] * Lyx * (mu[y] / mu[x]) * phi(u);
    }
  }
  return total;
}

namespace {

template <bool Parallel>
ProbVector evolve_impl(const ProbVector& nu, const SparseGenerator& gen, double t) {
  if (t < 0.0) throw std::invalid_argument("evolve needs t >= 0");
  ProbVector out = nu;
  if (t == 0.0 || gen.n == 0) return out;
  const double lambda = gen.max_exit();
  if (lambda == 0.0) return out;

  // Split so the Poisson weights stay representable per chunk.
  const double max_chunk_mass = 64.0;
  const int chunks = std::max(1, static_cast<int>(std::ceil(lambda * t / max_chunk_mass)));
  const double dt = t / chunks;
  const double a = lambda * dt;

  std::vector<double> cur(gen.n), next(gen.n), acc(gen.n);
  for (int c = 0; c < chunks; ++c) {
    cur = out.p;
    std::fill(acc.begin(), acc.end(), 0.0);
    double w = std::exp(-a);  // Poisson(a) weight at k = 0
    double cum = w;
    for (std::size_t x = 0; x < gen.n; ++x) acc[x] = w * cur[x];
    const int k_max = static_cast<int>(a + 40.0 * std::sqrt(a) + 64.0);
    for (int k = 1; k <= k_max; ++k) {
      if constexpr (Parallel)
        markov_step(gen, lambda, cur, next);
      else
        markov_step_ref(gen, lambda, cur, next);
      cur.swap(next);
      w *= a / k;
      cum += w;
      for (std::size_t x = 0; x < gen.n; ++x) acc[x] += w * cur[x];
      if (1.0 - cum < 1e-14) break;
    }
    out.p = acc;
  }
  return out;
}

}  // namespace

ProbVector evolve(const ProbVector& nu, const SparseGenerator& gen, double t) {
  return evolve_impl<true>(nu, gen, t);
}

ProbVector evolve_ref(const ProbVector& nu, const SparseGenerator& gen, double t) {
  return evolve_impl<false>(nu, gen, t);
}

}  // namespace gibbslab
