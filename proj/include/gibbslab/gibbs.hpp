#pragma once

#include <span>
#include <utility>
#include <vector>

#include "gibbslab/ctmc.hpp"
#include "gibbslab/lattice.hpp"

namespace gibbslab {

// One translation class of the potential: a shape of relative offsets
// (containing the origin) and a value per local configuration, indexed
// little-endian in the offset order.
struct InteractionTerm {
  std::vector<std::vector<int>> offsets;
  std::vector<double> values;
};

struct Potential {
  int q = 2;
  double beta = 1.0;
  std::vector<InteractionTerm> terms;

  // max sup-norm over all offsets
  int range() const;
  void validate() const;
};

Potential zero_potential(int q);
// Nearest-neighbor Ising in d dimensions with spins {0,1} read as {-1,+1}:
// pair term -J s s', field term -h s.
Potential ising_potential(int dim, double coupling, double field = 0.0);
// Potts coupling -J 1{a=b} on nearest-neighbor pairs.
Potential potts_potential(int dim, int q, double coupling);

// The kernels gamma_Delta(xi | eta) of the finite-range Gibbsian
// specification on a torus; requires 2*range < min side.
class Specification {
 public:
  Specification(Potential pot, Torus geom);

  const Potential& potential() const { return pot_; }
  const Torus& torus() const { return geom_; }
  int q() const { return pot_.q; }

  double gamma(const Window& delta, std::span<const Spin> xi,
               const Configuration& boundary) const;
  // All conditionals of the window at once, little-endian in window order.
  void gamma_row(const Window& delta, const Configuration& boundary,
                 std::span<double> out) const;
  double gamma_single(int site, Spin value, const Configuration& eta) const;
  // All single-site conditionals at once (normalized over the q values).
  void gamma_site_row(int site, const Configuration& eta, std::span<double> out) const;

  // uniform lower bound on single-site conditionals
  double nonnull_delta() const { return delta_; }

  // D(Delta): Delta together with every site of a potential shape meeting it
  Window dependence(const Window& delta) const;
  // translated terms (term index, translation site) whose shape meets delta
  std::vector<std::pair<int, int>> terms_meeting(const Window& delta) const;

 private:
  Potential pot_;
  Torus geom_;
  double delta_;
};

Specification build_specification(const Potential& pot, const Torus& geom);

// H(eta) summed over one representative shape per translation class and all
// torus translates (each bond counted once).
double torus_energy(const Potential& pot, const Torus& geom, const Configuration& eta);

// Boltzmann measure on the full torus; capacity-guarded at 2^24 states.
ProbVector exact_gibbs(const Potential& pot, const Torus& geom);

// max_eta |mu(eta_D | eta_Dc) - gamma_D(eta_D | eta_Dc)|
double dlr_residual(const ProbVector& mu, const Specification& spec, const Window& delta);

// Consistency defect |gamma_L(gamma_D(.)) - gamma_L(.)| for delta inside lam,
// maximized over the target values on delta, at the given outer boundary.
double consistency_residual(const Specification& spec, const Window& delta,
                            const Window& lam, const Configuration& eta);

struct LogRatioBound {
  bool holds = true;
  double worst_lhs = 0.0;
  double bound = 0.0;
};
// |log mu(xi_D eta_{L\D}) / mu(eta_L)| <= |D| log(1/delta) for all eta, xi.
LogRatioBound log_ratio_bound_check(const ProbVector& mu, const Torus& geom, int q,
                                    const Window& delta, const Window& lam,
                                    double nonnull_delta);

// max_A |(mu o G_xi^-1)(A) - int_A 1_[xi] sum_z gamma(z|.)/gamma(xi|.) dmu|
double pushforward_density_residual(const ProbVector& mu, const Specification& spec,
                                    const Window& delta, std::span<const Spin> xi);

// Exact infinite-volume window marginals of a one-dimensional
// nearest-neighbor Gibbs measure through the leading transfer eigenpair.
class TransferMatrix1D {
 public:
  explicit TransferMatrix1D(const Potential& pot);

  int q() const { return q_; }
  double leading_eigenvalue() const { return lambda_; }
  // Cylinder probability for sites at the given strictly increasing integer
  // positions (gaps are summed out).
  double window_prob(std::span<const int> positions, std::span<const Spin> values) const;
  ProbVector window_marginal(std::span<const int> positions) const;

 private:
  int q_;
  double lambda_;
  std::vector<double> transfer_;  // T(a,b) = exp(-beta (pair(a,b) + single(a)))
  std::vector<double> left_, right_;
  double inner_;
};

// Absolute-regularity upper bound for alpha_mu(Lambda, n): half the total
// variation between the joint law of (F_Lambda, F outside Delta_n) and the
// product of its marginals.
double beta_mixing_bound(const ProbVector& mu, const Torus& geom, int q,
                         const Window& lam, int n);

}  // namespace gibbslab
