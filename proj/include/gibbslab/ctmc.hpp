#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "gibbslab/errors.hpp"

namespace gibbslab {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Probability distribution over an enumerated state space.
struct ProbVector {
  std::vector<double> p;

  ProbVector() = default;
  explicit ProbVector(std::vector<double> values) : p(std::move(values)) {}
  static ProbVector uniform(std::size_t n);
  static ProbVector point_mass(std::size_t n, std::size_t state);

  std::size_t size() const { return p.size(); }
  double operator[](std::size_t i) const { return p[i]; }
  double sum() const;
  void normalize();
  bool strictly_positive() const;
  // Checks nonnegativity and normalization to the given tolerance.
  void validate(double tol = 1e-12) const;
};

double l1_distance(const ProbVector& a, const ProbVector& b);
double tv_distance(const ProbVector& a, const ProbVector& b);

// Off-diagonal jump rates in CSR form; the diagonal is implied by the exit
// rates. The transposed structure is kept alongside for distribution flows.
struct SparseGenerator {
  std::size_t n = 0;
  std::vector<std::uint64_t> row_ptr;
  std::vector<std::uint32_t> col;
  std::vector<double> val;
  std::vector<double> exit;  // row sums of off-diagonal rates

  std::vector<std::uint64_t> trow_ptr;
  std::vector<std::uint32_t> tcol;
  std::vector<double> tval;

  // Merges duplicate (from,to) pairs and builds the transpose.
  static SparseGenerator from_edges(
      std::size_t n, std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> edges);

  double rate(std::uint32_t from, std::uint32_t to) const;
  double max_exit() const;
  // The action on functions: (Lf)(x) = sum_y L_xy (f(y) - f(x)).
  std::vector<double> apply_to_function(std::span<const double> f) const;
};

bool is_irreducible(const SparseGenerator& gen);

// Unique time-stationary distribution of an irreducible generator.
ProbVector stationary(const SparseGenerator& gen);

// sup_x |(mu^T L)(x)|
double stationarity_residual(const ProbVector& mu, const SparseGenerator& gen);

// h(nu|mu) = sum nu log(nu/mu), +inf if nu charges a mu-null state.
double relative_entropy(const ProbVector& nu, const ProbVector& mu);

// Phi(u) = u - u log u - 1 for u > 0 and -1 otherwise; also the F_0 of the
// windowed entropy functionals.
double phi(double u);

// d/dt h(nu_t|mu) at t=0 written through the generator; -inf when nu
// vanishes on a state with positive inbound nu-flow.
double entropy_loss_generator_form(const ProbVector& nu, const ProbVector& mu,
                                   const SparseGenerator& gen);

// The Phi representation; requires mu stationary (contract checked).
double entropy_loss_phi_form(const ProbVector& nu, const ProbVector& mu,
                             const SparseGenerator& gen);

// nu exp(tL) by uniformization; mass-conserving to 1e-12.
ProbVector evolve(const ProbVector& nu, const SparseGenerator& gen, double t);
ProbVector evolve_ref(const ProbVector& nu, const SparseGenerator& gen, double t);

}  // namespace gibbslab
