#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gibbslab/ctmc.hpp"
#include "gibbslab/gibbs.hpp"
#include "gibbslab/lattice.hpp"

namespace gibbslab {

// One translation class of local updates: rates c_Delta(eta, xi_Delta)
// tabulated over the declared dependence neighborhood. Row index runs over
// configurations of the dependence window, column index over targets xi.
struct UpdateRule {
  int q = 2;
  std::vector<std::vector<int>> shape;       // contains the origin
  std::vector<std::vector<int>> dependence;  // superset of shape
  std::vector<double> values;                // q^|D| rows x q^|shape| columns

  std::vector<int> shape_pos;  // position of each shape offset inside dependence

  void finalize();  // validates and fills shape_pos
  std::size_t rows() const { return local_count(q, static_cast<int>(dependence.size())); }
  std::size_t cols() const { return local_count(q, static_cast<int>(shape.size())); }
  double rate(std::size_t dep_index, std::size_t xi_index) const {
    return values[dep_index * cols() + xi_index];
  }
  // sup_xi sup_eta c(eta, xi)
  double sup_rate() const;
  std::optional<double> min_positive_rate() const;
  // sup_eta |c(eta^{z,i}, xi) - c(eta, xi)| for the dependence site at
  // position dep_pos; zero for sites outside the dependence window.
  double oscillation(int dep_pos, Spin i, std::size_t xi_index) const;
};

struct RateFamily {
  int q = 2;
  std::vector<UpdateRule> rules;

  double sup_rate() const;
  // minimal strictly positive rate; nullopt when every entry is zero
  std::optional<double> kappa() const;
  int max_shape_size() const;
};

// Single-site heat bath: c_x(eta, j) = gamma_x(j | eta) for j != eta_x.
RateFamily make_heat_bath(const Specification& spec);
// Single-site cyclic updates c_x(eta, eta_x + 1 mod q) = kappa / gamma_x(eta_x | eta):
// constant probability flux around each site cycle, so every Gibbs measure
// for the specification is stationary while q >= 3 breaks detailed balance.
RateFamily make_cyclic(const Specification& spec, double kappa);
RateFamily mix(double a, const RateFamily& r1, double b, const RateFamily& r2);

// Time-reversal rates w.r.t. the Gibbsian specification:
// chat_D(eta, xi) = c_D(xi eta, eta_D) gamma_D(xi|eta) / gamma_D(eta_D|eta).
RateFamily time_reversal(const RateFamily& rates, const Specification& spec);

// Collapses rules sharing a translation class into one rule per shape with
// summed rates, anchored at the lexicographically smallest offset.
RateFamily merge_shape_classes(const RateFamily& rates);

// max |a - b| over all shape classes, dependence configurations, and targets.
double rate_family_distance(const RateFamily& a, const RateFamily& b);

// Rate of one rule translated to x, read off a full configuration; xi is in
// shape order.
double rule_rate_at(const UpdateRule& rule, const Torus& geom, int x,
                    const Configuration& eta, std::span<const Spin> xi);

SparseGenerator assemble_generator(const RateFamily& rates, const Torus& geom);
SparseGenerator assemble_generator_ref(const RateFamily& rates, const Torus& geom);

struct ConditionReport {
  bool r1 = false, r2 = false, r3 = false, r4 = false, r5 = false, r6 = false;
  std::vector<std::string> witnesses;
  double l1_sum = 0.0;        // total single-site flip rate bound (L1)
  double l2_sum = 0.0;        // total influence sum (L2 / R3, nabla form)
  int max_shape = 0;          // R of condition R2
  double kappa = 0.0;         // minimal positive rate
  std::vector<double> beta_tail_table;  // beta(n) for n = 0..range+2

  bool all_pass() const { return r1 && r2 && r3 && r4 && r5 && r6; }
};

ConditionReport check_rate_conditions(const RateFamily& rates, const Specification& spec,
                                      const Torus& geom);

// |sum_xi int c_D f g(xi.) dmu - sum_xi int chat_D f(xi.) g dmu| summed over
// all rule translates whose shape equals delta.
double switching_residual(const RateFamily& rates, const Specification& spec,
                          const ProbVector& mu, std::span<const double> f,
                          std::span<const double> g, const Window& delta);

// |sum_D sum_xi nabla_z^i (c - chat)(eta)|
double oscillation_residual(const RateFamily& rates, const RateFamily& rhat,
                            const Torus& geom, int z, Spin i, const Configuration& eta);
// the summed window form with nabla_Lambda
double oscillation_residual_window(const RateFamily& rates, const RateFamily& rhat,
                                   const Torus& geom, const Window& lam,
                                   const Configuration& eta);

double detailed_balance_residual(const SparseGenerator& gen, const ProbVector& mu);

// beta(n): tail of the oscillation series at the origin over rule translates
// whose shape misses the centered cube of radius n.
double beta_tail(const RateFamily& rates, const RateFamily& rhat, const Torus& geom, int n);

}  // namespace gibbslab
