#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gibbslab/dynamics.hpp"
#include "gibbslab/gibbs.hpp"
#include "gibbslab/lattice.hpp"

namespace gibbslab {

// Window-marginal evaluator nu(eta_Lambda). Sources backing the entropy
// functionals must be exact (torus enumeration, product law, or transfer
// matrix); empirical counts are confined to the Monte Carlo module.
class MarginalSource {
 public:
  MarginalSource(int q, bool exact, std::string kind)
      : q_(q), exact_(exact), kind_(std::move(kind)) {}
  virtual ~MarginalSource() = default;

  int q() const { return q_; }
  bool exact() const { return exact_; }
  const std::string& kind() const { return kind_; }

  // Cylinder probability; the window's site order fixes the value order.
  virtual double prob(const Window& w, std::span<const Spin> values) const = 0;
  // Dense table over the window, little-endian in window order.
  virtual std::vector<double> table(const Window& w) const;

 private:
  int q_;
  bool exact_;
  std::string kind_;
};

class ExactTorusSource final : public MarginalSource {
 public:
  ExactTorusSource(ProbVector mu, int q, const Torus& geom);
  double prob(const Window& w, std::span<const Spin> values) const override;
  std::vector<double> table(const Window& w) const override;

 private:
  ProbVector mu_;
  StateCodec codec_;
};

// i.i.d. single-site law (translation-invariant product measure).
class ProductSource final : public MarginalSource {
 public:
  ProductSource(int q, std::vector<double> site_law);
  double prob(const Window& w, std::span<const Spin> values) const override;

 private:
  std::vector<double> law_;
};

// d = 1 infinite-volume Gibbs marginals; site indices are line positions.
class TransferSource final : public MarginalSource {
 public:
  explicit TransferSource(const Potential& pot);
  double prob(const Window& w, std::span<const Spin> values) const override;

 private:
  TransferMatrix1D tm_;
};

// The window pair (Lambda_n, tilde-Lambda_n) with the ball rule for the
// monotone rate truncation, realized as centered cubes in the torus.
class TruncationScheme {
 public:
  TruncationScheme(const Torus& geom, int n_max);

  const Torus& torus() const { return geom_; }
  int n_max() const { return n_max_; }
  Window lambda(int n) const;        // radius 2^n - 1
  Window lambda_tilde(int n) const;  // radius 2^n - n - 1
  Window ball(int center_site, int radius) const;

 private:
  Torus geom_;
  int n_max_;
};

// sum_eta nu(eta) log(nu(eta)/mu(eta)); +inf on absolute continuity failure.
double h_window(const MarginalSource& nu, const MarginalSource& mu, const Window& lam);

enum class RatioOrientation {
  key_equality,   // gamma(xi|.)/gamma(eta|.) inside the integral
  transposed,     // the flipped ratio, kept behind this debug switch
};

// Relative entropy loss in Lambda_n: every rule translate meeting Lambda_n.
double g_n(const RateFamily& rates, const MarginalSource& nu, const MarginalSource& mu,
           const TruncationScheme& sch, int n);
// Same sum restricted to updates inside tilde-Lambda_n.
double g_tilde_n(const RateFamily& rates, const MarginalSource& nu, const MarginalSource& mu,
                 const TruncationScheme& sch, int n);

// Monotone truncation: inf over completions of eta outside the ball.
double truncated_rate(const UpdateRule& rule, const Torus& geom, int x, const Window& ball,
                      const Configuration& eta, std::span<const Spin> xi);

// One term of the s_n functional (the F_0 factor with its case analysis).
double f_term(const MarginalSource& nu, const Specification& spec, const TruncationScheme& sch,
              int n, std::span<const Spin> eta_lambda, const Window& delta,
              std::span<const Spin> xi,
              RatioOrientation orientation = RatioOrientation::key_equality);

double s_n(const RateFamily& rates, const Specification& spec, const MarginalSource& nu,
           const TruncationScheme& sch, int n,
           RatioOrientation orientation = RatioOrientation::key_equality);

double S_n(const RateFamily& rates, const Specification& spec, const MarginalSource& nu,
           const MarginalSource& mu, const TruncationScheme& sch, int n);

// G_n = prod_{k>=n} ((2^{k+2}-2)/(2^{k+2}-1))^d
double g_correction(int n, int dim);

struct CorrectedSequence {
  std::vector<double> values;  // G_n s_n / |Lambda_n|
  bool nonincreasing = false;
};
CorrectedSequence corrected_sequence(std::span<const double> s_values, int first_n, int dim);

// Spins kept inside Lambda_n, state 0 outside.
Configuration fill_configuration(std::span<const Spin> eta_lambda, int n,
                                 const TruncationScheme& sch, int q);

// Explicit constant for the |g^n - g~^n| <= C |Lambda_n \ tilde-Lambda_n| ledger.
double boundary_constant(const RateFamily& rates, double nonnull_delta_mu);

// Checks the truncated-rate dichotomy for one rule over the scheme's radii.
bool truncation_dichotomy(const UpdateRule& rule, const Torus& geom, int x,
                          const TruncationScheme& sch);

}  // namespace gibbslab
