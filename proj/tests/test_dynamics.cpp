#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gibbslab/dynamics.hpp"
#include "oracles.hpp"

using namespace gibbslab;

namespace {

Potential ising_1d(double k) {
  Potential pot = ising_potential(1, 1.0);
  pot.beta = k;
  return pot;
}

Potential potts_1d(int q, double k) {
  Potential pot = potts_potential(1, q, 1.0);
  pot.beta = k;
  return pot;
}

Configuration random_config(const Torus& t, int q, std::mt19937_64& rng) {
  Configuration c(q, std::vector<Spin>(t.site_count(), 0));
  for (auto& s : c.spins) s = static_cast<Spin>(rng() % q);
  return c;
}

}  // namespace

TEST_CASE("heat bath rates") {
  SUBCASE("zero potential flips with rate 1/q") {
    const Torus t({5});
    const Specification spec(zero_potential(3), t);
    const RateFamily fam = make_heat_bath(spec);
    std::mt19937_64 rng(2);
    const Configuration eta = random_config(t, 3, rng);
    for (int x = 0; x < 5; ++x)
      for (Spin j = 0; j < 3; ++j) {
        const Spin xi[1] = {j};
        const double expected = j == eta.spins[x] ? 0.0 : 1.0 / 3.0;
        CHECK(rule_rate_at(fam.rules[0], t, x, eta, xi) ==
              doctest::Approx(expected).epsilon(1e-14));
      }
  }
  SUBCASE("rates never exceed one and satisfy detailed balance") {
    const Torus t({6});
    const Potential pot = ising_1d(0.5);
    const Specification spec(pot, t);
    const RateFamily fam = make_heat_bath(spec);
    CHECK(fam.sup_rate() <= 1.0 + 1e-14);
    const SparseGenerator gen = assemble_generator(fam, t);
    const ProbVector mu = exact_gibbs(pot, t);
    CHECK(detailed_balance_residual(gen, mu) < 1e-12);
  }
}

TEST_CASE("cyclic rates") {
  SUBCASE("zero potential gives the forward cycle at rate q kappa") {
    const Torus t({4});
    const Specification spec(zero_potential(3), t);
    const RateFamily fam = make_cyclic(spec, 0.5);
    std::mt19937_64 rng(3);
    const Configuration eta = random_config(t, 3, rng);
    for (int x = 0; x < 4; ++x)
      for (Spin j = 0; j < 3; ++j) {
        const Spin xi[1] = {j};
        const double expected = j == (eta.spins[x] + 1) % 3 ? 3.0 * 0.5 : 0.0;
        CHECK(rule_rate_at(fam.rules[0], t, x, eta, xi) ==
              doctest::Approx(expected).epsilon(1e-14));
      }
  }
  SUBCASE("every Gibbs measure is stationary, q = 3, N = 4") {
    const Torus t({4});
    const Potential pot = potts_1d(3, 0.5);
    const Specification spec(pot, t);
    const RateFamily fam = make_cyclic(spec, 1.0);
    const SparseGenerator gen = assemble_generator(fam, t);
    const ProbVector mu = exact_gibbs(pot, t);
    CHECK(oracle::dense_stationarity_residual(mu, gen) < 1e-10);
    CHECK(stationarity_residual(mu, gen) < 1e-10);
  }
  SUBCASE("q = 3 breaks detailed balance at K = 0.5") {
    const Torus t({5});
    const Potential pot = potts_1d(3, 0.5);
    const Specification spec(pot, t);
    const SparseGenerator gen = assemble_generator(make_cyclic(spec, 1.0), t);
    const ProbVector mu = exact_gibbs(pot, t);
    CHECK(detailed_balance_residual(gen, mu) > 1e-2);
  }
  SUBCASE("q = 2 cyclic collapses to a reversible flip") {
    const Torus t({5});
    const Potential pot = ising_1d(0.5);
    const Specification spec(pot, t);
    const SparseGenerator gen = assemble_generator(make_cyclic(spec, 1.0), t);
    const ProbVector mu = exact_gibbs(pot, t);
    CHECK(detailed_balance_residual(gen, mu) < 1e-12);
  }
}

TEST_CASE("mixtures") {
  const Torus t({5});
  const Potential pot = potts_1d(3, 0.4);
  const Specification spec(pot, t);
  const RateFamily hb = make_heat_bath(spec);
  const RateFamily cy = make_cyclic(spec, 0.7);

  SUBCASE("weight (1, 0) reproduces the first family") {
    CHECK(rate_family_distance(mix(1.0, hb, 0.0, cy), hb) < 1e-15);
  }
  SUBCASE("the mixture keeps the Gibbs measure stationary") {
    const RateFamily m = mix(0.6, hb, 1.3, cy);
    const SparseGenerator gen = assemble_generator(m, t);
    const ProbVector mu = exact_gibbs(pot, t);
    CHECK(stationarity_residual(mu, gen) < 1e-10);
  }
  SUBCASE("kappa of the mixture is the smallest scaled positive rate") {
    const RateFamily m = mix(0.25, hb, 2.0, cy);
    double expected = kInf;
    if (auto k = hb.kappa()) expected = std::min(expected, 0.25 * *k);
    if (auto k = cy.kappa()) expected = std::min(expected, 2.0 * *k);
    CHECK(*m.kappa() == doctest::Approx(expected).epsilon(1e-14));
  }
  SUBCASE("two zero weights are degenerate") {
    CHECK_THROWS_AS(mix(0.0, hb, 0.0, cy), ContractError);
  }
}

TEST_CASE("rate conditions") {
  const Torus t({4});
  const Potential pot = ising_1d(0.5);
  const Specification spec(pot, t);

  SUBCASE("heat bath passes R1 through R6") {
    const ConditionReport rep = check_rate_conditions(make_heat_bath(spec), spec, t);
    CHECK(rep.all_pass());
    CHECK(rep.max_shape == 1);
    CHECK(rep.kappa > 0.0);
    CHECK(rep.l1_sum > 0.0);
    CHECK(rep.l2_sum > 0.0);
  }
  SUBCASE("an all-zero family fails irreducibility") {
    RateFamily fam;
    fam.q = 2;
    UpdateRule rule;
    rule.q = 2;
    rule.shape = {{0}};
    rule.dependence = {{0}};
    rule.values.assign(4, 0.0);
    rule.finalize();
    fam.rules.push_back(rule);
    const ConditionReport rep = check_rate_conditions(fam, spec, t);
    CHECK_FALSE(rep.r6);
    CHECK(rep.r1);
  }
  SUBCASE("a negative rate fails R1 and R5 with a witness") {
    RateFamily fam = make_heat_bath(spec);
    fam.rules[0].values[1] = -0.25;
    const ConditionReport rep = check_rate_conditions(fam, spec, t);
    CHECK_FALSE(rep.r1);
    CHECK_FALSE(rep.r5);
    REQUIRE_FALSE(rep.witnesses.empty());
    CHECK(rep.witnesses.front().find("negative rate") != std::string::npos);
  }
  SUBCASE("irreducibility holds for the standard families") {
    const Torus t5({5});
    const Potential potts = potts_1d(3, 0.4);
    const Specification spec3(potts, t5);
    CHECK(is_irreducible(assemble_generator(make_heat_bath(spec3), t5)));
    CHECK(is_irreducible(assemble_generator(make_cyclic(spec3, 1.0), t5)));
    CHECK(is_irreducible(assemble_generator(
        mix(1.0, make_heat_bath(spec3), 1.0, make_cyclic(spec3, 1.0)), t5)));
    const Specification spec2(ising_1d(0.5), t5);
    CHECK(is_irreducible(assemble_generator(make_cyclic(spec2, 1.0), t5)));
  }
}

TEST_CASE("generator assembly") {
  const Torus t({4});
  SUBCASE("zero potential heat bath has uniform off-diagonal rates") {
    const Specification spec(zero_potential(2), t);
    const SparseGenerator gen = assemble_generator(make_heat_bath(spec), t);
    for (std::size_t x = 0; x < gen.n; ++x) {
      CHECK(gen.row_ptr[x + 1] - gen.row_ptr[x] == 4);  // out-degree N (q-1)
      for (std::uint64_t k = gen.row_ptr[x]; k < gen.row_ptr[x + 1]; ++k)
        CHECK(gen.val[k] == doctest::Approx(0.5).epsilon(1e-14));
    }
  }
  SUBCASE("the generator annihilates constants") {
    const Potential pot = ising_1d(0.6);
    const Specification spec(pot, t);
    const SparseGenerator gen = assemble_generator(make_heat_bath(spec), t);
    const std::vector<double> ones(gen.n, 1.0);
    for (double v : gen.apply_to_function(ones)) CHECK(std::abs(v) < 1e-14);
  }
  SUBCASE("single-site families have out-degree at most N (q-1)") {
    const Potential pot = potts_1d(3, 0.4);
    const Torus t5({5});
    const Specification spec(pot, t5);
    const SparseGenerator gen =
        assemble_generator(mix(1.0, make_heat_bath(spec), 1.0, make_cyclic(spec, 1.0)), t5);
    for (std::size_t x = 0; x < gen.n; ++x)
      CHECK(gen.row_ptr[x + 1] - gen.row_ptr[x] <= 5 * 2);
  }
  SUBCASE("negative rates are a contract violation") {
    const Specification spec(zero_potential(2), t);
    RateFamily fam = make_heat_bath(spec);
    fam.rules[0].values[0] = -1.0;
    CHECK_THROWS_AS(assemble_generator(fam, t), ContractError);
  }
}

TEST_CASE("time reversal") {
  const Torus t({5});
  const Potential pot = potts_1d(3, 0.5);
  const Specification spec(pot, t);

  SUBCASE("heat bath is a fixed point") {
    const RateFamily hb = make_heat_bath(spec);
    CHECK(rate_family_distance(hb, time_reversal(hb, spec)) < 1e-12);
  }
  SUBCASE("cyclic reversal is the backward cycle") {
    const RateFamily cy = make_cyclic(spec, 1.0);
    const RateFamily rhat = time_reversal(cy, spec);
    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 40; ++rep) {
      const Configuration eta = random_config(t, 3, rng);
      const int x = static_cast<int>(rng() % 5);
      for (Spin j = 0; j < 3; ++j) {
        const Spin xi[1] = {j};
        double total = 0.0;
        for (const auto& rule : rhat.rules) total += rule_rate_at(rule, t, x, eta, xi);
        const double expected = j == (eta.spins[x] + 3 - 1) % 3
                                    ? 1.0 / spec.gamma_single(x, eta.spins[x], eta)
                                    : 0.0;
        CHECK(total == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
  SUBCASE("reversal is an involution") {
    const RateFamily m = mix(1.0, make_heat_bath(spec), 0.8, make_cyclic(spec, 0.9));
    const RateFamily twice = time_reversal(time_reversal(m, spec), spec);
    CHECK(rate_family_distance(m, twice) < 1e-12);
  }
  SUBCASE("reversal rates obey the non-nullness norm bound, every rule") {
    const double delta = spec.nonnull_delta();
    for (const RateFamily& fam :
         {make_cyclic(spec, 1.0),
          mix(1.0, make_heat_bath(spec), 1.0, make_cyclic(spec, 1.0))}) {
      const RateFamily rhat = time_reversal(fam, spec);
      const int R = fam.max_shape_size();
      for (std::size_t r = 0; r < rhat.rules.size(); ++r)
        CHECK(rhat.rules[r].sup_rate() <=
              (1.0 / delta) * std::exp(R) * fam.rules[r].sup_rate() + 1e-12);
    }
  }
  SUBCASE("the reversed family keeps mu stationary") {
    const RateFamily cy = make_cyclic(spec, 1.0);
    const RateFamily rhat = time_reversal(cy, spec);
    const ProbVector mu = exact_gibbs(pot, t);
    const SparseGenerator gen = assemble_generator(rhat, t);
    CHECK(stationarity_residual(mu, gen) < 1e-10);
  }
}

TEST_CASE("switching identity") {
  const Torus t({5});
  const Potential pot = potts_1d(3, 0.5);
  const Specification spec(pot, t);
  const RateFamily cy = make_cyclic(spec, 1.0);
  const ProbVector mu = exact_gibbs(pot, t);
  const std::size_t n = mu.size();
  std::mt19937_64 rng(12);

  SUBCASE("constant functions make both sides equal trivially") {
    const std::vector<double> ones(n, 1.0);
    for (int x = 0; x < 5; ++x)
      CHECK(switching_residual(cy, spec, mu, ones, ones, Window{{x}}) < 1e-13);
  }
  SUBCASE("random indicator pairs") {
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<double> f(n), g(n);
      for (auto& v : f) v = (rng() & 1) ? 1.0 : 0.0;
      for (auto& v : g) v = (rng() & 1) ? 1.0 : 0.0;
      const Window delta{{static_cast<int>(rng() % 5)}};
      CHECK(switching_residual(cy, spec, mu, f, g, delta) < 1e-10);
    }
  }
  SUBCASE("fails for a non-Gibbs reference measure") {
    const ProbVector uniform = ProbVector::uniform(n);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> f(n), g(n);
      for (auto& v : f) v = (rng() & 1) ? 1.0 : 0.0;
      for (auto& v : g) v = (rng() & 1) ? 1.0 : 0.0;
      worst = std::max(worst, switching_residual(cy, spec, uniform, f, g, Window{{2}}));
    }
    CHECK(worst > 1e-4);
  }
}

TEST_CASE("oscillation equations") {
  const Torus t({4});
  const Potential pot = potts_1d(3, 0.5);
  const Specification spec(pot, t);
  const RateFamily cy = make_cyclic(spec, 1.0);
  const RateFamily rhat = time_reversal(cy, spec);

  SUBCASE("reversible dynamics cancel exactly") {
    const RateFamily hb = make_heat_bath(spec);
    const RateFamily hb_hat = time_reversal(hb, spec);
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 20; ++rep) {
      const Configuration eta = random_config(t, 3, rng);
      CHECK(oscillation_residual(hb, hb_hat, t, static_cast<int>(rng() % 4),
                                 static_cast<Spin>(rng() % 3), eta) < 1e-12);
    }
  }
  SUBCASE("irreversible dynamics still satisfy the identity, all arguments") {
    const StateCodec codec(3, 4);
    double worst = 0.0;
    for (StateIndex s = 0; s < codec.state_count(); ++s) {
      const Configuration eta = decode_config(s, 3, 4);
      for (int z = 0; z < 4; ++z)
        for (Spin i = 0; i < 3; ++i)
          worst = std::max(worst, oscillation_residual(cy, rhat, t, z, i, eta));
    }
    CHECK(worst < 1e-10);
  }
  SUBCASE("window form of the identity") {
    std::mt19937_64 rng(6);
    const Window lam{{0, 1}};
    for (int rep = 0; rep < 10; ++rep) {
      const Configuration eta = random_config(t, 3, rng);
      CHECK(oscillation_residual_window(cy, rhat, t, lam, eta) < 1e-10);
    }
  }
  SUBCASE("a perturbed specification is detected") {
    Potential wrong = pot;
    wrong.beta = 0.6;
    const Specification spec_wrong(wrong, t);
    const RateFamily rhat_wrong = time_reversal(cy, spec_wrong);
    const StateCodec codec(3, 4);
    double worst = 0.0;
    for (StateIndex s = 0; s < codec.state_count(); ++s) {
      const Configuration eta = decode_config(s, 3, 4);
      for (int z = 0; z < 4; ++z)
        for (Spin i = 0; i < 3; ++i)
          worst = std::max(worst, oscillation_residual(cy, rhat_wrong, t, z, i, eta));
    }
    CHECK(worst > 1e-3);
  }
}

TEST_CASE("beta tail of the oscillation series") {
  const Torus t({9});
  const Potential pot = ising_1d(0.4);
  const Specification spec(pot, t);
  const RateFamily hb = make_heat_bath(spec);
  const RateFamily rhat = time_reversal(hb, spec);

  const double b0 = beta_tail(hb, rhat, t, 0);
  const double b1 = beta_tail(hb, rhat, t, 1);
  const double b2 = beta_tail(hb, rhat, t, 2);
  const double b3 = beta_tail(hb, rhat, t, 3);
  CHECK(std::isfinite(b0));
  CHECK(b0 >= b1);
  CHECK(b1 >= b2);
  CHECK(b2 == 0.0);  // nearest-neighbor rates vanish beyond the range
  CHECK(b3 == 0.0);
}

TEST_CASE("stationarity residual detects bias") {
  const Torus t({4});
  const Potential pot = ising_1d(0.5);
  const Specification spec(pot, t);
  const SparseGenerator gen = assemble_generator(make_cyclic(spec, 1.0), t);
  const ProbVector uniform = ProbVector::uniform(gen.n);
  CHECK(stationarity_residual(uniform, gen) > 1e-3);
}

TEST_CASE("multi-site update rules") {
  // a synthetic two-site family: the switching identity holds for any rates
  const Torus t({6});
  const Potential pot = ising_1d(0.4);
  const Specification spec(pot, t);
  std::mt19937_64 rng(77);

  RateFamily fam;
  fam.q = 2;
  UpdateRule rule;
  rule.q = 2;
  rule.shape = {{0}, {1}};
  rule.dependence = {{-1}, {0}, {1}, {2}};
  rule.values.assign(16 * 4, 0.0);
  for (std::size_t row = 0; row < 16; ++row) {
    const std::size_t cur = ((row >> 1) & 1u) | (((row >> 2) & 1u) << 1);
    for (std::size_t c = 0; c < 4; ++c)
      if (c != cur)
        rule.values[row * 4 + c] =
            0.5 + static_cast<double>(rng() >> 11) * 0x1.0p-53;
  }
  rule.finalize();
  fam.rules.push_back(rule);

  SUBCASE("generator rows annihilate constants and bound the out-degree") {
    const SparseGenerator gen = assemble_generator(fam, t);
    const std::vector<double> ones(gen.n, 1.0);
    for (double v : gen.apply_to_function(ones)) CHECK(std::abs(v) < 1e-13);
    for (std::size_t x = 0; x < gen.n; ++x)
      CHECK(gen.row_ptr[x + 1] - gen.row_ptr[x] <= 6 * 3);
    const SparseGenerator ref = assemble_generator_ref(fam, t);
    CHECK(gen.col == ref.col);
    CHECK(gen.val == ref.val);
  }
  SUBCASE("time reversal is an involution for pair updates too") {
    const RateFamily twice = time_reversal(time_reversal(fam, spec), spec);
    CHECK(rate_family_distance(fam, twice) < 1e-12);
  }
  SUBCASE("switching identity holds for arbitrary pair rates") {
    const ProbVector mu = exact_gibbs(pot, t);
    std::vector<double> f(mu.size()), g(mu.size());
    for (int rep = 0; rep < 10; ++rep) {
      for (auto& v : f) v = (rng() & 1) ? 1.0 : 0.0;
      for (auto& v : g) v = (rng() & 1) ? 1.0 : 0.0;
      const int x = static_cast<int>(rng() % 6);
      Window delta{{x, (x + 1) % 6}};
      std::sort(delta.sites.begin(), delta.sites.end());
      CHECK(switching_residual(fam, spec, mu, f, g, delta) < 1e-10);
    }
  }
  SUBCASE("anchored representations of one class merge into a single rule") {
    RateFamily shifted = fam;
    shifted.rules[0].shape = {{-1}, {0}};
    shifted.rules[0].dependence = {{-2}, {-1}, {0}, {1}};
    RateFamily both;
    both.q = 2;
    both.rules = {fam.rules[0], shifted.rules[0]};
    const RateFamily merged = merge_shape_classes(both);
    CHECK(merged.rules.size() == 1);
    const SparseGenerator a = assemble_generator(both, t);
    const SparseGenerator b = assemble_generator(merged, t);
    REQUIRE(a.col == b.col);
    for (std::size_t k = 0; k < a.val.size(); ++k)
      CHECK(a.val[k] == doctest::Approx(b.val[k]).epsilon(1e-13));
  }
}

TEST_CASE("two-dimensional torus round trip") {
  const Torus t({3, 3});
  Potential pot = ising_potential(2, 1.0);
  pot.beta = 0.3;
  const Specification spec(pot, t);
  const RateFamily hb = make_heat_bath(spec);
  const SparseGenerator gen = assemble_generator(hb, t);
  const ProbVector mu = exact_gibbs(pot, t);
  CHECK(spec.nonnull_delta() ==
        doctest::Approx(1.0 / (1.0 + std::exp(8.0 * 0.3))).epsilon(1e-12));
  CHECK(dlr_residual(mu, spec, Window{{4}}) < 1e-12);
  CHECK(stationarity_residual(mu, gen) < 1e-12);
  CHECK(detailed_balance_residual(gen, mu) < 1e-12);
  CHECK(rate_family_distance(hb, time_reversal(hb, spec)) < 1e-12);
}

TEST_CASE("merged shape classes assemble the same generator") {
  const Torus t({5});
  const Potential pot = potts_1d(3, 0.4);
  const Specification spec(pot, t);
  const RateFamily m = mix(0.7, make_heat_bath(spec), 1.1, make_cyclic(spec, 0.8));
  const RateFamily merged = merge_shape_classes(m);
  CHECK(merged.rules.size() == 1);
  const SparseGenerator a = assemble_generator(m, t);
  const SparseGenerator b = assemble_generator(merged, t);
  REQUIRE(a.col == b.col);
  for (std::size_t k = 0; k < a.val.size(); ++k)
    CHECK(a.val[k] == doctest::Approx(b.val[k]).epsilon(1e-14));
}
