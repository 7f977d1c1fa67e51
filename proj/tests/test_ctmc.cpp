#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gibbslab/ctmc.hpp"
#include "oracles.hpp"

using namespace gibbslab;

namespace {

SparseGenerator two_state(double a, double b) {
  return SparseGenerator::from_edges(2, {{0, 1, a}, {1, 0, b}});
}

// ring plus random extra edges, rates in [lo, hi]
SparseGenerator random_irreducible(std::size_t n, std::mt19937_64& rng, double lo = 0.2,
                                   double hi = 2.0) {
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> edges;
  auto rate = [&] { return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53); };
  for (std::uint32_t x = 0; x < n; ++x)
    edges.push_back({x, static_cast<std::uint32_t>((x + 1) % n), rate()});
  const int extra = static_cast<int>(rng() % (2 * n));
  for (int k = 0; k < extra; ++k) {
    const auto from = static_cast<std::uint32_t>(rng() % n);
    const auto to = static_cast<std::uint32_t>(rng() % n);
    if (from != to) edges.push_back({from, to, rate()});
  }
  return SparseGenerator::from_edges(n, std::move(edges));
}

ProbVector random_law(std::size_t n, std::mt19937_64& rng) {
  ProbVector nu;
  nu.p.resize(n);
  for (auto& v : nu.p) v = -std::log(1.0 - static_cast<double>(rng() >> 11) * 0x1.0p-53);
  nu.normalize();
  return nu;
}

}  // namespace

TEST_CASE("stationary distribution") {
  SUBCASE("two-state chain solves the balance equation") {
    const ProbVector mu = stationary(two_state(1.0, 2.0));
    CHECK(mu[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(mu[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("symmetric generator gives the uniform law") {
    std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> edges;
    for (std::uint32_t x = 0; x < 5; ++x)
      for (std::uint32_t y = 0; y < 5; ++y)
        if (x != y) edges.push_back({x, y, 0.7});
    const ProbVector mu = stationary(SparseGenerator::from_edges(5, std::move(edges)));
    for (std::size_t i = 0; i < 5; ++i)
      CHECK(mu[i] == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("defining residual is tiny") {
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 20; ++rep) {
      const SparseGenerator gen = random_irreducible(5, rng);
      const ProbVector mu = stationary(gen);
      CHECK(stationarity_residual(mu, gen) < 1e-12);
      CHECK(oracle::dense_stationarity_residual(mu, gen) < 1e-12);
      CHECK(mu.strictly_positive());
    }
  }
  SUBCASE("reducible generator is rejected") {
    const SparseGenerator gen = SparseGenerator::from_edges(3, {{0, 1, 1.0}, {1, 0, 1.0}});
    CHECK_THROWS_AS(stationary(gen), NonUniquenessError);
  }
}

TEST_CASE("relative entropy") {
  ProbVector mu(std::vector<double>{0.5, 0.5});
  CHECK(relative_entropy(mu, mu) == 0.0);
  CHECK(relative_entropy(ProbVector({1.0, 0.0}), mu) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(relative_entropy(ProbVector({0.5, 0.5}), ProbVector({1.0, 0.0})) == kInf);
}

TEST_CASE("phi branch formula") {
  CHECK(phi(1.0) == 0.0);
  CHECK(phi(-3.0) == -1.0);
  CHECK(phi(0.0) == -1.0);
  CHECK(phi(std::exp(1.0)) == doctest::Approx(-1.0).epsilon(1e-15));
  // nonpositive and strictly concave on a grid
  double prev_second = kInf;
  for (double u = 0.25; u <= 4.0; u += 0.25) {
    CHECK(phi(u) <= 1e-15);
    const double second = phi(u - 0.125) + phi(u + 0.125) - 2.0 * phi(u);
    CHECK(second < 0.0);
    prev_second = second;
  }
  (void)prev_second;
}

TEST_CASE("entropy loss representations") {
  std::mt19937_64 rng(31);

  SUBCASE("nu = mu gives zero loss") {
    const SparseGenerator gen = random_irreducible(4, rng);
    const ProbVector mu = stationary(gen);
    CHECK(std::abs(entropy_loss_generator_form(mu, mu, gen)) < 1e-13);
    CHECK(std::abs(entropy_loss_phi_form(mu, mu, gen)) < 1e-13);
  }
  SUBCASE("vanishing nu with inbound flow gives -infinity") {
    const SparseGenerator gen = two_state(1.0, 2.0);
    const ProbVector mu = stationary(gen);
    const ProbVector nu({1.0, 0.0});
    CHECK(entropy_loss_generator_form(nu, mu, gen) == -kInf);
    CHECK(entropy_loss_phi_form(nu, mu, gen) == -kInf);
  }
  SUBCASE("two-state explicit value matches the finite-difference oracle") {
    const SparseGenerator gen = two_state(1.0, 2.0);
    const ProbVector mu = stationary(gen);
    const ProbVector nu({0.5, 0.5});
    const double g = entropy_loss_generator_form(nu, mu, gen);
    CHECK(g < 0.0);
    const double fd = oracle::entropy_loss_finite_difference(nu, mu, gen, 1e-5);
    CHECK(g == doctest::Approx(fd).epsilon(1e-6));
  }
  SUBCASE("the two representations agree for stationary mu") {
    for (int rep = 0; rep < 100; ++rep) {
      const std::size_t n = 2 + rng() % 5;
      const SparseGenerator gen = random_irreducible(n, rng);
      const ProbVector mu = stationary(gen);
      const ProbVector nu = random_law(n, rng);
      const double g1 = entropy_loss_generator_form(nu, mu, gen);
      const double g2 = entropy_loss_phi_form(nu, mu, gen);
      CHECK(g2 <= 1e-12);
      CHECK(std::abs(g1 - g2) <= 1e-10 * std::max(1.0, std::abs(g1)));
    }
  }
  SUBCASE("phi form rejects a non-stationary reference measure") {
    const SparseGenerator gen = two_state(1.0, 2.0);
    const ProbVector wrong({0.5, 0.5});
    CHECK_THROWS_AS(entropy_loss_phi_form(wrong, wrong, gen), ContractError);
  }
}

TEST_CASE("uniformization evolve") {
  std::mt19937_64 rng(17);

  SUBCASE("t = 0 is the identity") {
    const SparseGenerator gen = two_state(1.0, 2.0);
    const ProbVector nu({0.3, 0.7});
    CHECK(evolve(nu, gen, 0.0).p == nu.p);
  }
  SUBCASE("negative times are rejected") {
    const SparseGenerator gen = two_state(1.0, 2.0);
    CHECK_THROWS_AS(evolve(ProbVector({0.5, 0.5}), gen, -1.0), std::invalid_argument);
  }
  SUBCASE("mass is conserved") {
    const SparseGenerator gen = random_irreducible(6, rng);
    const ProbVector nu = random_law(6, rng);
    for (double t : {0.1, 1.0, 10.0, 250.0}) {
      const ProbVector out = evolve(nu, gen, t);
      CHECK(std::abs(out.sum() - 1.0) < 1e-12);
      for (double v : out.p) CHECK(v >= 0.0);
    }
  }
  SUBCASE("agrees with the dense matrix exponential") {
    for (std::size_t n : {2ul, 8ul, 64ul, 256ul, 512ul}) {
      const SparseGenerator gen = random_irreducible(n, rng);
      const ProbVector nu = random_law(n, rng);
      const double t = 0.5 + (rng() % 4);
      const ProbVector fast = evolve(nu, gen, t);
      const ProbVector slow = oracle::dense_evolve(nu, gen, t);
      double worst = 0.0;
      for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(fast[i] - slow[i]));
      CHECK(worst < 1e-8);
    }
  }
  SUBCASE("semigroup property") {
    const SparseGenerator gen = random_irreducible(6, rng);
    const ProbVector nu = random_law(6, rng);
    const ProbVector once = evolve(nu, gen, 1.7);
    const ProbVector twice = evolve(evolve(nu, gen, 0.9), gen, 0.8);
    double worst = 0.0;
    for (std::size_t i = 0; i < 6; ++i) worst = std::max(worst, std::abs(once[i] - twice[i]));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("relative entropy is a Lyapunov function") {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t n = 2 + rng() % 5;
    const SparseGenerator gen = random_irreducible(n, rng);
    const ProbVector mu = stationary(gen);
    ProbVector nu = random_law(n, rng);
    double prev = relative_entropy(nu, mu);
    for (int k = 0; k < 50; ++k) {
      nu = evolve(nu, gen, 0.05);
      const double h = relative_entropy(nu, mu);
      CHECK(h <= prev + 1e-10);
      prev = h;
    }
  }
}

TEST_CASE("zero loss forces nu = mu") {
  std::mt19937_64 rng(29);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 2 + rng() % 5;
    const SparseGenerator gen = random_irreducible(n, rng);
    const ProbVector mu = stationary(gen);
    // perturbations of mu at several scales, plus fresh random laws
    for (double scale : {0.0, 1e-6, 1e-3, 0.1}) {
      ProbVector nu = mu;
      for (std::size_t i = 0; i < n; ++i)
        nu.p[i] *= 1.0 + scale * (static_cast<double>(rng() >> 11) * 0x1.0p-52 - 1.0);
      nu.normalize();
      const double g = entropy_loss_phi_form(nu, mu, gen);
      CHECK(g <= 1e-15);
      if (std::abs(g) < 1e-9) CHECK(l1_distance(nu, mu) < 1e-4);
    }
    const ProbVector nu = random_law(n, rng);
    const double g = entropy_loss_phi_form(nu, mu, gen);
    if (std::abs(g) < 1e-9) CHECK(l1_distance(nu, mu) < 1e-4);
  }
}
