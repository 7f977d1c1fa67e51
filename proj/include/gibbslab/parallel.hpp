#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gibbslab::par {

// Reductions are blocked so that the result is identical for every worker
// count: each fixed-size block is summed serially, block partials are then
// folded in index order.
inline constexpr std::size_t kBlock = 4096;

inline int max_workers() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_workers(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

template <class Term>
double blocked_sum(std::size_t n, Term&& term) {
  if (n == 0) return 0.0;
  const std::size_t nblocks = (n + kBlock - 1) / kBlock;
  std::vector<double> partial(nblocks, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long b = 0; b < static_cast<long long>(nblocks); ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * kBlock;
    const std::size_t hi = lo + kBlock < n ? lo + kBlock : n;
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += term(i);
    partial[static_cast<std::size_t>(b)] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

// Serial reference with the same blocking, kept for kernel validation.
template <class Term>
double blocked_sum_ref(std::size_t n, Term&& term) {
  if (n == 0) return 0.0;
  const std::size_t nblocks = (n + kBlock - 1) / kBlock;
  std::vector<double> partial(nblocks, 0.0);
  for (std::size_t b = 0; b < nblocks; ++b) {
    const std::size_t lo = b * kBlock;
    const std::size_t hi = lo + kBlock < n ? lo + kBlock : n;
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += term(i);
    partial[b] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

// Max of doubles is exact, so a plain reduction is already deterministic.
template <class Term>
double max_over(std::size_t n, Term&& term) {
  double best = 0.0;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) reduction(max : best)
#endif
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    const double v = term(static_cast<std::size_t>(i));
    if (v > best) best = v;
  }
  return best;
}

template <class Body>
void for_each_index(std::size_t n, Body&& body) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < static_cast<long long>(n); ++i)
    body(static_cast<std::size_t>(i));
}

}  // namespace gibbslab::par
