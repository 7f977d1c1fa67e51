#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gibbslab/errors.hpp"

namespace gibbslab {

using Spin = std::uint8_t;
using StateIndex = std::uint64_t;

// Finite torus (Z/S_1) x ... x (Z/S_d) with row-major site indexing.
class Torus {
 public:
  explicit Torus(std::vector<int> sides);

  int dim() const { return static_cast<int>(sides_.size()); }
  int side(int axis) const { return sides_[axis]; }
  int min_side() const;
  int site_count() const { return n_; }

  int site_of(std::span<const int> coords) const;  // wraps componentwise
  std::vector<int> coords_of(int site) const;
  int translate_site(int site, std::span<const int> shift) const;
  // Wrapped sup-metric; symmetric and satisfies the triangle inequality.
  int distance(int a, int b) const;

 private:
  std::vector<int> sides_;
  std::vector<int> strides_;
  int n_;
};

// Spin assignment on the full torus, values in {0,...,q-1}.
struct Configuration {
  int q = 0;
  std::vector<Spin> spins;

  Configuration() = default;
  Configuration(int q_, std::vector<Spin> spins_);
};

// Ordered list of distinct torus sites (a finite volume).
struct Window {
  std::vector<int> sites;

  int size() const { return static_cast<int>(sites.size()); }
  bool contains(int site) const;
};

// Mixed-radix little-endian state indexing over the canonical site order.
class StateCodec {
 public:
  StateCodec(int q, int n_sites);

  int q() const { return q_; }
  int sites() const { return n_sites_; }
  StateIndex state_count() const { return count_; }

  StateIndex encode(std::span<const Spin> spins) const;
  void decode(StateIndex state, std::span<Spin> out) const;
  Spin digit(StateIndex state, int site) const;
  StateIndex with_digit(StateIndex state, int site, Spin value) const;
  StateIndex pow(int site) const { return pow_[site]; }

 private:
  int q_;
  int n_sites_;
  StateIndex count_;
  std::vector<StateIndex> pow_;
};

// Index of a partial configuration within its window (little-endian base q).
std::size_t local_index(int q, std::span<const Spin> values);
void local_decode(int q, std::size_t index, std::span<Spin> out);
std::size_t local_count(int q, int n_sites);

StateIndex encode_config(const Configuration& config);
Configuration decode_config(StateIndex state, int q, int n_sites);

Configuration translate_config(const Torus& torus, const Configuration& config,
                               std::span<const int> shift);
std::vector<Spin> project_window(const Configuration& config, const Window& w);
// The single-spin replacement eta^{z,i}.
Configuration flipped(const Configuration& config, int site, Spin value);

Window full_window(const Torus& torus);
// B_r(x) in the wrapped sup-metric, sites in canonical order.
Window ball_window(const Torus& torus, int center_site, int radius);
// [c-k, c+k]^d around the canonical center c = floor(sides/2).
Window centered_cube(const Torus& torus, int half_extent);
Window translate_window(const Torus& torus, const Window& w, std::span<const int> shift);
Window offsets_at(const Torus& torus, std::span<const std::vector<int>> offsets, int site);
Window window_union(const Window& a, const Window& b);
bool window_subset(const Window& inner, const Window& outer);
bool windows_intersect(const Window& a, const Window& b);

}  // namespace gibbslab
