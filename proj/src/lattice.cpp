#include "gibbslab/lattice.hpp"

#include <algorithm>
#include <cstdlib>

namespace gibbslab {

namespace {

int wrap(int v, int side) {
  int r = v % side;
  if (r < 0) r += side;
  return r;
}

}  // namespace

Torus::Torus(std::vector<int> sides) : sides_(std::move(sides)) {
  if (sides_.empty()) throw GeometryError("torus needs at least one axis");
  long long n = 1;
  strides_.resize(sides_.size());
  for (std::size_t a = 0; a < sides_.size(); ++a) {
    if (sides_[a] <= 0) throw GeometryError("torus side lengths must be positive");
    strides_[a] = static_cast<int>(n);
    n *= sides_[a];
    if (n > (1LL << 31)) throw CapacityError("torus site count exceeds 2^31");
  }
  n_ = static_cast<int>(n);
}

int Torus::min_side() const {
  return *std::min_element(sides_.begin(), sides_.end());
}

int Torus::site_of(std::span<const int> coords) const {
  int site = 0;
  for (std::size_t a = 0; a < sides_.size(); ++a)
    site += wrap(coords[a], sides_[a]) * strides_[a];
  return site;
}

std::vector<int> Torus::coords_of(int site) const {
  std::vector<int> c(sides_.size());
  for (std::size_t a = 0; a < sides_.size(); ++a) {
    c[a] = site % sides_[a];
    site /= sides_[a];
  }
  return c;
}

int Torus::translate_site(int site, std::span<const int> shift) const {
  int out = 0;
  for (std::size_t a = 0; a < sides_.size(); ++a) {
    const int c = site % sides_[a];
    site /= sides_[a];
    out += wrap(c + shift[a], sides_[a]) * strides_[a];
  }
  return out;
}

int Torus::distance(int a, int b) const {
  int best = 0;
  for (std::size_t ax = 0; ax < sides_.size(); ++ax) {
    const int ca = a % sides_[ax];
    const int cb = b % sides_[ax];
    a /= sides_[ax];
    b /= sides_[ax];
    const int d = std::abs(ca - cb);
    const int wrapped = std::min(d, sides_[ax] - d);
    best = std::max(best, wrapped);
  }
  return best;
}

Configuration::Configuration(int q_, std::vector<Spin> spins_)
    : q(q_), spins(std::move(spins_)) {
  if (q < 1) throw std::invalid_argument("configuration needs q >= 1");
  for (Spin s : spins)
    if (s >= q) throw std::domain_error("spin value out of range");
}

bool Window::contains(int site) const {
  return std::find(sites.begin(), sites.end(), site) != sites.end();
}

StateCodec::StateCodec(int q, int n_sites) : q_(q), n_sites_(n_sites) {
  if (q < 1 || n_sites < 0) throw std::invalid_argument("bad codec parameters");
  pow_.resize(n_sites + 1);
  StateIndex p = 1;
  for (int i = 0; i <= n_sites; ++i) {
    pow_[i] = p;
    if (i < n_sites) {
      if (p > (StateIndex{1} << 62) / static_cast<StateIndex>(q))
        throw CapacityError("state space does not fit in 64-bit index");
      p *= static_cast<StateIndex>(q);
    }
  }
  count_ = pow_[n_sites];
}

StateIndex StateCodec::encode(std::span<const Spin> spins) const {
  StateIndex s = 0;
  for (int i = 0; i < n_sites_; ++i) {
    if (spins[i] >= q_) throw std::domain_error("spin value out of range");
    s += static_cast<StateIndex>(spins[i]) * pow_[i];
  }
  return s;
}

void StateCodec::decode(StateIndex state, std::span<Spin> out) const {
  for (int i = 0; i < n_sites_; ++i) {
    out[i] = static_cast<Spin>(state % static_cast<StateIndex>(q_));
    state /= static_cast<StateIndex>(q_);
  }
}

Spin StateCodec::digit(StateIndex state, int site) const {
  return static_cast<Spin>((state / pow_[site]) % static_cast<StateIndex>(q_));
}

StateIndex StateCodec::with_digit(StateIndex state, int site, Spin value) const {
  const Spin old = digit(state, site);
  return state + (static_cast<StateIndex>(value) - static_cast<StateIndex>(old)) * pow_[site];
}

std::size_t local_index(int q, std::span<const Spin> values) {
  std::size_t idx = 0;
  std::size_t p = 1;
  for (Spin v : values) {
    idx += static_cast<std::size_t>(v) * p;
    p *= static_cast<std::size_t>(q);
  }
  return idx;
}

void local_decode(int q, std::size_t index, std::span<Spin> out) {
  for (auto& v : out) {
    v = static_cast<Spin>(index % static_cast<std::size_t>(q));
    index /= static_cast<std::size_t>(q);
  }
}

std::size_t local_count(int q, int n_sites) {
  std::size_t p = 1;
  for (int i = 0; i < n_sites; ++i) p *= static_cast<std::size_t>(q);
  return p;
}

StateIndex encode_config(const Configuration& config) {
  StateCodec codec(config.q, static_cast<int>(config.spins.size()));
  return codec.encode(config.spins);
}

Configuration decode_config(StateIndex state, int q, int n_sites) {
  StateCodec codec(q, n_sites);
  Configuration c;
  c.q = q;
  c.spins.resize(n_sites);
  codec.decode(state, c.spins);
  return c;
}

Configuration translate_config(const Torus& torus, const Configuration& config,
                               std::span<const int> shift) {
  Configuration out;
  out.q = config.q;
  out.spins.resize(config.spins.size());
  // (tau_x eta)_y = eta_{y-x}
  std::vector<int> neg(shift.begin(), shift.end());
  for (int& v : neg) v = -v;
  for (int y = 0; y < torus.site_count(); ++y)
    out.spins[y] = config.spins[torus.translate_site(y, neg)];
  return out;
}

std::vector<Spin> project_window(const Configuration& config, const Window& w) {
  std::vector<Spin> out(w.sites.size());
  for (std::size_t i = 0; i < w.sites.size(); ++i) out[i] = config.spins[w.sites[i]];
  return out;
}

Configuration flipped(const Configuration& config, int site, Spin value) {
  Configuration out = config;
  if (value >= config.q) throw std::domain_error("spin value out of range");
  out.spins[site] = value;
  return out;
}

Window full_window(const Torus& torus) {
  Window w;
  w.sites.resize(torus.site_count());
  for (int i = 0; i < torus.site_count(); ++i) w.sites[i] = i;
  return w;
}

Window ball_window(const Torus& torus, int center_site, int radius) {
  Window w;
  for (int s = 0; s < torus.site_count(); ++s)
    if (torus.distance(s, center_site) <= radius) w.sites.push_back(s);
  return w;
}

Window centered_cube(const Torus& torus, int half_extent) {
  std::vector<int> center(torus.dim());
  for (int a = 0; a < torus.dim(); ++a) center[a] = torus.side(a) / 2;
  if (2 * half_extent + 1 > torus.min_side())
    throw GeometryError("centered cube does not fit in the torus");
  return ball_window(torus, torus.site_of(center), half_extent);
}

Window translate_window(const Torus& torus, const Window& w, std::span<const int> shift) {
  Window out;
  out.sites.reserve(w.sites.size());
  for (int s : w.sites) out.sites.push_back(torus.translate_site(s, shift));
  std::sort(out.sites.begin(), out.sites.end());
  return out;
}

Window offsets_at(const Torus& torus, std::span<const std::vector<int>> offsets, int site) {
  Window out;
  out.sites.reserve(offsets.size());
  for (const auto& o : offsets) out.sites.push_back(torus.translate_site(site, o));
  std::sort(out.sites.begin(), out.sites.end());
  out.sites.erase(std::unique(out.sites.begin(), out.sites.end()), out.sites.end());
  if (out.sites.size() != offsets.size())
    throw GeometryError("offset window wraps onto itself");
  return out;
}

Window window_union(const Window& a, const Window& b) {
  Window out;
  out.sites.reserve(a.sites.size() + b.sites.size());
  std::set_union(a.sites.begin(), a.sites.end(), b.sites.begin(), b.sites.end(),
                 std::back_inserter(out.sites));
  return out;
}

bool window_subset(const Window& inner, const Window& outer) {
  return std::includes(outer.sites.begin(), outer.sites.end(), inner.sites.begin(),
                       inner.sites.end());
}

bool windows_intersect(const Window& a, const Window& b) {
  auto ia = a.sites.begin();
  auto ib = b.sites.begin();
  while (ia != a.sites.end() && ib != b.sites.end()) {
    if (*ia == *ib) return true;
    if (*ia < *ib) ++ia;
    else ++ib;
  }
  return false;
}

}  // namespace gibbslab
