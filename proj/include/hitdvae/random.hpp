#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hitdvae {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a) { return mix64(seed ^ mix64(a + 1)); }

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(seed, a), b);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  bool bernoulli(double p) { return uniform_(engine_) < p; }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  void fill_normal(std::span<double> out) {
    for (double& x : out) x = normal();
  }
  std::vector<double> normal_vector(std::size_t n) {
    std::vector<double> v(n);
    fill_normal(v);
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

  /// Textual engine + distribution state, for checkpoints.
  std::string state() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_ << ' ' << uniform_;
    return os.str();
  }
  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_ >> normal_ >> uniform_;
    if (!is) throw std::invalid_argument("rng: malformed state string");
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace hitdvae
