#pragma once

// Shared scalar type, deterministic RNG, small dense matrix, and the
// error hierarchy used across the library.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowgnn {

#ifdef FLOWGNN_SINGLE_PRECISION
using real_t = float;
#else
using real_t = double;
#endif

using node_t = std::int32_t;

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct CycleError : Error {
  explicit CycleError(const std::string& msg) : Error(msg) {}
};

struct MultipleRootsError : Error {
  explicit MultipleRootsError(const std::string& msg) : Error(msg) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct NonFiniteError : Error {
  explicit NonFiniteError(const std::string& msg) : Error(msg) {}
};

struct ParseError : Error {
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Deterministic RNG. Wraps a SplitMix64-seeded xoshiro-style generator and
// hand-rolled distributions so that streams are identical across compilers
// and standard libraries (std::shuffle / std::uniform_*_distribution are
// implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    // SplitMix64 expansion of the seed into the 256-bit state.
    std::uint64_t x = seed;
    for (auto& s : state_) {
      x += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      s = z ^ (z >> 31);
    }
  }

  std::uint64_t next_u64() {
    // xoshiro256**
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection sampling for an unbiased, fully deterministic draw.
    const std::uint64_t threshold = (0ULL - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  double normal() {
    // Box-Muller, always consuming two draws.
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1 > 0 ? u1 : 0x1.0p-53));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates with our own bounded draw.
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<std::uint64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent child stream, e.g. one per record or per seed.
  Rng child(std::uint64_t stream) {
    return Rng(next_u64() ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

// Row-major dense matrix of plain values (no autodiff). Used for graph
// features, oracles, and IO.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<real_t> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, real_t fill = 0) : rows(r), cols(c), data(r * c, fill) {}

  real_t& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  real_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::vector<real_t> row(std::size_t r) const {
    return std::vector<real_t>(data.begin() + static_cast<std::ptrdiff_t>(r * cols),
                               data.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
  }

  void set_row(std::size_t r, const std::vector<real_t>& v) {
    for (std::size_t c = 0; c < cols; ++c) data[r * cols + c] = v[c];
  }

  bool operator==(const Matrix& o) const {
    return rows == o.rows && cols == o.cols && data == o.data;
  }
};

inline bool all_finite(const std::vector<real_t>& v) {
  for (real_t x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace flowgnn
