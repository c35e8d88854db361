#pragma once

#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>

namespace nesh {

// Base for all library failures that are not argument-validation errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input files; carries a 1-based line number when known.
struct ParseError : Error {
  ParseError(const std::string& msg, long line = -1)
      : Error(line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_number(line) {}
  long line_number;
};

// Linear-algebra breakdowns (factorization failure after the jitter ladder,
// non-finite values, ...).
struct NumericalError : Error {
  using Error::Error;
};

// Requested a statistic that is undefined on an empty hypergraph.
struct EmptyGraphError : Error {
  using Error::Error;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Counter-based stream derivation: (seed, stream) pairs give statistically
// independent generators, so replicates can run in any order or in parallel.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0,
                                std::uint64_t substream = 0) {
  std::uint64_t state = seed;
  std::uint64_t a = detail::splitmix64(state);
  state ^= 0x9e3779b97f4a7c15ULL * (stream + 1);
  std::uint64_t b = detail::splitmix64(state);
  state ^= 0xc2b2ae3d27d4eb4fULL * (substream + 1);
  std::uint64_t c = detail::splitmix64(state);
  std::uint64_t d = detail::splitmix64(state);
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32),
                    static_cast<std::uint32_t>(d), static_cast<std::uint32_t>(d >> 32)};
  return std::mt19937_64(seq);
}

// 17 significant digits round-trips IEEE-754 doubles through text exactly.
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace nesh
