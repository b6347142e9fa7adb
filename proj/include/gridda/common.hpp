#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridda {

// Error hierarchy. Exit-code mapping lives in the CLI: usage=1, data=2, numeric=3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct UsageError : Error {
  using Error::Error;
};

// Worker count: GRIDDA_THREADS caps it, default hardware parallelism.
int worker_count();
void set_worker_count(int n);

// Splits [0,n) into contiguous chunks, one per worker. fn(begin,end) must not
// touch state owned by another chunk; chunk boundaries depend only on n and
// the worker count, so results are schedule-independent.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

// Deterministic stream derivation: one master seed, independent substream per index.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over (seed, index)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

}  // namespace gridda
