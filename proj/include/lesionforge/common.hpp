#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace lf {

/// Bad input surfaced to the user (malformed config, missing files, empty
/// dataset). The CLI maps these to exit code 2.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public InputError {
 public:
  using InputError::InputError;
};

/// Raised when a grid contains NaN/Inf. `index` is the flat row-major
/// position of the first offending element.
class NonFiniteError : public InputError {
 public:
  NonFiniteError(const std::string& what, std::size_t index)
      : InputError(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Numerical breakdown at run time (NaN in a registration field, diverging
/// losses). Not an input problem; the CLI maps it to exit code 1.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Deterministic per-(seed, stream...) generator. Mixing is splitmix64 so
/// neighbouring indices give unrelated streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                       std::uint64_t c = 0);
Rng make_rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0,
             std::uint64_t c = 0);

/// Worker count: LESIONFORGE_NUM_WORKERS if set, else hardware concurrency.
int num_workers();

/// Runs fn(i) for i in [0, n). Callers write results into pre-sized slots, so
/// output order never depends on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

std::string version_string();

/// Keeps freed activation buffers in the heap instead of returning them to
/// the OS; training allocates and frees the same large blocks every step.
void configure_allocator();

}  // namespace lf
