#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hyperpersona {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

// Error taxonomy. Every failure the library reports derives from Error so
// the CLI can map it onto an exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (shape, index range, empty input).
struct ContractError : Error {
  using Error::Error;
};

// Malformed input text; carries the 1-based line when known.
struct ParseError : Error {
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

// Well-formed input that does not fit the expected schema.
struct SchemaError : Error {
  using Error::Error;
};

// Input violates a corpus-level uniqueness or consistency rule.
struct IntegrityError : Error {
  using Error::Error;
};

struct UnsupportedInputError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Training produced a non-finite loss.
struct NumericalError : Error {
  using Error::Error;
};

// splitmix64 finalizer; used to derive independent stream seeds from a run
// seed and a tag so that every random decision is reproducible.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  return mix_seed(mix_seed(mix_seed(mix_seed(seed) ^ a) ^ b) ^ c);
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace hyperpersona
