#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dualslu {

// Error hierarchy. Every failure mode carries a category so callers (CLI,
// tests) can map it to an exit code or a specific assertion.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
  using Error::Error;
};

struct EmptySequenceError : Error {
  using Error::Error;
};

// Violated API contract (non-scalar loss, blank inside a CTC target, ...).
struct ContractError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct AnnotationParseError : Error {
  AnnotationParseError(const std::string& msg, std::size_t token_pos)
      : Error(msg + " (token " + std::to_string(token_pos) + ")"),
        position(token_pos) {}
  std::size_t position;
};

// CTC target cannot be aligned to the given number of frames.
struct InfeasibleAlignmentError : Error {
  using Error::Error;
};

// A verification oracle refused to run (non-determinism, scale guard).
struct OracleError : Error {
  using Error::Error;
};

struct PairingError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  enum class Kind { Format, Version, Truncated, Fingerprint, Io };
  CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
  Kind kind;
};

// FNV-1a, used for fingerprints and seed derivation. Stable across
// platforms; never used where cryptographic strength matters.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t seed = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s,
                           std::uint64_t seed = 14695981039346656037ull) {
  return fnv1a(s.data(), s.size(), seed);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the xor; decorrelates nearby seeds.
  std::uint64_t z = (a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace dualslu
