#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace octforce {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian and read/written via memcpy");

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto exit codes, so keep the hierarchy
// flat and unambiguous: InvalidArgument -> usage (2), DataError -> data (3),
// NumericError -> numerical failure (4).
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public DataError {
 public:
  using DataError::DataError;
};

class VersionMismatchError : public DataError {
 public:
  using DataError::DataError;
};

class TruncatedFileError : public DataError {
 public:
  using DataError::DataError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic random numbers. std::random distributions are not pinned by
// the standard, and reproducible streams are a hard requirement here, so we
// carry our own generator: splitmix64 for seeding, xoshiro256** for the
// stream, Box-Muller for normals.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter scheme for sub-stream seeds: stream k of a master seed is
// splitmix64(master + (k+1) * golden_gamma). Every consumer of randomness
// derives its own stream id so adding a consumer never shifts another
// consumer's sequence.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t s = master + (stream + 1) * 0x9e3779b97f4a7c15ULL;
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // 53-bit Box-Muller; one normal per call, no cached pair.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Fisher-Yates index in [0, n)
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t s_[4];
};

// ---------------------------------------------------------------------------
// Little-endian stream IO for the container and checkpoint formats.
// ---------------------------------------------------------------------------

namespace io {

template <typename T>
inline void write_raw(std::ostream& os, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
inline T read_raw(std::istream& is, const char* what) {
  char buf[sizeof(T)];
  is.read(buf, sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T)))
    throw TruncatedFileError(std::string("truncated file while reading ") + what);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n))
    throw TruncatedFileError(std::string("truncated file while reading ") + what);
}

}  // namespace io

}  // namespace octforce
