#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <cstring>
#include <string_view>

namespace sdvg {

// Stable 64-bit mixing helpers.  Every derived seed and content digest in the
// library goes through these so results do not depend on std::hash.

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) {
  return splitmix64(seed ^ splitmix64(value + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t fnv1a(std::string_view bytes,
                              std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_string(std::uint64_t seed, std::string_view text) {
  return hash_combine(seed, fnv1a(text));
}

// Digest of a dense block of doubles, including its shape.
template <typename Derived>
std::uint64_t digest(const Eigen::DenseBase<Derived>& values) {
  std::uint64_t h = hash_combine(static_cast<std::uint64_t>(values.rows()),
                                 static_cast<std::uint64_t>(values.cols()));
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      const double v = values(r, c);
      std::uint64_t bits = 0;
      std::memcpy(&bits, &v, sizeof bits);
      h = fnv1a(std::string_view(reinterpret_cast<const char*>(&bits), sizeof bits), h);
    }
  }
  return splitmix64(h);
}

// Uniform in the open interval (0, 1) from 52 random bits.
constexpr double to_unit_open(std::uint64_t bits) {
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

// Counter-based stream: draw i of a keyed stream.
class KeyedStream {
 public:
  explicit constexpr KeyedStream(std::uint64_t key) : key_(key) {}
  constexpr std::uint64_t next_bits() { return hash_combine(key_, counter_++); }
  constexpr double next_unit() { return to_unit_open(next_bits()); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace sdvg
