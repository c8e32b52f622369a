#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace vqid {

// splitmix64 finalizer. Basis for seed derivation and the keyed sequence
// hash; full 64-bit avalanche.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic sub-seed for a named stream (trial index, type index, ...).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  return mix64(mix64(master ^ 0x6a09e667f3bcc909ULL) ^ stream);
}

inline std::mt19937_64 make_engine(std::uint64_t master, std::uint64_t stream = 0) {
  return std::mt19937_64(derive_seed(master, stream));
}

// Unbiased integer in [0, bound) by rejection. std::uniform_int_distribution
// is not byte-identical across standard libraries, so results would not be
// reproducible with it.
inline std::uint64_t uniform_below(std::mt19937_64& g, std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  for (;;) {
    std::uint64_t v = g();
    if (v < limit) return v % bound;
  }
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

template <typename T>
void shuffle_sequence(std::vector<T>& v, std::mt19937_64& g) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_below(g, i));
    std::swap(v[i - 1], v[j]);
  }
}

// Keyed hash of one or two symbol strings. Chain a mix64 sponge over the
// key, a domain tag, and the symbols; used as a PRF for codeword ranking and
// likelihood tie-breaking.
template <typename Seq>
std::uint64_t sequence_hash(std::uint64_t key, const Seq& a, std::uint64_t domain = 0) {
  std::uint64_t h = mix64(key ^ mix64(domain ^ 0x243f6a8885a308d3ULL));
  for (auto s : a) h = mix64(h ^ (static_cast<std::uint64_t>(s) + 0x100ULL));
  return mix64(h ^ static_cast<std::uint64_t>(a.size()));
}

template <typename Seq>
std::uint64_t sequence_hash2(std::uint64_t key, const Seq& a, const Seq& b,
                             std::uint64_t domain = 0) {
  std::uint64_t h = sequence_hash(key, a, domain ^ 0x13198a2e03707344ULL);
  for (auto s : b) h = mix64(h ^ (static_cast<std::uint64_t>(s) + 0x200ULL));
  return mix64(h ^ static_cast<std::uint64_t>(b.size()));
}

}  // namespace vqid
