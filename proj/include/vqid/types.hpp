#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "vqid/prob.hpp"
#include "vqid/rng.hpp"

// Method-of-types machinery: empirical types, joint types, deterministic
// enumeration, exact class counting, and uniform sampling from a type class.

namespace vqid {

using Symbol = std::uint8_t;
using Sequence = std::vector<Symbol>;
using BigInt = boost::multiprecision::cpp_int;

class EmpiricalType {
 public:
  explicit EmpiricalType(std::vector<int> counts) : counts_(std::move(counts)) {
    if (counts_.size() < 2) throw ConfigError("EmpiricalType: alphabet size must be >= 2");
    n_ = 0;
    for (int c : counts_) {
      if (c < 0) throw ConfigError("EmpiricalType: negative count");
      n_ += c;
    }
    if (n_ < 1) throw ConfigError("EmpiricalType: empty type");
  }

  int n() const { return n_; }
  std::size_t alphabet_size() const { return counts_.size(); }
  const std::vector<int>& counts() const { return counts_; }
  int count(std::size_t i) const { return counts_[i]; }

  Distribution distribution() const {
    std::vector<double> p(counts_.size());
    for (std::size_t i = 0; i < counts_.size(); ++i)
      p[i] = static_cast<double>(counts_[i]) / static_cast<double>(n_);
    return Distribution(std::move(p));
  }

  double entropy() const { return vqid::entropy(distribution()); }

  bool operator==(const EmpiricalType& o) const { return counts_ == o.counts_; }
  bool operator<(const EmpiricalType& o) const { return counts_ < o.counts_; }

 private:
  std::vector<int> counts_;
  int n_;
};

inline EmpiricalType empirical_type(const Sequence& x, std::size_t k) {
  std::vector<int> c(k, 0);
  for (Symbol s : x) {
    if (s >= k) throw ConfigError("empirical_type: symbol out of alphabet");
    ++c[s];
  }
  return EmpiricalType(std::move(c));
}

// Counts over a product alphabet, row-major (first symbol indexes rows).
class JointEmpiricalType {
 public:
  JointEmpiricalType(std::size_t k1, std::size_t k2, std::vector<int> counts)
      : k1_(k1), k2_(k2), counts_(std::move(counts)) {
    if (k1_ < 2 || k2_ < 2 || counts_.size() != k1_ * k2_)
      throw ConfigError("JointEmpiricalType: bad dimensions");
    n_ = 0;
    for (int c : counts_) {
      if (c < 0) throw ConfigError("JointEmpiricalType: negative count");
      n_ += c;
    }
    if (n_ < 1) throw ConfigError("JointEmpiricalType: empty type");
  }

  int n() const { return n_; }
  std::size_t k1() const { return k1_; }
  std::size_t k2() const { return k2_; }
  int count(std::size_t i, std::size_t j) const { return counts_[i * k2_ + j]; }
  const std::vector<int>& counts() const { return counts_; }

  EmpiricalType marginal_first() const {
    std::vector<int> m(k1_, 0);
    for (std::size_t i = 0; i < k1_; ++i)
      for (std::size_t j = 0; j < k2_; ++j) m[i] += counts_[i * k2_ + j];
    return EmpiricalType(std::move(m));
  }

  EmpiricalType marginal_second() const {
    std::vector<int> m(k2_, 0);
    for (std::size_t i = 0; i < k1_; ++i)
      for (std::size_t j = 0; j < k2_; ++j) m[j] += counts_[i * k2_ + j];
    return EmpiricalType(std::move(m));
  }

  JointDistribution distribution() const {
    std::vector<double> t(counts_.size());
    for (std::size_t i = 0; i < counts_.size(); ++i)
      t[i] = static_cast<double>(counts_[i]) / static_cast<double>(n_);
    return JointDistribution(k1_, k2_, std::move(t));
  }

  JointEmpiricalType transpose() const {
    std::vector<int> t(counts_.size());
    for (std::size_t i = 0; i < k1_; ++i)
      for (std::size_t j = 0; j < k2_; ++j) t[j * k1_ + i] = counts_[i * k2_ + j];
    return JointEmpiricalType(k2_, k1_, std::move(t));
  }

  bool operator==(const JointEmpiricalType& o) const {
    return k1_ == o.k1_ && k2_ == o.k2_ && counts_ == o.counts_;
  }

 private:
  std::size_t k1_, k2_;
  std::vector<int> counts_;
  int n_;
};

inline JointEmpiricalType empirical_joint(const Sequence& a, const Sequence& b, std::size_t k1,
                                          std::size_t k2) {
  if (a.size() != b.size()) throw ConfigError("empirical_joint: length mismatch");
  std::vector<int> c(k1 * k2, 0);
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (a[t] >= k1 || b[t] >= k2) throw ConfigError("empirical_joint: symbol out of alphabet");
    ++c[a[t] * k2 + b[t]];
  }
  return JointEmpiricalType(k1, k2, std::move(c));
}

// True iff (a, z) and (b, z) induce the same joint type, i.e. b lies in the
// same conditional type class given z as a does.
inline bool same_conditional_type(const Sequence& a, const Sequence& b, const Sequence& z,
                                  std::size_t k, std::size_t kz) {
  if (a.size() != b.size() || a.size() != z.size()) return false;
  return empirical_joint(a, z, k, kz) == empirical_joint(b, z, k, kz);
}

inline std::uint64_t count_compositions(int n, std::size_t k) {
  // C(n + k - 1, k - 1) with overflow care; alphabet sizes are small.
  BigInt c = 1;
  for (std::size_t i = 1; i < k; ++i) {
    c *= (n + static_cast<int>(i));
    c /= static_cast<int>(i);
  }
  if (c > BigInt(~std::uint64_t{0})) return ~std::uint64_t{0};
  return static_cast<std::uint64_t>(c);
}

// All types with denominator n over an alphabet of size k, in a fixed
// deterministic order: first coordinate descending, then recursively the
// same on the remainder. For n = 2, k = 2: (2,0), (1,1), (0,2).
inline std::vector<EmpiricalType> enumerate_types(int n, std::size_t k,
                                                  std::uint64_t cap = 2'000'000) {
  if (n < 1 || k < 2) throw ConfigError("enumerate_types: need n >= 1 and k >= 2");
  std::uint64_t total = count_compositions(n, k);
  if (total > cap)
    throw CapExceededError("enumerate_types: " + std::to_string(total) +
                           " types exceeds cap " + std::to_string(cap));
  std::vector<EmpiricalType> out;
  out.reserve(total);
  std::vector<int> cur(k, 0);
  auto rec = [&](auto&& self, std::size_t pos, int rem) -> void {
    if (pos + 1 == k) {
      cur[pos] = rem;
      out.emplace_back(cur);
      return;
    }
    for (int c = rem; c >= 0; --c) {
      cur[pos] = c;
      self(self, pos + 1, rem - c);
    }
  };
  rec(rec, 0, n);
  return out;
}

struct TypeClassSize {
  BigInt exact;
  double log_size;  // natural log of exact
};

namespace detail {
inline BigInt multinomial(int n, const std::vector<int>& parts) {
  BigInt r = 1;
  int used = 0;
  for (int p : parts) {
    // r *= C(used + p, p)
    for (int i = 1; i <= p; ++i) {
      r *= (used + i);
      r /= i;
    }
    used += p;
  }
  (void)n;
  return r;
}

inline double log_biginteger(const BigInt& v) {
  // log via msb split: v = m * 2^e with m in [1, 2)
  if (v <= 0) return -kInf;
  const std::size_t bits = boost::multiprecision::msb(v);
  if (bits <= 52) return std::log(static_cast<double>(v));
  BigInt shifted = v >> static_cast<int>(bits - 52);
  return std::log(static_cast<double>(shifted)) +
         static_cast<double>(bits - 52) * std::log(2.0);
}
}  // namespace detail

// |T(Q)|: exact multinomial coefficient and its natural log (the log is
// computed from the exact integer, not from Stirling).
inline TypeClassSize type_class_size(const EmpiricalType& q) {
  TypeClassSize s;
  s.exact = detail::multinomial(q.n(), q.counts());
  s.log_size = detail::log_biginteger(s.exact);
  return s;
}

// |T(Q_{B|A} | a)| = prod_rows multinomial(row): sequences b such that
// (a, b) has the given joint type, for any fixed a of the row-marginal type.
inline TypeClassSize conditional_type_class_size(const JointEmpiricalType& joint) {
  TypeClassSize s;
  s.exact = 1;
  for (std::size_t i = 0; i < joint.k1(); ++i) {
    std::vector<int> row(joint.k2());
    int rs = 0;
    for (std::size_t j = 0; j < joint.k2(); ++j) {
      row[j] = joint.count(i, j);
      rs += row[j];
    }
    if (rs > 0) s.exact *= detail::multinomial(rs, row);
  }
  s.log_size = detail::log_biginteger(s.exact);
  return s;
}

// Uniform draw from T(Q): lay out the symbols per the counts and shuffle.
// Every permutation of the multiset is equally likely, and the result has
// exactly the requested type.
inline Sequence sample_from_type_class(const EmpiricalType& q, std::mt19937_64& g) {
  Sequence x;
  x.reserve(static_cast<std::size_t>(q.n()));
  for (std::size_t s = 0; s < q.alphabet_size(); ++s)
    x.insert(x.end(), static_cast<std::size_t>(q.count(s)), static_cast<Symbol>(s));
  shuffle_sequence(x, g);
  return x;
}

}  // namespace vqid
