#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "vqid/errors.hpp"

// Finite-alphabet probability objects and information measures.
// All information quantities are in nats. 0*log(0) = 0 throughout, and a
// divergence with support violation evaluates to +infinity rather than
// raising an error.

namespace vqid {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kProbTol = 1e-12;

inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

// x * log(x / y) with the 0*log0 convention; +inf when x > 0 and y = 0.
inline double xlogxy(double x, double y) {
  if (x <= 0.0) return 0.0;
  if (y <= 0.0) return kInf;
  return x * std::log(x / y);
}

namespace detail {
inline void check_pmf(const std::vector<double>& p, const char* what) {
  if (p.size() < 2) throw ConfigError(std::string(what) + ": alphabet size must be >= 2");
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || v > 1.0 + kProbTol)
      throw ConfigError(std::string(what) + ": entry outside [0, 1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError(std::string(what) + ": entries sum to " + std::to_string(sum) +
                      ", expected 1");
}
}  // namespace detail

class Distribution {
 public:
  explicit Distribution(std::vector<double> probs) : p_(std::move(probs)) {
    detail::check_pmf(p_, "Distribution");
  }

  std::size_t size() const { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  const std::vector<double>& probs() const { return p_; }

  double min_positive() const {
    double m = kInf;
    for (double v : p_)
      if (v > 0.0 && v < m) m = v;
    return m;
  }

  bool strictly_positive() const {
    for (double v : p_)
      if (v <= 0.0) return false;
    return true;
  }

  static Distribution uniform(std::size_t k) {
    return Distribution(std::vector<double>(k, 1.0 / static_cast<double>(k)));
  }

 private:
  std::vector<double> p_;
};

// Row-stochastic matrix: rows indexed by the conditioning symbol.
class ConditionalKernel {
 public:
  ConditionalKernel(std::size_t in_size, std::size_t out_size, std::vector<double> flat)
      : in_(in_size), out_(out_size), t_(std::move(flat)) {
    if (in_ < 1 || out_ < 2 || t_.size() != in_ * out_)
      throw ConfigError("ConditionalKernel: bad dimensions");
    for (std::size_t i = 0; i < in_; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < out_; ++j) {
        double v = t_[i * out_ + j];
        if (!(v >= 0.0) || v > 1.0 + kProbTol)
          throw ConfigError("ConditionalKernel: entry outside [0, 1]");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("ConditionalKernel: row " + std::to_string(i) + " sums to " +
                          std::to_string(sum));
    }
  }

  explicit ConditionalKernel(const std::vector<std::vector<double>>& rows)
      : ConditionalKernel(rows.size(), rows.empty() ? 0 : rows.front().size(), flatten(rows)) {}

  std::size_t in_size() const { return in_; }
  std::size_t out_size() const { return out_; }
  double operator()(std::size_t i, std::size_t j) const { return t_[i * out_ + j]; }
  const std::vector<double>& flat() const { return t_; }

  Distribution row(std::size_t i) const {
    return Distribution(std::vector<double>(t_.begin() + static_cast<std::ptrdiff_t>(i * out_),
                                            t_.begin() + static_cast<std::ptrdiff_t>((i + 1) * out_)));
  }

  bool strictly_positive() const {
    for (double v : t_)
      if (v <= 0.0) return false;
    return true;
  }

  // Deterministic embedding row i -> column i; needs out_size >= in_size.
  static ConditionalKernel identity(std::size_t in_size, std::size_t out_size) {
    if (out_size < in_size) throw ConfigError("identity kernel needs out_size >= in_size");
    std::vector<double> t(in_size * out_size, 0.0);
    for (std::size_t i = 0; i < in_size; ++i) t[i * out_size + i] = 1.0;
    return ConditionalKernel(in_size, out_size, std::move(t));
  }

  static ConditionalKernel uniform(std::size_t in_size, std::size_t out_size) {
    return ConditionalKernel(in_size, out_size,
                             std::vector<double>(in_size * out_size,
                                                 1.0 / static_cast<double>(out_size)));
  }

 private:
  static std::vector<double> flatten(const std::vector<std::vector<double>>& rows) {
    std::vector<double> t;
    for (const auto& r : rows) {
      if (r.size() != rows.front().size()) throw ConfigError("ConditionalKernel: ragged rows");
      t.insert(t.end(), r.begin(), r.end());
    }
    return t;
  }

  std::size_t in_, out_;
  std::vector<double> t_;
};

class JointDistribution {
 public:
  JointDistribution(std::size_t k1, std::size_t k2, std::vector<double> flat)
      : k1_(k1), k2_(k2), t_(std::move(flat)) {
    if (k1_ < 2 || k2_ < 2 || t_.size() != k1_ * k2_)
      throw ConfigError("JointDistribution: bad dimensions");
    double sum = 0.0;
    for (double v : t_) {
      if (!(v >= 0.0) || v > 1.0 + kProbTol)
        throw ConfigError("JointDistribution: entry outside [0, 1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ConfigError("JointDistribution: entries sum to " + std::to_string(sum));
  }

  std::size_t k1() const { return k1_; }
  std::size_t k2() const { return k2_; }
  double operator()(std::size_t i, std::size_t j) const { return t_[i * k2_ + j]; }
  const std::vector<double>& flat() const { return t_; }

  Distribution marginal_first() const {
    std::vector<double> m(k1_, 0.0);
    for (std::size_t i = 0; i < k1_; ++i)
      for (std::size_t j = 0; j < k2_; ++j) m[i] += t_[i * k2_ + j];
    return Distribution(std::move(m));
  }

  Distribution marginal_second() const {
    std::vector<double> m(k2_, 0.0);
    for (std::size_t i = 0; i < k1_; ++i)
      for (std::size_t j = 0; j < k2_; ++j) m[j] += t_[i * k2_ + j];
    return Distribution(std::move(m));
  }

  // Rows conditioned on the first index; zero-mass rows become uniform
  // (they carry no weight in any downstream expectation).
  ConditionalKernel conditional_given_first() const {
    std::vector<double> t(k1_ * k2_);
    for (std::size_t i = 0; i < k1_; ++i) {
      double m = 0.0;
      for (std::size_t j = 0; j < k2_; ++j) m += t_[i * k2_ + j];
      for (std::size_t j = 0; j < k2_; ++j)
        t[i * k2_ + j] = m > 0.0 ? t_[i * k2_ + j] / m : 1.0 / static_cast<double>(k2_);
    }
    return ConditionalKernel(k1_, k2_, std::move(t));
  }

  ConditionalKernel conditional_given_second() const {
    std::vector<double> t(k2_ * k1_);
    for (std::size_t j = 0; j < k2_; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < k1_; ++i) m += t_[i * k2_ + j];
      for (std::size_t i = 0; i < k1_; ++i)
        t[j * k1_ + i] = m > 0.0 ? t_[i * k2_ + j] / m : 1.0 / static_cast<double>(k1_);
    }
    return ConditionalKernel(k2_, k1_, std::move(t));
  }

  JointDistribution transpose() const {
    std::vector<double> t(k1_ * k2_);
    for (std::size_t i = 0; i < k1_; ++i)
      for (std::size_t j = 0; j < k2_; ++j) t[j * k1_ + i] = t_[i * k2_ + j];
    return JointDistribution(k2_, k1_, std::move(t));
  }

  static JointDistribution product(const Distribution& p, const ConditionalKernel& k) {
    if (p.size() != k.in_size()) throw ConfigError("product: dimension mismatch");
    std::vector<double> t(p.size() * k.out_size());
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = 0; j < k.out_size(); ++j) t[i * k.out_size() + j] = p[i] * k(i, j);
    return JointDistribution(p.size(), k.out_size(), std::move(t));
  }

 private:
  std::size_t k1_, k2_;
  std::vector<double> t_;
};

inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) h -= xlogx(v);
  return h;
}

inline double entropy(const Distribution& p) { return entropy(p.probs()); }

inline double divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ConfigError("divergence: dimension mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double term = xlogxy(p[i], q[i]);
    if (term == kInf) return kInf;
    d += term;
  }
  return d < 0.0 ? 0.0 : d;
}

inline double divergence(const Distribution& p, const Distribution& q) {
  return divergence(p.probs(), q.probs());
}

struct JointMeasures {
  double h_first = 0.0;         // H(A)
  double h_second = 0.0;        // H(B)
  double h_joint = 0.0;         // H(A, B)
  double h_first_given_second = 0.0;
  double h_second_given_first = 0.0;
  double mutual_information = 0.0;
};

inline JointMeasures joint_measures(const JointDistribution& j) {
  JointMeasures m;
  m.h_first = entropy(j.marginal_first());
  m.h_second = entropy(j.marginal_second());
  m.h_joint = entropy(j.flat());
  m.h_first_given_second = m.h_joint - m.h_second;
  m.h_second_given_first = m.h_joint - m.h_first;
  m.mutual_information = m.h_first + m.h_second - m.h_joint;
  if (m.mutual_information < 0.0 && m.mutual_information > -1e-12) m.mutual_information = 0.0;
  if (m.h_first_given_second < 0.0 && m.h_first_given_second > -1e-12) m.h_first_given_second = 0.0;
  if (m.h_second_given_first < 0.0 && m.h_second_given_first > -1e-12) m.h_second_given_first = 0.0;
  return m;
}

// sum_x Q_X(x) * D(Q_{Z|X}(.|x) || W(.|x)): divergence between channels
// weighted by the source; +inf if any positively-weighted row violates
// support.
inline double weighted_conditional_divergence(const ConditionalKernel& q,
                                              const ConditionalKernel& w,
                                              const Distribution& qx) {
  if (q.in_size() != w.in_size() || q.out_size() != w.out_size() || qx.size() != q.in_size())
    throw ConfigError("weighted_conditional_divergence: dimension mismatch");
  double d = 0.0;
  for (std::size_t x = 0; x < q.in_size(); ++x) {
    if (qx[x] <= 0.0) continue;
    for (std::size_t z = 0; z < q.out_size(); ++z) {
      double term = xlogxy(q(x, z), w(x, z));
      if (term == kInf) return kInf;
      d += qx[x] * term;
    }
  }
  return d < 0.0 ? 0.0 : d;
}

}  // namespace vqid
