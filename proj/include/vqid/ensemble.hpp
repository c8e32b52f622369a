#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vqid/prob.hpp"
#include "vqid/rng.hpp"
#include "vqid/types.hpp"

// Ensemble construction: per-type test channels under a compression
// constraint, the injective type registry, sub-codebooks drawn uniformly
// from the quantized-output type class, and the lossy encoder built on a
// keyed ranking function.

namespace vqid {

enum class ConstraintKind { expected_length, excess_probability, exponential_moment };

inline const char* to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::expected_length: return "expected_length";
    case ConstraintKind::excess_probability: return "excess_probability";
    case ConstraintKind::exponential_moment: return "exponential_moment";
  }
  return "?";
}

struct CompressionConstraint {
  ConstraintKind kind = ConstraintKind::expected_length;
  double rate = 0.0;             // R_C, nats per symbol (kinds 1 and 2)
  double excess_exponent = 0.1;  // E_C: radius of the source vicinity (kinds 1 and 2)
  double s = 1.0;                // exponential moment order (kind 3)
  double lambda = 0.0;           // exponential moment budget (kind 3)

  void validate() const {
    if (kind == ConstraintKind::exponential_moment) {
      if (s <= 0.0) throw ConfigError("constraint: s must be positive");
      if (lambda < 0.0) throw ConfigError("constraint: lambda must be nonnegative");
    } else {
      if (rate < 0.0) throw ConfigError("constraint: rate must be nonnegative");
      if (excess_exponent < 0.0) throw ConfigError("constraint: excess exponent must be nonnegative");
    }
  }
};

struct ConstraintReport {
  bool pass = false;
  std::string violated;       // empty when pass
  double mutual_info = 0.0;   // I(X;Y) under (qx, qyx)
  double source_divergence = 0.0;  // D(qx || G)
  double bound = 0.0;         // the rate bound the mutual information was held to
};

namespace detail {
// Core predicate shared by the continuous check and the lattice check.
inline ConstraintReport constraint_from_measures(double mutual_info, double source_div,
                                                 const CompressionConstraint& con) {
  ConstraintReport r;
  r.mutual_info = mutual_info;
  r.source_divergence = source_div;
  const double slack = 1e-12;
  switch (con.kind) {
    case ConstraintKind::expected_length:
    case ConstraintKind::excess_probability:
      r.bound = con.rate;
      if (source_div > con.excess_exponent) {
        r.pass = true;  // outside the source vicinity: unconstrained
      } else if (mutual_info <= con.rate + slack) {
        r.pass = true;
      } else {
        r.violated = std::string(to_string(con.kind)) + ": I(X;Y) = " +
                     std::to_string(mutual_info) + " > R_C = " + std::to_string(con.rate) +
                     " inside the source vicinity";
      }
      break;
    case ConstraintKind::exponential_moment: {
      double bound = (con.lambda - source_div) / con.s;
      r.bound = bound;
      if (mutual_info <= bound + slack) {
        r.pass = true;
      } else {
        r.violated = "exponential_moment: I(X;Y) = " + std::to_string(mutual_info) +
                     " > (lambda - D)/s = " + std::to_string(bound);
      }
      break;
    }
  }
  return r;
}
}  // namespace detail

inline ConstraintReport check_compression_constraint(const Distribution& qx,
                                                     const ConditionalKernel& qyx,
                                                     const CompressionConstraint& con,
                                                     const Distribution& G) {
  con.validate();
  auto jm = joint_measures(JointDistribution::product(qx, qyx));
  return detail::constraint_from_measures(jm.mutual_information, divergence(qx, G), con);
}

enum class MappingStrategy { user_table, identity_if_allowed, greedy_capacity };

inline const char* to_string(MappingStrategy s) {
  switch (s) {
    case MappingStrategy::user_table: return "user_table";
    case MappingStrategy::identity_if_allowed: return "identity_if_allowed";
    case MappingStrategy::greedy_capacity: return "greedy_capacity";
  }
  return "?";
}

struct MappingPolicy {
  MappingStrategy strategy = MappingStrategy::identity_if_allowed;
  double delta = 0.1;    // distortion budget; sqrt(delta) is the identity threshold
  double epsilon = 0.01; // slack; conditional-entropy floor is delta + 3 epsilon
  std::map<std::vector<int>, ConditionalKernel> user_table;  // keyed by Q_X counts
  double kernel_grid_step = 0.05;           // greedy_capacity search resolution
  std::optional<ConditionalKernel> channel; // W, needed by greedy_capacity scoring

  void validate() const {
    if (delta < 0.0) throw ConfigError("policy: delta must be nonnegative");
    if (delta == 0.0) {
      if (epsilon != 0.0) throw ConfigError("policy: delta = 0 requires epsilon = 0");
    } else if (!(epsilon > 0.0 && epsilon < delta)) {
      throw ConfigError("policy: need 0 < epsilon < delta");
    }
    if (!(kernel_grid_step > 0.0 && kernel_grid_step <= 0.5))
      throw ConfigError("policy: kernel_grid_step must be in (0, 0.5]");
  }

  double entropy_floor() const { return delta + 3.0 * epsilon; }
  double identity_threshold() const { return std::sqrt(delta); }
};

namespace detail {

inline ConditionalKernel blend_toward_uniform(const ConditionalKernel& k, double lam) {
  std::vector<double> t(k.flat());
  const double u = 1.0 / static_cast<double>(k.out_size());
  for (double& v : t) v = (1.0 - lam) * v + lam * u;
  return ConditionalKernel(k.in_size(), k.out_size(), std::move(t));
}

// Both selection predicates at once: the conditional-entropy floor and the
// compression constraint.
inline bool selection_ok(const Distribution& qx, const ConditionalKernel& k,
                         const MappingPolicy& policy, const CompressionConstraint& con,
                         const Distribution& G, std::string* why = nullptr) {
  auto jm = joint_measures(JointDistribution::product(qx, k));
  if (jm.h_first_given_second < policy.entropy_floor() - 1e-12) {
    if (why)
      *why = "conditional entropy H(X|Y) = " + std::to_string(jm.h_first_given_second) +
             " below floor " + std::to_string(policy.entropy_floor());
    return false;
  }
  auto cr = detail::constraint_from_measures(jm.mutual_information, divergence(qx, G), con);
  if (!cr.pass) {
    if (why) *why = cr.violated;
    return false;
  }
  return true;
}

// Smallest blend weight toward uniform making both predicates hold; coarse
// scan then bisection against the last failing weight.
inline std::optional<ConditionalKernel> min_blend(const Distribution& qx,
                                                  const ConditionalKernel& base,
                                                  const MappingPolicy& policy,
                                                  const CompressionConstraint& con,
                                                  const Distribution& G) {
  const int steps = 256;
  double lo = -1.0, hi = -1.0;
  for (int i = 0; i <= steps; ++i) {
    double lam = static_cast<double>(i) / steps;
    if (selection_ok(qx, blend_toward_uniform(base, lam), policy, con, G)) {
      hi = lam;
      break;
    }
    lo = lam;
  }
  if (hi < 0.0) return std::nullopt;
  if (lo >= 0.0) {
    for (int it = 0; it < 40; ++it) {
      double mid = 0.5 * (lo + hi);
      if (selection_ok(qx, blend_toward_uniform(base, mid), policy, con, G))
        hi = mid;
      else
        lo = mid;
    }
  }
  return blend_toward_uniform(base, hi);
}

inline std::vector<std::vector<int>> enumerate_compositions(int total, std::size_t parts) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(parts, 0);
  auto rec = [&](auto&& self, std::size_t pos, int rem) -> void {
    if (pos + 1 == parts) {
      cur[pos] = rem;
      out.push_back(cur);
      return;
    }
    for (int c = rem; c >= 0; --c) {
      cur[pos] = c;
      self(self, pos + 1, rem - c);
    }
  };
  rec(rec, 0, total);
  return out;
}

}  // namespace detail

// Continuous test-channel selection; the registry quantizes the result to
// the joint-count lattice. user_table has no continuous analogue.
inline ConditionalKernel select_test_channel(const Distribution& qx, const MappingPolicy& policy,
                                             const CompressionConstraint& con,
                                             const Distribution& G, std::size_t ky) {
  policy.validate();
  con.validate();
  const std::size_t kx = qx.size();
  switch (policy.strategy) {
    case MappingStrategy::user_table:
      throw ConfigError("select_test_channel: user_table needs an empirical type key");
    case MappingStrategy::identity_if_allowed: {
      if (ky < kx) throw ConfigError("identity_if_allowed needs |Y| >= |X|");
      auto k = detail::min_blend(qx, ConditionalKernel::identity(kx, ky), policy, con, G);
      if (!k) {
        std::string why;
        detail::selection_ok(qx, ConditionalKernel::uniform(kx, ky), policy, con, G, &why);
        throw InfeasibleError("select_test_channel: no blend of identity satisfies the "
                              "predicates (" + why + ")");
      }
      return *k;
    }
    case MappingStrategy::greedy_capacity: {
      if (!policy.channel)
        throw ConfigError("greedy_capacity needs the identification channel in the policy");
      const ConditionalKernel& w = *policy.channel;
      int steps = static_cast<int>(std::lround(1.0 / policy.kernel_grid_step));
      if (steps < 2) steps = 2;
      auto rows = detail::enumerate_compositions(steps, ky);
      double total = std::pow(static_cast<double>(rows.size()), static_cast<double>(kx));
      if (total > 2e6)
        throw ConfigError("greedy_capacity: kernel grid too large; coarsen kernel_grid_step");
      std::optional<ConditionalKernel> best;
      double best_score = -kInf;
      std::vector<std::size_t> idx(kx, 0);
      for (;;) {
        std::vector<double> flat;
        flat.reserve(kx * ky);
        for (std::size_t x = 0; x < kx; ++x)
          for (std::size_t y = 0; y < ky; ++y)
            flat.push_back(static_cast<double>(rows[idx[x]][y]) / steps);
        ConditionalKernel cand(kx, ky, std::move(flat));
        if (auto fixed = detail::min_blend(qx, cand, policy, con, G)) {
          // Score: I(Y;Z) with Y from the candidate map and Z through W.
          std::vector<double> yz(ky * w.out_size(), 0.0);
          for (std::size_t x = 0; x < kx; ++x)
            for (std::size_t y = 0; y < ky; ++y)
              for (std::size_t z = 0; z < w.out_size(); ++z)
                yz[y * w.out_size() + z] += qx[x] * (*fixed)(x, y) * w(x, z);
          double score =
              joint_measures(JointDistribution(ky, w.out_size(), std::move(yz))).mutual_information;
          if (score > best_score + 1e-15) {
            best_score = score;
            best = *fixed;
          }
        }
        std::size_t p = 0;
        while (p < kx && ++idx[p] == rows.size()) idx[p++] = 0;
        if (p == kx) break;
      }
      if (!best) throw InfeasibleError("greedy_capacity: no grid kernel satisfies the predicates");
      return *best;
    }
  }
  throw ConfigError("select_test_channel: unknown strategy");
}

inline ConditionalKernel select_test_channel(const EmpiricalType& qx, const MappingPolicy& policy,
                                             const CompressionConstraint& con,
                                             const Distribution& G, std::size_t ky) {
  if (policy.strategy == MappingStrategy::user_table) {
    policy.validate();
    auto it = policy.user_table.find(qx.counts());
    if (it == policy.user_table.end()) {
      std::ostringstream os;
      os << "user_table has no entry for type (";
      for (std::size_t i = 0; i < qx.counts().size(); ++i)
        os << (i ? "," : "") << qx.counts()[i];
      os << ")";
      throw InfeasibleError(os.str());
    }
    std::string why;
    if (!detail::selection_ok(qx.distribution(), it->second, policy, con, G, &why))
      throw InfeasibleError("user_table kernel rejected: " + why);
    if (it->second.in_size() != qx.alphabet_size() || it->second.out_size() != ky)
      throw ConfigError("user_table kernel has wrong dimensions");
    return it->second;
  }
  return select_test_channel(qx.distribution(), policy, con, G, ky);
}

struct RegistryEntry {
  EmpiricalType qx;
  EmpiricalType qy;
  JointEmpiricalType joint;  // counts over X x Y, row sums = qx counts
  bool identity_branch = false;
  bool repaired = false;
  std::size_t index = 0;     // position in the deterministic type order
  double mutual_info = 0.0;  // I(X;Y) of the registered joint
  double h_x_given_y = 0.0;  // H(X|Y) of the registered joint
};

class TypeRegistry {
 public:
  TypeRegistry(int n, std::size_t kx, std::size_t ky, double delta, double epsilon)
      : n_(n), kx_(kx), ky_(ky), delta_(delta), epsilon_(epsilon) {}

  int n() const { return n_; }
  std::size_t kx() const { return kx_; }
  std::size_t ky() const { return ky_; }
  double delta() const { return delta_; }
  double epsilon() const { return epsilon_; }

  const std::vector<RegistryEntry>& entries() const { return entries_; }

  const RegistryEntry* find_by_qx(const std::vector<int>& counts) const {
    auto it = forward_.find(counts);
    return it == forward_.end() ? nullptr : &entries_[it->second];
  }

  const RegistryEntry* find_by_qy(const std::vector<int>& counts) const {
    auto it = reverse_.find(counts);
    return it == reverse_.end() ? nullptr : &entries_[it->second];
  }

  const RegistryEntry& by_qx(const EmpiricalType& t) const {
    const RegistryEntry* e = find_by_qx(t.counts());
    if (!e) throw InfeasibleError("type registry: source type not registered");
    return *e;
  }

  const RegistryEntry& by_qy(const EmpiricalType& t) const {
    const RegistryEntry* e = find_by_qy(t.counts());
    if (!e) throw InfeasibleError("type registry: quantized type not registered");
    return *e;
  }

  int repair_count() const { return repairs_; }

  void add(RegistryEntry entry) {
    entry.index = entries_.size();
    if (!forward_.emplace(entry.qx.counts(), entry.index).second)
      throw ConfigError("type registry: duplicate source type");
    if (!reverse_.emplace(entry.qy.counts(), entry.index).second)
      throw ConfigError("type registry: reverse map collision");
    if (entry.repaired) ++repairs_;
    entries_.push_back(std::move(entry));
  }

  bool qy_used(const std::vector<int>& counts) const { return reverse_.count(counts) != 0; }

 private:
  int n_;
  std::size_t kx_, ky_;
  double delta_, epsilon_;
  std::vector<RegistryEntry> entries_;
  std::map<std::vector<int>, std::size_t> forward_;
  std::map<std::vector<int>, std::size_t> reverse_;
  int repairs_ = 0;
};

namespace detail {

inline double lattice_h_x_given_y(const JointEmpiricalType& j) {
  return joint_measures(j.distribution()).h_first_given_second;
}

struct LatticePredicates {
  const MappingPolicy& policy;
  const CompressionConstraint& con;
  const Distribution& G;

  bool ok(const EmpiricalType& qx, const JointEmpiricalType& joint) const {
    auto jm = joint_measures(joint.distribution());
    if (jm.h_first_given_second < policy.entropy_floor() - 1e-12) return false;
    return constraint_from_measures(jm.mutual_information,
                                    divergence(qx.distribution(), G), con)
        .pass;
  }
};

inline double joint_l1(const std::vector<int>& counts, int n,
                       const std::vector<double>& target) {
  double d = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i)
    d += std::abs(static_cast<double>(counts[i]) / n - target[i]);
  return d;
}

// All joint count matrices with the given row sums (columns free), visited
// through a deterministic odometer over per-row compositions.
template <typename Fn>
void for_each_joint_with_rows(const std::vector<int>& rows, std::size_t ky, Fn&& fn) {
  std::vector<std::vector<std::vector<int>>> per_row;
  per_row.reserve(rows.size());
  for (int r : rows) per_row.push_back(enumerate_compositions(r, ky));
  std::vector<std::size_t> idx(rows.size(), 0);
  std::vector<int> flat(rows.size() * ky);
  for (;;) {
    for (std::size_t x = 0; x < rows.size(); ++x)
      for (std::size_t y = 0; y < ky; ++y) flat[x * ky + y] = per_row[x][idx[x]][y];
    fn(flat);
    std::size_t p = 0;
    while (p < rows.size() && ++idx[p] == per_row[p].size()) idx[p++] = 0;
    if (p == rows.size()) break;
  }
}

inline double joints_with_rows_count(const std::vector<int>& rows, std::size_t ky) {
  double c = 1.0;
  for (int r : rows)
    c *= static_cast<double>(count_compositions(r, ky));
  return c;
}

// Joint matrices with both margins fixed, via recursive row fill against
// remaining column budgets.
template <typename Fn>
void for_each_joint_with_margins(const std::vector<int>& rows, const std::vector<int>& cols,
                                 std::size_t cap, Fn&& fn) {
  const std::size_t kx = rows.size(), ky = cols.size();
  std::vector<int> budget(cols);
  std::vector<int> flat(kx * ky, 0);
  std::size_t visited = 0;
  auto fill_row = [&](auto&& self, std::size_t x) -> void {
    if (visited >= cap) return;
    if (x == kx) {
      ++visited;
      fn(flat);
      return;
    }
    auto cell = [&](auto&& inner, std::size_t y, int rem) -> void {
      if (visited >= cap) return;
      if (y + 1 == ky) {
        if (rem <= budget[y]) {
          flat[x * ky + y] = rem;
          budget[y] -= rem;
          self(self, x + 1);
          budget[y] += rem;
          flat[x * ky + y] = 0;
        }
        return;
      }
      int hi = std::min(rem, budget[y]);
      for (int c = hi; c >= 0; --c) {
        flat[x * ky + y] = c;
        budget[y] -= c;
        inner(inner, y + 1, rem - c);
        budget[y] += c;
        flat[x * ky + y] = 0;
      }
    };
    cell(cell, 0, rows[x]);
  };
  fill_row(fill_row, 0);
  if (visited >= cap)
    throw CapExceededError("joint enumeration with fixed margins exceeded cap " +
                           std::to_string(cap));
}

// Quantize a continuous kernel onto the joint-count lattice for one type:
// among lattice joints with the type's row sums that satisfy the selection
// predicates, pick the one closest in L1 to qx x K. Falls back to
// largest-remainder rounding plus greedy unit moves when the row lattice is
// too large to enumerate.
inline JointEmpiricalType quantize_to_lattice(const EmpiricalType& qx,
                                              const ConditionalKernel& K, std::size_t ky,
                                              const LatticePredicates& pred) {
  const std::size_t kx = qx.alphabet_size();
  const int n = qx.n();
  std::vector<double> target(kx * ky);
  for (std::size_t x = 0; x < kx; ++x)
    for (std::size_t y = 0; y < ky; ++y)
      target[x * ky + y] = (static_cast<double>(qx.count(x)) / n) * K(x, y);

  if (joints_with_rows_count(qx.counts(), ky) <= 300000.0) {
    std::optional<std::vector<int>> best;
    double best_d = kInf;
    for_each_joint_with_rows(qx.counts(), ky, [&](const std::vector<int>& flat) {
      JointEmpiricalType j(kx, ky, flat);
      if (!pred.ok(qx, j)) return;
      double d = joint_l1(flat, n, target);
      if (d < best_d - 1e-15 || (std::abs(d - best_d) <= 1e-15 && (!best || flat < *best))) {
        best_d = d;
        best = flat;
      }
    });
    if (!best)
      throw InfeasibleError("quantize_to_lattice: no lattice joint satisfies the predicates");
    return JointEmpiricalType(kx, ky, *best);
  }

  // Large lattice: round rows by largest remainder, then greedy unit moves.
  std::vector<int> flat(kx * ky, 0);
  for (std::size_t x = 0; x < kx; ++x) {
    int nx = qx.count(x);
    std::vector<double> ideal(ky);
    for (std::size_t y = 0; y < ky; ++y)
      ideal[y] = nx > 0 ? static_cast<double>(nx) * K(x, y) : 0.0;
    std::vector<int> base(ky);
    int used = 0;
    for (std::size_t y = 0; y < ky; ++y) {
      base[y] = static_cast<int>(std::floor(ideal[y]));
      used += base[y];
    }
    std::vector<std::size_t> order(ky);
    for (std::size_t y = 0; y < ky; ++y) order[y] = y;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return ideal[a] - std::floor(ideal[a]) > ideal[b] - std::floor(ideal[b]);
    });
    for (int r = 0; r < nx - used; ++r) ++base[order[static_cast<std::size_t>(r) % ky]];
    for (std::size_t y = 0; y < ky; ++y) flat[x * ky + y] = base[y];
  }
  JointEmpiricalType cur(kx, ky, flat);
  for (int moves = 0; moves < 400 && !pred.ok(qx, cur); ++moves) {
    // Try every unit move within a row; keep the one with the largest
    // conditional entropy (the predicates relax as the rows flatten).
    double best_h = -kInf;
    std::optional<std::vector<int>> best;
    for (std::size_t x = 0; x < kx; ++x)
      for (std::size_t y1 = 0; y1 < ky; ++y1) {
        if (cur.count(x, y1) == 0) continue;
        for (std::size_t y2 = 0; y2 < ky; ++y2) {
          if (y1 == y2) continue;
          std::vector<int> next(cur.counts());
          --next[x * ky + y1];
          ++next[x * ky + y2];
          double h = lattice_h_x_given_y(JointEmpiricalType(kx, ky, next));
          if (h > best_h + 1e-15) {
            best_h = h;
            best = std::move(next);
          }
        }
      }
    if (!best) break;
    cur = JointEmpiricalType(kx, ky, *best);
  }
  if (!pred.ok(qx, cur))
    throw InfeasibleError("quantize_to_lattice: rounding could not satisfy the predicates");
  return cur;
}

inline std::vector<int> embed_counts(const std::vector<int>& counts, std::size_t ky) {
  std::vector<int> out(ky, 0);
  std::copy(counts.begin(), counts.end(), out.begin());
  return out;
}

}  // namespace detail

// Build the injective type registry: every source type gets either the
// identity convention (below the entropy threshold) or a predicate-checked
// lattice quantization of its selected test channel. Reverse-map collisions
// are repaired by moving the colliding quantized entry to the nearest unused
// output type that still admits a predicate-satisfying joint.
inline TypeRegistry build_registry(int n, std::size_t kx, std::size_t ky,
                                   const MappingPolicy& policy, const CompressionConstraint& con,
                                   const Distribution& G, std::uint64_t type_cap = 2'000'000) {
  policy.validate();
  con.validate();
  if (G.size() != kx) throw ConfigError("build_registry: source dimension mismatch");
  if (policy.delta > 0.0 && ky < kx)
    throw ConfigError("build_registry: |Y| >= |X| required when delta > 0");

  TypeRegistry reg(n, kx, ky, policy.delta, policy.epsilon);
  auto types = enumerate_types(n, kx, type_cap);
  detail::LatticePredicates pred{policy, con, G};

  struct Pending {
    EmpiricalType qx;
    JointEmpiricalType joint;
  };
  std::vector<Pending> pending;

  // Identity-branch entries claim their output types first; the convention
  // is fixed, so a colliding quantized entry is always the one that moves.
  for (const auto& qx : types) {
    if (policy.delta > 0.0 && qx.entropy() < policy.identity_threshold()) {
      std::vector<int> jflat(kx * ky, 0);
      for (std::size_t x = 0; x < kx; ++x) jflat[x * ky + x] = qx.count(x);
      JointEmpiricalType joint(kx, ky, jflat);
      RegistryEntry e{qx, EmpiricalType(detail::embed_counts(qx.counts(), ky)), joint, true,
                      false};
      auto jm = joint_measures(joint.distribution());
      e.mutual_info = jm.mutual_information;
      e.h_x_given_y = jm.h_first_given_second;
      reg.add(std::move(e));
    } else {
      ConditionalKernel k = select_test_channel(qx, policy, con, G, ky);
      pending.push_back({qx, detail::quantize_to_lattice(qx, k, ky, pred)});
    }
  }

  for (auto& p : pending) {
    EmpiricalType qy = p.joint.marginal_second();
    if (!reg.qy_used(qy.counts())) {
      RegistryEntry e{p.qx, qy, p.joint, false, false};
      auto jm = joint_measures(p.joint.distribution());
      e.mutual_info = jm.mutual_information;
      e.h_x_given_y = jm.h_first_given_second;
      reg.add(std::move(e));
      continue;
    }
    // Collision repair: nearest unused output type (L1 on counts, then
    // lexicographic) that admits a predicate-satisfying joint with the
    // required margins; among those joints, nearest to the original.
    auto ytypes = enumerate_types(n, ky, type_cap);
    std::stable_sort(ytypes.begin(), ytypes.end(),
                     [&](const EmpiricalType& a, const EmpiricalType& b) {
                       int da = 0, db = 0;
                       for (std::size_t i = 0; i < ky; ++i) {
                         da += std::abs(a.count(i) - qy.count(i));
                         db += std::abs(b.count(i) - qy.count(i));
                       }
                       if (da != db) return da < db;
                       return a.counts() < b.counts();
                     });
    std::vector<double> target(p.joint.counts().size());
    for (std::size_t i = 0; i < target.size(); ++i)
      target[i] = static_cast<double>(p.joint.counts()[i]) / n;
    bool placed = false;
    for (const auto& cand : ytypes) {
      if (reg.qy_used(cand.counts())) continue;
      std::optional<std::vector<int>> best;
      double best_d = kInf;
      detail::for_each_joint_with_margins(
          p.qx.counts(), cand.counts(), 500000, [&](const std::vector<int>& flat) {
            JointEmpiricalType j(kx, ky, flat);
            if (!pred.ok(p.qx, j)) return;
            double d = detail::joint_l1(flat, n, target);
            if (d < best_d - 1e-15 ||
                (std::abs(d - best_d) <= 1e-15 && (!best || flat < *best))) {
              best_d = d;
              best = flat;
            }
          });
      if (best) {
        RegistryEntry e{p.qx, cand, JointEmpiricalType(kx, ky, *best), false, true};
        auto jm = joint_measures(e.joint.distribution());
        e.mutual_info = jm.mutual_information;
        e.h_x_given_y = jm.h_first_given_second;
        reg.add(std::move(e));
        placed = true;
        break;
      }
    }
    if (!placed) {
      std::ostringstream os;
      os << "build_registry: cannot repair output-type collision for source type (";
      for (std::size_t i = 0; i < p.qx.counts().size(); ++i)
        os << (i ? "," : "") << p.qx.counts()[i];
      os << ")";
      throw InfeasibleError(os.str());
    }
  }
  return reg;
}

// The keyed ranking underlying encoder tie-breaking: a PRF of (x, y) under
// the codebook's ranking seed.
inline std::uint64_t rank_value(const Sequence& x, const Sequence& y, std::uint64_t seed) {
  return sequence_hash2(seed, x, y, /*domain=*/0x52414E4BULL);
}

struct Codebook {
  std::shared_ptr<const TypeRegistry> registry;
  std::uint64_t build_seed = 0;
  std::uint64_t ranking_seed = 0;
  Sequence error_word;  // all-zero word, emitted when a sub-codebook misses
  std::vector<std::vector<Sequence>> subcodebooks;  // aligned with registry entries

  int n() const { return registry->n(); }
  std::size_t kx() const { return registry->kx(); }
  std::size_t ky() const { return registry->ky(); }
};

// M_Q = ceil(exp(n (I + delta))).
inline std::uint64_t subcodebook_size(int n, double mutual_info, double delta) {
  double v = std::ceil(std::exp(n * (mutual_info + delta)));
  if (!(v < 9.0e18)) return ~std::uint64_t{0};
  return static_cast<std::uint64_t>(v);
}

inline Codebook build_codebook(std::shared_ptr<const TypeRegistry> registry, std::uint64_t seed,
                               std::uint64_t subcode_cap = (std::uint64_t{1} << 20)) {
  Codebook cb;
  cb.registry = std::move(registry);
  cb.build_seed = seed;
  cb.ranking_seed = derive_seed(seed, 0x52414E4B494E47ULL);
  cb.error_word.assign(static_cast<std::size_t>(cb.registry->n()), Symbol{0});
  const auto& entries = cb.registry->entries();
  cb.subcodebooks.resize(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.identity_branch) continue;
    std::uint64_t m = subcodebook_size(cb.registry->n(), e.mutual_info, cb.registry->delta());
    if (m > subcode_cap) {
      std::ostringstream os;
      os << "build_codebook: sub-codebook for source type (";
      for (std::size_t j = 0; j < e.qx.counts().size(); ++j)
        os << (j ? "," : "") << e.qx.counts()[j];
      os << ") needs " << m << " words, cap " << subcode_cap;
      throw CapExceededError(os.str());
    }
    auto eng = make_engine(seed, 0xC0DEB00C ^ static_cast<std::uint64_t>(i));
    auto& list = cb.subcodebooks[i];
    list.reserve(m);
    for (std::uint64_t t = 0; t < m; ++t) list.push_back(sample_from_type_class(e.qy, eng));
  }
  return cb;
}

inline Codebook build_codebook(int n, std::size_t kx, std::size_t ky, const Distribution& G,
                               const MappingPolicy& policy, const CompressionConstraint& con,
                               std::uint64_t seed,
                               std::uint64_t subcode_cap = (std::uint64_t{1} << 20)) {
  auto reg = std::make_shared<TypeRegistry>(build_registry(n, kx, ky, policy, con, G));
  return build_codebook(std::move(reg), seed, subcode_cap);
}

class LossyEncoder {
 public:
  struct Encoded {
    Sequence y;
    bool error_word = false;  // sub-codebook had no member of the target class
    bool identity = false;    // low-entropy convention, y echoes x
  };

  explicit LossyEncoder(std::shared_ptr<const Codebook> cb) : cb_(std::move(cb)) {}

  const Codebook& codebook() const { return *cb_; }
  const TypeRegistry& registry() const { return *cb_->registry; }

  // Minimum-rank member of the sub-codebook lying in the conditional type
  // class of x under the registered joint; the all-zero error word when the
  // intersection is empty.
  Encoded encode(const Sequence& x) const {
    const auto& reg = *cb_->registry;
    if (static_cast<int>(x.size()) != reg.n()) throw ConfigError("encode: wrong length");
    const RegistryEntry& e = reg.by_qx(empirical_type(x, reg.kx()));
    if (e.identity_branch) {
      Encoded out;
      out.y = x;
      out.identity = true;
      return out;
    }
    const auto& words = cb_->subcodebooks[e.index];
    const Sequence* best = nullptr;
    std::uint64_t best_rank = 0;
    for (const auto& w : words) {
      if (!(empirical_joint(x, w, reg.kx(), reg.ky()) == e.joint)) continue;
      std::uint64_t r = rank_value(x, w, cb_->ranking_seed);
      if (!best || r < best_rank || (r == best_rank && w < *best)) {
        best = &w;
        best_rank = r;
      }
    }
    Encoded out;
    if (best) {
      out.y = *best;
    } else {
      out.y = cb_->error_word;
      out.error_word = true;
    }
    return out;
  }

 private:
  std::shared_ptr<const Codebook> cb_;
};

inline bool power_fits(std::size_t base, int exp, std::uint64_t cap) {
  std::uint64_t v = 1;
  for (int i = 0; i < exp; ++i) {
    if (v > cap / base) return false;
    v *= base;
  }
  return v <= cap;
}

// Visit every x in X^n in lexicographic order.
template <typename Fn>
void for_each_sequence(std::size_t k, int n, Fn&& fn) {
  Sequence x(static_cast<std::size_t>(n), Symbol{0});
  for (;;) {
    fn(const_cast<const Sequence&>(x));
    int p = n - 1;
    while (p >= 0 && ++x[static_cast<std::size_t>(p)] == k) {
      x[static_cast<std::size_t>(p)] = 0;
      --p;
    }
    if (p < 0) break;
  }
}

inline std::vector<Sequence> inverse_image(const Sequence& y, const LossyEncoder& enc,
                                           std::uint64_t cap = (std::uint64_t{1} << 24)) {
  const auto& reg = enc.registry();
  if (!power_fits(reg.kx(), reg.n(), cap))
    throw CapExceededError("inverse_image: |X|^n exceeds cap " + std::to_string(cap));
  std::vector<Sequence> out;
  for_each_sequence(reg.kx(), reg.n(), [&](const Sequence& x) {
    if (enc.encode(x).y == y) out.push_back(x);
  });
  return out;
}

// One pass over X^n: preimages of every realized output. The basis for the
// exact-likelihood decoder and the brute-force diagnostics.
struct ImageMap {
  std::map<Sequence, std::vector<Sequence>> preimages;

  double mass_of(const Sequence& y, const Distribution& G) const {
    auto it = preimages.find(y);
    if (it == preimages.end()) return 0.0;
    double p = 0.0;
    for (const auto& x : it->second) {
      double px = 1.0;
      for (Symbol s : x) px *= G[s];
      p += px;
    }
    return p;
  }
};

inline ImageMap build_image_map(const LossyEncoder& enc,
                                std::uint64_t cap = (std::uint64_t{1} << 24)) {
  const auto& reg = enc.registry();
  if (!power_fits(reg.kx(), reg.n(), cap))
    throw CapExceededError("build_image_map: |X|^n exceeds cap " + std::to_string(cap));
  ImageMap im;
  for_each_sequence(reg.kx(), reg.n(), [&](const Sequence& x) {
    im.preimages[enc.encode(x).y].push_back(x);
  });
  return im;
}

struct ConcentrationReport {
  int n = 0;
  double delta = 0.0, epsilon = 0.0;
  double window_lo = 0.0, window_hi = 0.0;  // e^{n(delta -/+ epsilon)}
  int x_samples = 0;      // high-entropy source draws examined
  int x_inside = 0;       // intersection size landed inside the window
  int x_low_entropy = 0;  // draws that hit the identity branch (not windowed)
  double x_fraction = 0.0;
  bool brute_force = false;  // preimage checks ran (|X|^n under cap)
  int y_samples = 0;
  int y_pass = 0;  // preimage count met the e^{n(H(X|Y) - delta - 2 eps)} floor
  double y_fraction = 0.0;
  std::vector<std::uint64_t> x_counts;  // per-sample intersection sizes
};

// Codebook-quality diagnostic: are realized intersection sizes inside the
// expected exponential window, and (when brute force is affordable) are
// preimage populations at least their expected exponential floor.
inline ConcentrationReport concentration_diagnostic(const LossyEncoder& enc,
                                                    const Distribution& G, int x_samples,
                                                    int y_samples, std::mt19937_64& rng,
                                                    std::uint64_t brute_cap = (std::uint64_t{1}
                                                                               << 24)) {
  const auto& cb = enc.codebook();
  const auto& reg = enc.registry();
  ConcentrationReport rep;
  rep.n = reg.n();
  rep.delta = reg.delta();
  rep.epsilon = reg.epsilon();
  rep.window_lo = std::exp(reg.n() * (reg.delta() - reg.epsilon()));
  rep.window_hi = std::exp(reg.n() * (reg.delta() + reg.epsilon()));

  for (int s = 0; s < x_samples; ++s) {
    Sequence x(static_cast<std::size_t>(reg.n()));
    for (auto& sym : x) {
      double u = uniform01(rng), acc = 0.0;
      std::size_t pick = G.size() - 1;
      for (std::size_t i = 0; i < G.size(); ++i) {
        acc += G[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
      sym = static_cast<Symbol>(pick);
    }
    const RegistryEntry& e = reg.by_qx(empirical_type(x, reg.kx()));
    if (e.identity_branch) {
      ++rep.x_low_entropy;
      continue;
    }
    std::uint64_t cnt = 0;
    for (const auto& w : cb.subcodebooks[e.index])
      if (empirical_joint(x, w, reg.kx(), reg.ky()) == e.joint) ++cnt;
    ++rep.x_samples;
    rep.x_counts.push_back(cnt);
    double c = static_cast<double>(cnt);
    if (c >= rep.window_lo && c <= rep.window_hi) ++rep.x_inside;
  }
  rep.x_fraction = rep.x_samples > 0 ? static_cast<double>(rep.x_inside) / rep.x_samples : 1.0;

  if (power_fits(reg.kx(), reg.n(), brute_cap)) {
    rep.brute_force = true;
    ImageMap im = build_image_map(enc, brute_cap);
    std::vector<const Sequence*> quantized;
    for (const auto& [y, xs] : im.preimages) {
      if (y == cb.error_word) continue;
      const RegistryEntry* e = reg.find_by_qy(empirical_type(y, reg.ky()).counts());
      if (e && !e->identity_branch) quantized.push_back(&y);
    }
    for (int s = 0; s < y_samples && !quantized.empty(); ++s) {
      const Sequence& y = *quantized[uniform_below(rng, quantized.size())];
      const RegistryEntry& e = reg.by_qy(empirical_type(y, reg.ky()));
      std::uint64_t cnt = 0;
      for (const auto& x : im.preimages[y])
        if (empirical_joint(x, y, reg.kx(), reg.ky()) == e.joint) ++cnt;
      double floor = std::exp(reg.n() * (e.h_x_given_y - reg.delta() - 2.0 * reg.epsilon()));
      ++rep.y_samples;
      if (static_cast<double>(cnt) >= floor) ++rep.y_pass;
    }
    rep.y_fraction = rep.y_samples > 0 ? static_cast<double>(rep.y_pass) / rep.y_samples : 1.0;
  }
  return rep;
}

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline void put_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  put_u64(os, u);
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw ConfigError("codebook file: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw ConfigError("codebook file: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
inline double get_f64(std::istream& is) {
  std::uint64_t u = get_u64(is);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kCodebookMagic = 0x42435156;  // "VQCB" little-endian
inline constexpr std::uint32_t kCodebookVersion = 1;

inline void save_codebook(const Codebook& cb, std::ostream& os) {
  detail::put_u32(os, kCodebookMagic);
  detail::put_u32(os, kCodebookVersion);
  const auto& reg = *cb.registry;
  detail::put_u64(os, static_cast<std::uint64_t>(reg.n()));
  detail::put_u64(os, reg.kx());
  detail::put_u64(os, reg.ky());
  detail::put_f64(os, reg.delta());
  detail::put_f64(os, reg.epsilon());
  detail::put_u64(os, cb.build_seed);
  detail::put_u64(os, cb.ranking_seed);
  detail::put_u64(os, reg.entries().size());
  for (const auto& e : reg.entries()) {
    for (int c : e.qx.counts()) detail::put_u64(os, static_cast<std::uint64_t>(c));
    for (int c : e.joint.counts()) detail::put_u64(os, static_cast<std::uint64_t>(c));
    os.put(e.identity_branch ? 1 : 0);
    os.put(e.repaired ? 1 : 0);
    const auto& words = cb.subcodebooks[e.index];
    detail::put_u64(os, words.size());
    for (const auto& w : words)
      os.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size()));
  }
  if (!os) throw ConfigError("save_codebook: write failed");
}

inline void save_codebook(const Codebook& cb, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("save_codebook: cannot open " + path);
  save_codebook(cb, static_cast<std::ostream&>(os));
  if (!os) throw ConfigError("save_codebook: write failed on " + path);
}

inline Codebook load_codebook(std::istream& is) {
  if (detail::get_u32(is) != kCodebookMagic) throw ConfigError("load_codebook: bad magic");
  std::uint32_t ver = detail::get_u32(is);
  if (ver != kCodebookVersion)
    throw ConfigError("load_codebook: unsupported version " + std::to_string(ver));
  int n = static_cast<int>(detail::get_u64(is));
  std::size_t kx = detail::get_u64(is);
  std::size_t ky = detail::get_u64(is);
  double delta = detail::get_f64(is);
  double epsilon = detail::get_f64(is);
  std::uint64_t build_seed = detail::get_u64(is);
  std::uint64_t ranking_seed = detail::get_u64(is);
  std::uint64_t count = detail::get_u64(is);

  auto reg = std::make_shared<TypeRegistry>(n, kx, ky, delta, epsilon);
  Codebook cb;
  cb.build_seed = build_seed;
  cb.ranking_seed = ranking_seed;
  cb.error_word.assign(static_cast<std::size_t>(n), Symbol{0});
  for (std::uint64_t i = 0; i < count; ++i) {
    std::vector<int> qx(kx);
    for (auto& c : qx) c = static_cast<int>(detail::get_u64(is));
    std::vector<int> jflat(kx * ky);
    for (auto& c : jflat) c = static_cast<int>(detail::get_u64(is));
    int identity = is.get();
    int repaired = is.get();
    if (identity < 0 || repaired < 0) throw ConfigError("codebook file: truncated");
    JointEmpiricalType joint(kx, ky, jflat);
    RegistryEntry e{EmpiricalType(qx), joint.marginal_second(), joint, identity != 0,
                    repaired != 0};
    auto jm = joint_measures(joint.distribution());
    e.mutual_info = jm.mutual_information;
    e.h_x_given_y = jm.h_first_given_second;
    reg->add(std::move(e));
    std::uint64_t m = detail::get_u64(is);
    std::vector<Sequence> words;
    words.reserve(m);
    for (std::uint64_t t = 0; t < m; ++t) {
      Sequence w(static_cast<std::size_t>(n));
      is.read(reinterpret_cast<char*>(w.data()), n);
      if (!is) throw ConfigError("codebook file: truncated");
      words.push_back(std::move(w));
    }
    cb.subcodebooks.push_back(std::move(words));
  }
  cb.registry = std::move(reg);
  return cb;
}

inline Codebook load_codebook(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("load_codebook: cannot open " + path);
  return load_codebook(static_cast<std::istream&>(is));
}

}  // namespace vqid
