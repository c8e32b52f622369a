#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "vqid/ensemble.hpp"
#include "vqid/iproject.hpp"
#include "vqid/prob.hpp"
#include "vqid/rng.hpp"

// Numerical evaluation of the random-coding identification exponents: the
// inner convex minimization, the outer (nonconvex) searches over the source
// law and the reverse test channel, closed forms at zero rate, and the
// identification capacity under the compression budget.

namespace vqid {

// Conditional law of Y given X used by the exponent objective; evaluated at
// the current source candidate, so policies whose kernel depends on the
// source type are representable.
using Mapping = std::function<ConditionalKernel(const Distribution&)>;

inline Mapping identity_mapping(std::size_t ky = 0) {
  return [ky](const Distribution& qx) {
    std::size_t out = ky == 0 ? qx.size() : ky;
    return ConditionalKernel::identity(qx.size(), out);
  };
}

inline Mapping constant_mapping(ConditionalKernel k) {
  return [k = std::move(k)](const Distribution&) { return k; };
}

struct InnerResult {
  double value = kInf;
  // Minimizing conditional law of X given (y, z); rows indexed y * kz + z.
  std::optional<ConditionalKernel> witness;
  int iterations = 0;
};

// min over laws in the consistency set U of D(Q~_{XZ|Y} || Q_{X|Y} x W | Q_Y):
// decomposes over y into I-projections onto transportation polytopes with
// reference rho(x, z) = Q_{X|Y}(x|y) W(z|x). Zero iff q_zy is exactly the
// kernel induced from Q_{X|Y} through W.
inline InnerResult inner_divergence_min(const JointDistribution& q_xy,
                                        const ConditionalKernel& q_zy,
                                        const ConditionalKernel& W, double tol = 1e-8,
                                        int max_iter = 100000) {
  const std::size_t kx = q_xy.k1(), ky = q_xy.k2(), kz = q_zy.out_size();
  if (q_zy.in_size() != ky || W.in_size() != kx || W.out_size() != kz)
    throw ConfigError("inner_divergence_min: dimension mismatch");
  Distribution qy = q_xy.marginal_second();
  InnerResult res;
  std::vector<double> wit(ky * kz * kx, 1.0 / static_cast<double>(kx));
  double total = 0.0;
  int iters = 0;
  for (std::size_t y = 0; y < ky; ++y) {
    if (qy[y] <= 0.0) continue;
    std::vector<double> p(kx), w(kz);
    for (std::size_t x = 0; x < kx; ++x) p[x] = q_xy(x, y) / qy[y];
    for (std::size_t z = 0; z < kz; ++z) w[z] = q_zy(y, z);
    std::vector<double> rho(kx * kz);
    for (std::size_t x = 0; x < kx; ++x)
      for (std::size_t z = 0; z < kz; ++z) rho[x * kz + z] = p[x] * W(x, z);
    TransportResult t = min_divergence_transport(p, w, rho, kx, kz, tol, max_iter);
    if (!t.feasible) return res;  // +inf
    total += qy[y] * t.value;
    iters = std::max(iters, t.iterations);
    for (std::size_t z = 0; z < kz; ++z) {
      if (w[z] <= 0.0) continue;
      for (std::size_t x = 0; x < kx; ++x)
        wit[(y * kz + z) * kx + x] = t.plan[x * kz + z] / w[z];
    }
  }
  res.value = total < 0.0 ? 0.0 : total;
  res.witness = ConditionalKernel(ky * kz, kx, std::move(wit));
  res.iterations = iters;
  return res;
}

struct ObjectiveTerms {
  double source_divergence = kInf;  // D(Q_X || G)
  double inner_divergence = kInf;   // the U-constrained divergence minimum
  double rate_term = kInf;
  double i_xy = 0.0;
  double i_yz = 0.0;
  double total() const {
    if (source_divergence == kInf || inner_divergence == kInf || rate_term == kInf) return kInf;
    return source_divergence + inner_divergence + rate_term;
  }
};

// Kernel from Y to Z induced by Q_{X|Y} and W; the unique point where the
// inner divergence vanishes.
inline ConditionalKernel induced_reverse_channel(const Distribution& qx,
                                                 const ConditionalKernel& q_yx,
                                                 const ConditionalKernel& W) {
  const std::size_t kx = qx.size(), ky = q_yx.out_size(), kz = W.out_size();
  JointDistribution q_xy = JointDistribution::product(qx, q_yx);
  Distribution qy = q_xy.marginal_second();
  std::vector<double> t(ky * kz, 0.0);
  for (std::size_t y = 0; y < ky; ++y) {
    if (qy[y] <= 0.0) {
      for (std::size_t z = 0; z < kz; ++z) t[y * kz + z] = 1.0 / static_cast<double>(kz);
      continue;
    }
    for (std::size_t x = 0; x < kx; ++x) {
      double pxy = q_xy(x, y) / qy[y];
      for (std::size_t z = 0; z < kz; ++z) t[y * kz + z] += pxy * W(x, z);
    }
  }
  // Normalize away accumulated roundoff.
  for (std::size_t y = 0; y < ky; ++y) {
    double s = 0.0;
    for (std::size_t z = 0; z < kz; ++z) s += t[y * kz + z];
    for (std::size_t z = 0; z < kz; ++z) t[y * kz + z] /= s;
  }
  return ConditionalKernel(ky, kz, std::move(t));
}

// Full objective at a candidate (Q_X, Q_{Z|Y}). dd_rate selects the
// decoding-domain rate term [I(Y;Z) - R]_+ in place of
// max{[I(Y;Z) - I(X;Y)]_+, [I(Y;Z) + D - R]_+}.
inline ObjectiveTerms exponent_objective_terms(const Distribution& G, const ConditionalKernel& W,
                                               const Mapping& mapping, double rate,
                                               const Distribution& qx,
                                               const ConditionalKernel& q_zy,
                                               bool dd_rate = false, double tol = 1e-8) {
  ObjectiveTerms t;
  double d = divergence(qx, G);
  if (d == kInf) return t;
  t.source_divergence = d;
  ConditionalKernel q_yx = mapping(qx);
  JointDistribution q_xy = JointDistribution::product(qx, q_yx);
  auto jm = joint_measures(q_xy);
  t.i_xy = jm.mutual_information;
  Distribution qy = q_xy.marginal_second();
  auto jm_yz = joint_measures(JointDistribution::product(qy, q_zy));
  t.i_yz = jm_yz.mutual_information;
  InnerResult inner = inner_divergence_min(q_xy, q_zy, W, tol);
  if (inner.value == kInf) return t;
  t.inner_divergence = inner.value;
  if (dd_rate) {
    t.rate_term = std::max(0.0, t.i_yz - rate);
  } else {
    t.rate_term = std::max(std::max(0.0, t.i_yz - t.i_xy),
                           std::max(0.0, t.i_yz + t.source_divergence - rate));
  }
  return t;
}

inline double exponent_objective(const Distribution& G, const ConditionalKernel& W,
                                 const Mapping& mapping, double rate, const Distribution& qx,
                                 const ConditionalKernel& q_zy, bool dd_rate = false,
                                 double tol = 1e-8) {
  return exponent_objective_terms(G, W, mapping, rate, qx, q_zy, dd_rate, tol).total();
}

struct ExponentStart {
  Distribution qx;
  std::optional<ConditionalKernel> q_zy;  // empty: couple to the induced kernel
};

struct ExponentOptions {
  int starts = 32;          // total optimizer starts (coupled + free)
  int max_iters = 300;      // gradient iterations per start
  double tol = 1e-9;        // stop when improvements fall below this
  double floor = 1e-9;      // simplex-interior floor on iterates
  double inner_tol = 1e-8;  // tolerance handed to the inner solver
  std::uint64_t seed = 0x563149445345ULL;
  std::vector<ExponentStart> extra_starts;  // warm starts (used verbatim)
  double outer_grid_step = 0.05;   // min-max-min source grid
  double kernel_grid_step = 0.05;  // min-max-min / capacity kernel grid
  int refine_rounds = 24;          // pattern-search refinement rounds
};

struct ExponentResult {
  double value = kInf;
  Distribution qx_witness;
  ConditionalKernel qzy_witness;
  std::optional<ConditionalKernel> inner_witness;
  ObjectiveTerms terms;
  int starts_used = 0;
  // The searches over (Q_X, Q_{Z|Y}) and over kernels are nonconvex, so the
  // reported value is an upper bound on the true minimum (a certificate via
  // its witnesses), not a proof of global optimality.
  bool upper_bound = true;
  std::optional<ConditionalKernel> mapping_witness;  // min-max-min: maximizing kernel

  ExponentResult() : qx_witness(Distribution::uniform(2)), qzy_witness(2, 2, {1, 0, 0, 1}) {}
};

namespace detail {

// Normalize a raw block to the floored simplex, pinning coordinates whose
// mask entry is false to zero.
inline void normalize_block(std::vector<double>& v, std::size_t off, std::size_t len,
                            double floor, const std::vector<char>* mask = nullptr) {
  double s = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    double& x = v[off + i];
    bool live = !mask || (*mask)[i];
    if (!live) {
      x = 0.0;
      continue;
    }
    if (!(x > floor)) x = floor;
    s += x;
  }
  for (std::size_t i = 0; i < len; ++i) v[off + i] /= s;
}

struct BlockSpec {
  std::size_t offset, length;
  const std::vector<char>* mask;
};

inline void normalize_all(std::vector<double>& v, const std::vector<BlockSpec>& blocks,
                          double floor) {
  for (const auto& b : blocks) normalize_block(v, b.offset, b.length, floor, b.mask);
}

// Multi-start projected gradient descent with numeric gradients on the
// normalized blocks. Infinite neighbors fall back to one-sided differences
// (both sides infinite freezes the coordinate).
template <typename Eval>
double block_pgd(std::vector<double>& v, const std::vector<BlockSpec>& blocks, double floor,
                 int max_iters, double tol, Eval&& eval) {
  auto project = [&](std::vector<double> cand) {
    normalize_all(cand, blocks, floor);
    return cand;
  };
  v = project(v);
  double f = eval(v);
  if (f == kInf) return f;
  double step = 0.1;
  std::vector<double> grad(v.size(), 0.0);
  for (int it = 0; it < max_iters; ++it) {
    const double h = 1e-6;
    double gnorm = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::vector<double> up = v, dn = v;
      up[i] += h;
      dn[i] -= h;
      double fu = eval(project(std::move(up)));
      double fd = eval(project(std::move(dn)));
      double g;
      if (fu < kInf && fd < kInf)
        g = (fu - fd) / (2 * h);
      else if (fu < kInf)
        g = (fu - f) / h;
      else if (fd < kInf)
        g = (f - fd) / h;
      else
        g = 0.0;
      grad[i] = g;
      gnorm += g * g;
    }
    if (gnorm < 1e-20) break;
    bool moved = false;
    while (step > 1e-13) {
      std::vector<double> cand = v;
      for (std::size_t i = 0; i < v.size(); ++i) cand[i] -= step * grad[i];
      cand = project(std::move(cand));
      double fc = eval(cand);
      if (fc < f - 1e-15) {
        double gain = f - fc;
        v = std::move(cand);
        f = fc;
        moved = true;
        step = std::min(step * 1.5, 10.0);
        if (gain < tol) return f;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  return f;
}

inline std::vector<double> simplex_grid_axis(int points) {
  std::vector<double> xs;
  for (int i = 1; i < points; ++i) xs.push_back(static_cast<double>(i) / points);
  return xs;
}

// Deterministic spread of interior source candidates: vertices pulled
// inward, pairwise mixtures, and seeded random interior points.
inline std::vector<Distribution> source_candidates(std::size_t kx, const std::vector<char>& mask,
                                                   int want, std::uint64_t seed) {
  std::vector<Distribution> out;
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < kx; ++i)
    if (mask[i]) live.push_back(i);
  auto push = [&](std::vector<double> w) {
    double s = 0.0;
    for (std::size_t i = 0; i < kx; ++i) {
      if (!mask[i]) w[i] = 0.0;
      s += w[i];
    }
    if (s <= 0.0) return;
    for (auto& x : w) x /= s;
    out.emplace_back(std::move(w));
  };
  push(std::vector<double>(kx, 1.0));  // uniform over the live support
  for (std::size_t i : live) {
    std::vector<double> w(kx, 0.05);
    w[i] = 1.0;
    push(std::move(w));
  }
  if (live.size() >= 2) {
    for (std::size_t a = 0; a < live.size(); ++a)
      for (std::size_t b = a + 1; b < live.size(); ++b) {
        std::vector<double> w(kx, 0.02);
        w[live[a]] = 0.6;
        w[live[b]] = 0.4;
        push(std::move(w));
      }
  }
  auto eng = make_engine(seed, 0x51585354ULL);
  while (static_cast<int>(out.size()) < want) {
    std::vector<double> w(kx, 0.0);
    for (std::size_t i : live) w[i] = -std::log(1.0 - uniform01(eng));
    push(std::move(w));
  }
  return out;
}

inline ConditionalKernel kernel_from_flat(const std::vector<double>& v, std::size_t off,
                                          std::size_t rows, std::size_t cols) {
  std::vector<double> t(v.begin() + static_cast<std::ptrdiff_t>(off),
                        v.begin() + static_cast<std::ptrdiff_t>(off + rows * cols));
  return ConditionalKernel(rows, cols, std::move(t));
}

}  // namespace detail

namespace detail {

struct FixedMappingSearch {
  const Distribution& G;
  const ConditionalKernel& W;
  const Mapping& mapping;
  double rate;
  bool dd_rate;
  const ExponentOptions& opts;

  ExponentResult run() const {
    const std::size_t kx = G.size();
    ConditionalKernel probe = mapping(Distribution::uniform(kx));
    const std::size_t ky = probe.out_size(), kz = W.out_size();

    std::vector<char> mask(kx, 1);
    for (std::size_t i = 0; i < kx; ++i) mask[i] = G[i] > 0.0 ? 1 : 0;

    ExponentResult best;
    int starts_used = 0;
    auto consider = [&](const std::vector<double>& qx_raw,
                        const std::optional<ConditionalKernel>& qzy0, bool coupled) {
      ++starts_used;
      if (coupled) {
        std::vector<double> v(qx_raw);
        std::vector<detail::BlockSpec> blocks{{0, kx, &mask}};
        auto eval = [&](const std::vector<double>& u) {
          Distribution qx(u);
          ConditionalKernel induced = induced_reverse_channel(qx, mapping(qx), W);
          return exponent_objective(G, W, mapping, rate, qx, induced, dd_rate, opts.inner_tol);
        };
        double f = detail::block_pgd(v, blocks, opts.floor, opts.max_iters, opts.tol, eval);
        if (f < best.value) {
          Distribution qx(v);
          record(best, qx, induced_reverse_channel(qx, mapping(qx), W));
        }
      } else {
        std::vector<double> v(kx + ky * kz);
        std::copy(qx_raw.begin(), qx_raw.end(), v.begin());
        const ConditionalKernel& k0 = *qzy0;
        std::copy(k0.flat().begin(), k0.flat().end(), v.begin() + static_cast<std::ptrdiff_t>(kx));
        std::vector<detail::BlockSpec> blocks{{0, kx, &mask}};
        for (std::size_t y = 0; y < ky; ++y)
          blocks.push_back({kx + y * kz, kz, nullptr});
        auto eval = [&](const std::vector<double>& u) {
          Distribution qx(std::vector<double>(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(kx)));
          ConditionalKernel qzy = detail::kernel_from_flat(u, kx, ky, kz);
          return exponent_objective(G, W, mapping, rate, qx, qzy, dd_rate, opts.inner_tol);
        };
        double f = detail::block_pgd(v, blocks, opts.floor, opts.max_iters, opts.tol, eval);
        if (f < best.value) {
          Distribution qx(std::vector<double>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(kx)));
          record(best, qx, detail::kernel_from_flat(v, kx, ky, kz));
        }
      }
    };

    for (const auto& st : opts.extra_starts) {
      std::vector<double> raw = st.qx.probs();
      if (st.q_zy)
        consider(raw, st.q_zy, false);
      else
        consider(raw, std::nullopt, true);
      // A warm witness is also worth polishing jointly.
      if (!st.q_zy) {
        ConditionalKernel ind = induced_reverse_channel(st.qx, mapping(st.qx), W);
        consider(raw, ind, false);
      }
    }

    int budget = std::max(2, opts.starts);
    auto sources = detail::source_candidates(kx, mask, budget, opts.seed);
    auto eng = make_engine(opts.seed, 0x465245455aULL);
    for (int s = 0; s < budget; ++s) {
      const Distribution& qx = sources[static_cast<std::size_t>(s) % sources.size()];
      consider(qx.probs(), std::nullopt, true);
      ConditionalKernel induced = induced_reverse_channel(qx, mapping(qx), W);
      if (s % 2 == 0) {
        consider(qx.probs(), induced, false);
      } else {
        // Jittered free start around the induced kernel.
        std::vector<double> t = induced.flat();
        for (auto& x : t) x = std::max(opts.floor, x + 0.25 * (uniform01(eng) - 0.5));
        for (std::size_t y = 0; y < ky; ++y) {
          double sum = 0.0;
          for (std::size_t z = 0; z < kz; ++z) sum += t[y * kz + z];
          for (std::size_t z = 0; z < kz; ++z) t[y * kz + z] /= sum;
        }
        consider(qx.probs(), ConditionalKernel(ky, kz, std::move(t)), false);
      }
    }
    best.starts_used = starts_used;
    return best;
  }

  void record(ExponentResult& best, const Distribution& qx, const ConditionalKernel& qzy) const {
    ObjectiveTerms t =
        exponent_objective_terms(G, W, mapping, rate, qx, qzy, dd_rate, opts.inner_tol);
    double f = t.total();
    if (f >= best.value) return;
    best.value = f;
    best.qx_witness = qx;
    best.qzy_witness = qzy;
    best.terms = t;
    InnerResult inner =
        inner_divergence_min(JointDistribution::product(qx, mapping(qx)), qzy, W, opts.inner_tol);
    best.inner_witness = inner.witness;
  }
};

}  // namespace detail

// E(R_I) for a fixed mapping functional: minimize the three-term objective
// over (Q_X, Q_{Z|Y}). Multi-start; the value is an upper bound certificate.
inline ExponentResult exponent_fixed_mapping(const Distribution& G, const ConditionalKernel& W,
                                             const Mapping& mapping, double rate,
                                             const ExponentOptions& opts = {}) {
  if (rate < 0.0) throw ConfigError("exponent_fixed_mapping: rate must be nonnegative");
  detail::FixedMappingSearch s{G, W, mapping, rate, false, opts};
  return s.run();
}

// Decoding-domain exponent: identical first two terms, rate term
// [I(Y;Z) - R]_+. Pointwise dominated by the fixed-mapping objective.
inline ExponentResult exponent_dd(const Distribution& G, const ConditionalKernel& W,
                                  const Mapping& mapping, double rate,
                                  const ExponentOptions& opts = {}) {
  if (rate < 0.0) throw ConfigError("exponent_dd: rate must be nonnegative");
  detail::FixedMappingSearch s{G, W, mapping, rate, true, opts};
  return s.run();
}

struct ZeroRateForms {
  double exponent;     // -log sum G^2
  double exponent_dd;  // -log max G
  Distribution qx_star;

  explicit ZeroRateForms(const Distribution& G)
      : exponent(0), exponent_dd(0), qx_star(Distribution::uniform(G.size())) {
    double s2 = 0.0, mx = 0.0;
    std::vector<double> q(G.size());
    for (std::size_t i = 0; i < G.size(); ++i) {
      s2 += G[i] * G[i];
      mx = std::max(mx, G[i]);
    }
    for (std::size_t i = 0; i < G.size(); ++i) q[i] = G[i] * G[i] / s2;
    exponent = -std::log(s2);
    exponent_dd = -std::log(mx);
    qx_star = Distribution(std::move(q));
  }
};

inline ZeroRateForms zero_rate_closed_forms(const Distribution& G) { return ZeroRateForms(G); }

struct LinearityPoint {
  double rate;
  double exponent;
  double deviation;  // |E(R) - (E(0) - R)|
};

struct LinearityReport {
  double e0 = 0.0;
  std::vector<LinearityPoint> points;
  double max_deviation = 0.0;
  double largest_linear_rate = 0.0;  // largest swept rate within tolerance
  double tolerance = 0.0;
};

// Sweep small rates and compare against the zero-rate line E(0) - R.
// Warm-start chaining keeps the sweep monotone and cheap.
inline LinearityReport low_rate_linearity_check(const Distribution& G,
                                                const ConditionalKernel& W,
                                                const Mapping& mapping, std::vector<double> rates,
                                                double tolerance = 1e-3,
                                                const ExponentOptions& opts = {}) {
  std::sort(rates.begin(), rates.end());
  LinearityReport rep;
  rep.tolerance = tolerance;
  ExponentOptions o = opts;
  ExponentResult r0 = exponent_fixed_mapping(G, W, mapping, 0.0, o);
  rep.e0 = r0.value;
  o.extra_starts.push_back({r0.qx_witness, r0.qzy_witness});
  o.extra_starts.push_back({r0.qx_witness, std::nullopt});
  for (double r : rates) {
    ExponentResult er = exponent_fixed_mapping(G, W, mapping, r, o);
    double dev = std::abs(er.value - (rep.e0 - r));
    rep.points.push_back({r, er.value, dev});
    rep.max_deviation = std::max(rep.max_deviation, dev);
    if (dev <= tolerance) rep.largest_linear_rate = r;
    o.extra_starts.clear();
    o.extra_starts.push_back({er.qx_witness, er.qzy_witness});
    o.extra_starts.push_back({er.qx_witness, std::nullopt});
  }
  return rep;
}

namespace detail {

// min over Q_{Z|Y} of the objective with both the source and the kernel
// pinned; the inner loop of the min-max-min search. Returns the value and
// the minimizing reverse channel.
inline std::pair<double, ConditionalKernel> min_over_reverse(const Distribution& G,
                                                             const ConditionalKernel& W,
                                                             const ConditionalKernel& q_yx,
                                                             const Distribution& qx, double rate,
                                                             const ExponentOptions& opts) {
  Mapping m = constant_mapping(q_yx);
  const std::size_t ky = q_yx.out_size(), kz = W.out_size();
  ConditionalKernel induced = induced_reverse_channel(qx, q_yx, W);
  double best = kInf;
  ConditionalKernel best_k = induced;
  auto run_from = [&](const ConditionalKernel& k0) {
    std::vector<double> v(k0.flat());
    std::vector<BlockSpec> blocks;
    for (std::size_t y = 0; y < ky; ++y) blocks.push_back({y * kz, kz, nullptr});
    auto eval = [&](const std::vector<double>& u) {
      return exponent_objective(G, W, m, rate, qx, ConditionalKernel(ky, kz, u), false,
                                opts.inner_tol);
    };
    double f = block_pgd(v, blocks, opts.floor, std::max(60, opts.max_iters / 4), opts.tol, eval);
    if (f < best) {
      best = f;
      best_k = ConditionalKernel(ky, kz, v);
    }
  };
  run_from(induced);
  run_from(ConditionalKernel::uniform(ky, kz));
  return {best, best_k};
}

}  // namespace detail

// Worst-case exponent over compression-feasible mappings:
// min_{Q_X} max_{Q_{Y|X} feasible} min_{Q_{Z|Y}} objective. The maximization
// is non-concave; the kernel grid plus pattern-search refinement makes this
// a documented heuristic rather than a certificate.
inline ExponentResult exponent_minmaxmin(const Distribution& G, const ConditionalKernel& W,
                                         const CompressionConstraint& con, double rate,
                                         std::size_t ky, const ExponentOptions& opts = {}) {
  con.validate();
  const std::size_t kx = G.size();
  int ksteps = static_cast<int>(std::lround(1.0 / opts.kernel_grid_step));
  if (ksteps < 2) ksteps = 2;
  auto rows = detail::enumerate_compositions(ksteps, ky);
  double grid_size = std::pow(static_cast<double>(rows.size()), static_cast<double>(kx));
  if (grid_size > 2e6)
    throw ConfigError("exponent_minmaxmin: kernel grid too large; coarsen kernel_grid_step");

  auto feasible = [&](const Distribution& qx, const ConditionalKernel& k) {
    auto jm = joint_measures(JointDistribution::product(qx, k));
    return detail::constraint_from_measures(jm.mutual_information, divergence(qx, G), con).pass;
  };

  // Inner-max at one source point: grid scan, then pattern-search refinement
  // on the best kernel.
  auto inner_max = [&](const Distribution& qx, std::optional<ConditionalKernel> seed_kernel)
      -> std::pair<double, std::optional<ConditionalKernel>> {
    double best = -kInf;
    std::optional<ConditionalKernel> best_k;
    auto try_kernel = [&](const ConditionalKernel& k) {
      if (!feasible(qx, k)) return;
      double v = detail::min_over_reverse(G, W, k, qx, rate, opts).first;
      if (v > best + 1e-15) {
        best = v;
        best_k = k;
      }
    };
    std::vector<std::size_t> idx(kx, 0);
    for (;;) {
      std::vector<double> flat;
      flat.reserve(kx * ky);
      for (std::size_t x = 0; x < kx; ++x)
        for (std::size_t y = 0; y < ky; ++y)
          flat.push_back(static_cast<double>(rows[idx[x]][y]) / ksteps);
      try_kernel(ConditionalKernel(kx, ky, std::move(flat)));
      std::size_t p = 0;
      while (p < kx && ++idx[p] == rows.size()) idx[p++] = 0;
      if (p == kx) break;
    }
    if (seed_kernel) try_kernel(*seed_kernel);
    if (best_k) {
      double step = opts.kernel_grid_step;
      for (int round = 0; round < opts.refine_rounds; ++round) {
        bool improved = false;
        for (std::size_t x = 0; x < kx && !improved; ++x)
          for (std::size_t y1 = 0; y1 < ky && !improved; ++y1)
            for (std::size_t y2 = 0; y2 < ky && !improved; ++y2) {
              if (y1 == y2) continue;
              std::vector<double> t = best_k->flat();
              double move = std::min(step, t[x * ky + y1]);
              if (move <= 0.0) continue;
              t[x * ky + y1] -= move;
              t[x * ky + y2] += move;
              ConditionalKernel cand(kx, ky, std::move(t));
              if (!feasible(qx, cand)) continue;
              double v = detail::min_over_reverse(G, W, cand, qx, rate, opts).first;
              if (v > best + 1e-12) {
                best = v;
                best_k = cand;
                improved = true;
              }
            }
        if (!improved) step *= 0.5;
        if (step < 1e-4) break;
      }
    }
    return {best, best_k};
  };

  std::vector<char> mask(kx, 1);
  for (std::size_t i = 0; i < kx; ++i) mask[i] = G[i] > 0.0 ? 1 : 0;
  int qsteps = static_cast<int>(std::lround(1.0 / opts.outer_grid_step));
  auto qgrid = detail::enumerate_compositions(qsteps, kx);

  ExponentResult out;
  out.value = kInf;
  std::optional<Distribution> best_qx;
  std::optional<ConditionalKernel> best_kernel;
  for (const auto& comp : qgrid) {
    std::vector<double> p(kx);
    bool ok = true;
    for (std::size_t i = 0; i < kx; ++i) {
      p[i] = static_cast<double>(comp[i]) / qsteps;
      if (p[i] > 0.0 && !mask[i]) ok = false;
    }
    if (!ok) continue;
    // Pull grid points slightly inside the live support to dodge spurious
    // support-violation infinities.
    for (std::size_t i = 0; i < kx; ++i)
      if (mask[i]) p[i] = std::max(p[i], 1e-6);
    double s = 0.0;
    for (double x : p) s += x;
    for (auto& x : p) x /= s;
    Distribution qx(p);
    auto [v, k] = inner_max(qx, best_kernel);
    if (v == -kInf) {
      throw InfeasibleError("exponent_minmaxmin: no feasible kernel at a source grid point");
    }
    if (v < out.value) {
      out.value = v;
      best_qx = qx;
      best_kernel = k;
    }
  }
  if (!best_qx || !best_kernel) throw InfeasibleError("exponent_minmaxmin: empty search");

  // Recover witnesses consistent with the reported value: redo the
  // reverse-channel minimization at the winning (source, kernel) pair.
  Mapping m = constant_mapping(*best_kernel);
  auto [final_v, final_qzy] = detail::min_over_reverse(G, W, *best_kernel, *best_qx, rate, opts);
  out.value = final_v;
  out.qx_witness = *best_qx;
  out.qzy_witness = final_qzy;
  out.mapping_witness = best_kernel;
  out.terms = exponent_objective_terms(G, W, m, rate, *best_qx, final_qzy, false, opts.inner_tol);
  InnerResult inner = inner_divergence_min(JointDistribution::product(*best_qx, *best_kernel),
                                           final_qzy, W, opts.inner_tol);
  out.inner_witness = inner.witness;
  out.starts_used = static_cast<int>(qgrid.size());
  return out;
}

struct CapacityResult {
  double value = 0.0;  // max I(Y;Z), nats per symbol
  ConditionalKernel kernel;

  CapacityResult() : kernel(2, 2, {1, 0, 0, 1}) {}
};

// max I(Y;Z) over mappings Q_{Y|X} with I(X;Y) <= R_C, X ~ G, Z through W.
// Concave in spirit, searched by kernel grid plus pattern refinement.
inline CapacityResult identification_capacity(const Distribution& G, const ConditionalKernel& W,
                                              double compression_rate, std::size_t ky,
                                              const ExponentOptions& opts = {}) {
  if (compression_rate < 0.0) throw ConfigError("identification_capacity: R_C must be >= 0");
  const std::size_t kx = G.size(), kz = W.out_size();
  auto score = [&](const ConditionalKernel& k) -> std::optional<double> {
    auto jm = joint_measures(JointDistribution::product(G, k));
    if (jm.mutual_information > compression_rate + 1e-12) return std::nullopt;
    std::vector<double> yz(ky * kz, 0.0);
    for (std::size_t x = 0; x < kx; ++x)
      for (std::size_t y = 0; y < ky; ++y)
        for (std::size_t z = 0; z < kz; ++z) yz[y * kz + z] += G[x] * k(x, y) * W(x, z);
    return joint_measures(JointDistribution(ky, kz, std::move(yz))).mutual_information;
  };

  int ksteps = static_cast<int>(std::lround(1.0 / opts.kernel_grid_step));
  if (ksteps < 2) ksteps = 2;
  auto rows = detail::enumerate_compositions(ksteps, ky);
  double grid_size = std::pow(static_cast<double>(rows.size()), static_cast<double>(kx));
  if (grid_size > 2e6)
    throw ConfigError("identification_capacity: kernel grid too large; coarsen kernel_grid_step");

  CapacityResult best;
  best.value = -kInf;
  auto try_kernel = [&](const ConditionalKernel& k) {
    auto v = score(k);
    if (v && *v > best.value + 1e-15) {
      best.value = *v;
      best.kernel = k;
    }
  };
  std::vector<std::size_t> idx(kx, 0);
  for (;;) {
    std::vector<double> flat;
    flat.reserve(kx * ky);
    for (std::size_t x = 0; x < kx; ++x)
      for (std::size_t y = 0; y < ky; ++y)
        flat.push_back(static_cast<double>(rows[idx[x]][y]) / ksteps);
    try_kernel(ConditionalKernel(kx, ky, std::move(flat)));
    std::size_t p = 0;
    while (p < kx && ++idx[p] == rows.size()) idx[p++] = 0;
    if (p == kx) break;
  }
  for (const auto& st : opts.extra_starts)
    if (st.q_zy) try_kernel(*st.q_zy);
  if (ky >= kx) try_kernel(ConditionalKernel::identity(kx, ky));
  if (best.value == -kInf)
    throw InfeasibleError("identification_capacity: no feasible kernel on the grid");

  double step = opts.kernel_grid_step;
  for (int round = 0; round < opts.refine_rounds; ++round) {
    bool improved = false;
    for (std::size_t x = 0; x < kx && !improved; ++x)
      for (std::size_t y1 = 0; y1 < ky && !improved; ++y1)
        for (std::size_t y2 = 0; y2 < ky && !improved; ++y2) {
          if (y1 == y2) continue;
          std::vector<double> t = best.kernel.flat();
          double move = std::min(step, t[x * ky + y1]);
          if (move <= 0.0) continue;
          t[x * ky + y1] -= move;
          t[x * ky + y2] += move;
          ConditionalKernel cand(kx, ky, std::move(t));
          auto v = score(cand);
          if (v && *v > best.value + 1e-12) {
            best.value = *v;
            best.kernel = cand;
            improved = true;
          }
        }
    if (!improved) step *= 0.5;
    if (step < 1e-5) break;
  }
  return best;
}

}  // namespace vqid
