#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "vqid/ensemble.hpp"
#include "vqid/iproject.hpp"
#include "vqid/prob.hpp"
#include "vqid/simulation.hpp"
#include "vqid/types.hpp"

// The four identification decoders. All of them rank enrolled rows against
// the channel output z; rows flagged as encoder error words always get the
// worst possible metric.

namespace vqid {

// Per-symbol normalization exponent of the quantized-word distribution: for
// a registered quantized type, I(X;Y) + D(Q_X || G); under the identity
// convention, H(Q_Y) + D(Q_Y || G), which coincides with H + D of the source
// type it echoes.
inline double alpha_of(const EmpiricalType& qy, const TypeRegistry& reg, const Distribution& G) {
  const RegistryEntry& e = reg.by_qy(qy);
  Distribution qx = e.qx.distribution();
  double d = divergence(qx, G);
  if (e.identity_branch) return entropy(qx) + d;
  return e.mutual_info + d;
}

// ln |T(y|z) ∩ C|: the number of quantized representatives sharing the joint
// type of (y, z). This estimates the chance that a fresh user's stored word
// lands in the observed conditional type. Identity-branch types contribute
// their whole conditional class (every sequence of such a type represents
// itself), quantized types the matching members of their sub-codebook,
// counted with multiplicity. Returns -inf when no representative matches,
// which only happens for words that never left the encoder.
inline double log_codeword_matches(const RegistryEntry& e, const Codebook& cb,
                                   const JointEmpiricalType& target, const Sequence& z) {
  if (e.identity_branch) {
    // Count first-coordinate sequences against the fixed z: transpose the
    // joint so the per-row multinomials run over z-slices.
    std::vector<int> t(target.k1() * target.k2());
    for (std::size_t j = 0; j < target.k2(); ++j)
      for (std::size_t i = 0; i < target.k1(); ++i)
        t[j * target.k1() + i] = target.count(i, j);
    JointEmpiricalType flipped(target.k2(), target.k1(), std::move(t));
    return conditional_type_class_size(flipped).log_size;
  }
  const auto& list = cb.subcodebooks[e.index];
  int c = 0;
  for (const auto& w : list)
    if (empirical_joint(w, z, target.k1(), target.k2()) == target) ++c;
  return c > 0 ? std::log(static_cast<double>(c)) : -kInf;
}

namespace detail {
// Shared argbest scan: pick the smallest metric, smallest index on ties.
inline DecoderDecision pick_min(const std::vector<double>& metrics) {
  DecoderDecision d;
  double best = kInf;
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    if (metrics[m] < best) {
      best = metrics[m];
      d.index = static_cast<int>(m);
      d.tie = false;
    } else if (d.index >= 0 && metrics[m] == best && best < kInf) {
      d.tie = true;
    }
  }
  if (d.index < 0 || best == kInf) {
    d.index = -1;
    d.failed = true;
  } else {
    d.metric = best;
  }
  return d;
}
}  // namespace detail

// Universal decoder: minimize log N(y_m | z) - n * alpha(type(y_m)), where
// N counts quantized representatives in the same conditional type class
// given z, so the winner is the row whose joint type with z is hardest to
// hit by chance. Rows whose class holds no representative are excluded.
inline DecoderDecision decode_universal(const Sequence& z, const std::vector<EnrolledRow>& rows,
                                        const Codebook& cb, const Distribution& G,
                                        std::size_t kz) {
  const TypeRegistry& reg = *cb.registry;
  const std::size_t ky = reg.ky();
  const int n = reg.n();
  std::map<std::vector<int>, double> log_counts;  // joint counts -> ln N
  std::vector<double> metrics(rows.size(), kInf);
  for (std::size_t m = 0; m < rows.size(); ++m) {
    if (rows[m].error_word) continue;
    JointEmpiricalType joint = empirical_joint(rows[m].y, z, ky, kz);
    const RegistryEntry& e = reg.by_qy(joint.marginal_first());
    auto [it, fresh] = log_counts.emplace(joint.counts(), 0.0);
    if (fresh) it->second = log_codeword_matches(e, cb, joint, z);
    if (it->second == -kInf) continue;
    metrics[m] = it->second - n * alpha_of(e.qy, reg, G);
  }
  return detail::pick_min(metrics);
}

// Baseline: maximize the empirical mutual information between the row and z.
inline DecoderDecision decode_mmi(const Sequence& z, const std::vector<EnrolledRow>& rows,
                                  std::size_t ky, std::size_t kz) {
  std::vector<double> metrics(rows.size(), kInf);
  for (std::size_t m = 0; m < rows.size(); ++m) {
    if (rows[m].error_word) continue;
    metrics[m] =
        -joint_measures(empirical_joint(rows[m].y, z, ky, kz).distribution()).mutual_information;
  }
  DecoderDecision d = detail::pick_min(metrics);
  if (!d.failed) d.metric = -d.metric;
  return d;
}

struct BetaResult {
  double value = kInf;
  bool feasible = false;
  // Minimizing conditional law of X given (y, z), rows indexed y * kz + z.
  std::optional<ConditionalKernel> witness;
};

// Minimum of the joint-law divergence against G x W over conditional laws of
// X consistent with the registered reverse channel of type(y). Decomposes
// per y-symbol into an I-projection onto a transportation polytope with row
// sums Q_{X|Y}(.|y), column sums Q_{Z|Y}(.|y), and reference density
// rho(x, z) = Q_{Z|Y}(z|y) G(x) W(z|x).
inline BetaResult beta_of(const JointEmpiricalType& qyz, const TypeRegistry& reg,
                          const Distribution& G, const ConditionalKernel& W, double tol = 1e-8,
                          int max_iter = 100000) {
  const std::size_t ky = qyz.k1(), kz = qyz.k2(), kx = reg.kx();
  if (W.in_size() != kx || W.out_size() != kz) throw ConfigError("beta_of: channel dimensions");
  const int n = qyz.n();
  const RegistryEntry& e = reg.by_qy(qyz.marginal_first());

  BetaResult res;
  std::vector<double> wit(ky * kz * kx, 1.0 / static_cast<double>(kx));

  if (e.identity_branch) {
    // X is y itself: the feasible set is a single point and the value is the
    // joint cross-entropy -E[log G(y) W(z|y)].
    double v = 0.0;
    for (std::size_t y = 0; y < ky; ++y)
      for (std::size_t z = 0; z < kz; ++z) {
        double q = static_cast<double>(qyz.count(y, z)) / n;
        if (q <= 0.0) continue;
        double gw = (y < kx ? G[y] * W(y, z) : 0.0);
        if (gw <= 0.0) return res;  // support violation: +inf
        v -= q * std::log(gw);
        for (std::size_t x = 0; x < kx; ++x)
          wit[(y * kz + z) * kx + x] = (x == y ? 1.0 : 0.0);
      }
    res.value = v;
    res.feasible = true;
    res.witness = ConditionalKernel(ky * kz, kx, std::move(wit));
    return res;
  }

  double total = 0.0;
  for (std::size_t y = 0; y < ky; ++y) {
    int ny = 0;
    for (std::size_t z = 0; z < kz; ++z) ny += qyz.count(y, z);
    if (ny == 0) continue;
    double qy = static_cast<double>(ny) / n;
    // Margins: X side from the registered joint, Z side from the observed one.
    int cy = 0;
    std::vector<double> p(kx, 0.0);
    for (std::size_t x = 0; x < kx; ++x) cy += e.joint.count(x, y);
    if (cy == 0)
      throw InfeasibleError("beta_of: observed y-symbol has no mass in the registered type");
    for (std::size_t x = 0; x < kx; ++x)
      p[x] = static_cast<double>(e.joint.count(x, y)) / cy;
    std::vector<double> w(kz, 0.0);
    for (std::size_t z = 0; z < kz; ++z) w[z] = static_cast<double>(qyz.count(y, z)) / ny;
    std::vector<double> rho(kx * kz, 0.0);
    for (std::size_t x = 0; x < kx; ++x)
      for (std::size_t z = 0; z < kz; ++z) rho[x * kz + z] = w[z] * G[x] * W(x, z);
    TransportResult t = min_divergence_transport(p, w, rho, kx, kz, tol, max_iter);
    if (!t.feasible) return res;  // +inf
    total += qy * t.value;
    for (std::size_t z = 0; z < kz; ++z) {
      if (w[z] <= 0.0) continue;
      for (std::size_t x = 0; x < kx; ++x)
        wit[(y * kz + z) * kx + x] = t.plan[x * kz + z] / w[z];
    }
  }
  res.value = total;
  res.feasible = true;
  res.witness = ConditionalKernel(ky * kz, kx, std::move(wit));
  return res;
}

// Memo for the decoding metric gamma(type(y, z)) = beta - alpha; keyed by
// the flattened joint counts. Safe for concurrent lookups and inserts.
class GammaCache {
 public:
  template <typename Fn>
  double get_or_compute(const std::vector<int>& key, Fn&& compute) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      auto it = map_.find(key);
      if (it != map_.end()) return it->second;
    }
    double v = compute();
    std::lock_guard<std::mutex> lk(mu_);
    return map_.emplace(key, v).first->second;
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lk(mu_);
    return map_.size();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::vector<int>, double> map_;
};

inline double gamma_of(const JointEmpiricalType& qyz, const TypeRegistry& reg,
                       const Distribution& G, const ConditionalKernel& W, GammaCache* cache,
                       double tol = 1e-8) {
  auto compute = [&]() {
    double b = beta_of(qyz, reg, G, W, tol).value;
    if (b == kInf) return kInf;
    return b - alpha_of(qyz.marginal_first(), reg, G);
  };
  if (!cache) return compute();
  return cache->get_or_compute(qyz.counts(), compute);
}

// Approximate maximum-likelihood decoder: minimize gamma over candidates.
// Only sound for strictly positive channels, hence the hard refusal.
inline DecoderDecision decode_approx_ml(const Sequence& z, const std::vector<EnrolledRow>& rows,
                                        const TypeRegistry& reg, const Distribution& G,
                                        const ConditionalKernel& W, GammaCache* cache = nullptr) {
  if (!W.strictly_positive())
    throw InfeasibleError(
        "decode_approx_ml: channel has zero entries; the likelihood surrogate is only valid "
        "for strictly positive channels");
  const std::size_t ky = reg.ky(), kz = W.out_size();
  std::vector<double> metrics(rows.size(), kInf);
  for (std::size_t m = 0; m < rows.size(); ++m) {
    if (rows[m].error_word) continue;
    metrics[m] = gamma_of(empirical_joint(rows[m].y, z, ky, kz), reg, G, W, cache);
  }
  return detail::pick_min(metrics);
}

// Exact maximum likelihood by brute force over the encoder preimages:
// P(z | y) = sum_{x in f^-1(y)} G(x) W(z | x) / P(y). Ties broken by a keyed
// ranking of (y, z) and then lexicographically, a fixed total order shared
// with the bound diagnostics.
inline DecoderDecision decode_exact_ml(const Sequence& z, const std::vector<EnrolledRow>& rows,
                                       const Distribution& G, const ConditionalKernel& W,
                                       const ImageMap& im, std::uint64_t tie_seed) {
  struct Key {
    double neg_like;
    std::uint64_t hash;
    const Sequence* y;
  };
  std::vector<std::optional<Key>> keys(rows.size());
  for (std::size_t m = 0; m < rows.size(); ++m) {
    if (rows[m].error_word) continue;
    auto it = im.preimages.find(rows[m].y);
    if (it == im.preimages.end()) continue;  // unreachable word: sentinel exclusion
    double py = 0.0, pzy = 0.0;
    for (const auto& x : it->second) {
      double gx = 1.0, wx = 1.0;
      for (std::size_t t = 0; t < x.size(); ++t) {
        gx *= G[x[t]];
        wx *= W(x[t], z[t]);
      }
      py += gx;
      pzy += gx * wx;
    }
    if (py <= 0.0) continue;
    keys[m] = Key{-(pzy / py), sequence_hash2(tie_seed, rows[m].y, z, 0x4D4FULL), &rows[m].y};
  }
  DecoderDecision d;
  d.index = -1;
  const Key* best = nullptr;
  for (std::size_t m = 0; m < rows.size(); ++m) {
    if (!keys[m]) continue;
    const Key& k = *keys[m];
    bool better = !best || k.neg_like < best->neg_like ||
                  (k.neg_like == best->neg_like &&
                   (k.hash < best->hash || (k.hash == best->hash && *k.y < *best->y)));
    if (better) {
      best = &k;
      d.index = static_cast<int>(m);
    }
  }
  if (!best) {
    d.failed = true;
    return d;
  }
  int at_best = 0;
  for (const auto& k : keys)
    if (k && k->neg_like == best->neg_like) ++at_best;
  d.tie = at_best > 1;
  d.metric = -best->neg_like;
  return d;
}

struct DecodeContext {
  GammaCache* gamma_cache = nullptr;  // shared across trials for approx_ml
  const ImageMap* image = nullptr;    // preimages for exact_ml; built on demand if absent
  std::uint64_t tie_seed = 0;         // keyed tie-break order for exact_ml
};

// One full identification trial. Enrollment compresses fresh source words;
// the channel always sees the original source word of the chosen user, never
// its quantized version.
inline TrialOutcome run_trial(const SystemConfig& cfg, const LossyEncoder& enc,
                              const std::vector<DecoderId>& decoders, std::mt19937_64& rng,
                              const DecodeContext& ctx = {}) {
  const std::uint64_t m_users = cfg.enrolled_count();
  TrialOutcome out;
  out.rows.reserve(m_users);
  std::vector<Sequence> sources;
  sources.reserve(m_users);
  for (std::uint64_t m = 0; m < m_users; ++m) {
    Sequence x = sample_source(cfg.source, cfg.n, rng);
    auto enc_out = enc.encode(x);
    out.rows.push_back(EnrolledRow{std::move(enc_out.y), enc_out.error_word});
    sources.push_back(std::move(x));
  }
  out.true_index = static_cast<int>(uniform_below(rng, m_users));
  out.x_true = sources[static_cast<std::size_t>(out.true_index)];
  out.encoder_error_word_hit = out.rows[static_cast<std::size_t>(out.true_index)].error_word;
  out.z = transmit(cfg.channel, out.x_true, rng);

  const TypeRegistry& reg = enc.registry();
  std::optional<ImageMap> local_image;
  GammaCache local_cache;
  for (DecoderId d : decoders) {
    switch (d) {
      case DecoderId::universal:
        out.decisions[d] = decode_universal(out.z, out.rows, enc.codebook(), cfg.source, cfg.kz());
        break;
      case DecoderId::mmi:
        out.decisions[d] = decode_mmi(out.z, out.rows, reg.ky(), cfg.kz());
        break;
      case DecoderId::approx_ml:
        out.decisions[d] = decode_approx_ml(out.z, out.rows, reg, cfg.source, cfg.channel,
                                            ctx.gamma_cache ? ctx.gamma_cache : &local_cache);
        break;
      case DecoderId::exact_ml: {
        const ImageMap* im = ctx.image;
        if (!im) {
          if (!local_image) local_image = build_image_map(enc, cfg.brute_cap);
          im = &*local_image;
        }
        out.decisions[d] = decode_exact_ml(out.z, out.rows, cfg.source, cfg.channel, *im,
                                           ctx.tie_seed);
        break;
      }
    }
  }
  return out;
}

}  // namespace vqid
