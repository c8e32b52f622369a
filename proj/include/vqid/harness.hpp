#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqid/decoders.hpp"
#include "vqid/ensemble.hpp"
#include "vqid/exponents.hpp"
#include "vqid/simulation.hpp"

// Monte Carlo experiment harness: shared trial loops across decoders,
// Wilson intervals, exponent regression over block lengths, the candidate
// normalization-sum diagnostic, and the CSV/JSON experiment writer.

namespace vqid {

struct WilsonInterval {
  double lo = 0.0, hi = 1.0;
};

// 95% Wilson score interval (z = 1.959964).
inline WilsonInterval wilson_interval(std::uint64_t errors, std::uint64_t trials,
                                      double z = 1.959964) {
  WilsonInterval w;
  if (trials == 0) return w;
  double nn = static_cast<double>(trials);
  double p = static_cast<double>(errors) / nn;
  double z2 = z * z;
  double denom = 1.0 + z2 / nn;
  double center = (p + z2 / (2 * nn)) / denom;
  double half = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn)) / denom;
  w.lo = std::max(0.0, center - half);
  w.hi = std::min(1.0, center + half);
  return w;
}

struct ErrorEstimate {
  DecoderId decoder = DecoderId::universal;
  int n = 0;
  std::uint64_t trials = 0;
  std::uint64_t errors = 0;
  double p_hat = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  double emp_exponent = 0.0;  // -ln(p_hat)/n, +inf when no errors were seen
};

struct ExperimentPlan {
  SystemConfig base;
  std::vector<int> n_list;
  std::uint64_t trials = 0;
  std::vector<DecoderId> decoders;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  bool fixed_codebook = false;  // default: fresh codebook draw per trial
  int concentration_samples = 200;

  void validate() const {
    base.validate();
    if (trials < 1) throw ConfigError("plan: trials must be >= 1");
    if (n_list.empty()) throw ConfigError("plan: n_list must not be empty");
    for (std::size_t i = 1; i < n_list.size(); ++i)
      if (n_list[i] <= n_list[i - 1])
        throw ConfigError("plan: n_list must be strictly increasing");
    if (decoders.empty()) throw ConfigError("plan: decoders must not be empty");
    for (DecoderId d : decoders) {
      if (d == DecoderId::exact_ml) {
        for (int n : n_list)
          if (!power_fits(base.kx(), n, base.brute_cap))
            throw ConfigError("plan: exact_ml requires |X|^n within the brute-force cap (n = " +
                              std::to_string(n) + " exceeds it)");
      }
      if (d == DecoderId::approx_ml && !base.channel_positive())
        throw InfeasibleError("plan: approx_ml requires a strictly positive channel");
    }
  }
};

struct TrialSetResult {
  std::vector<ErrorEstimate> estimates;  // aligned with the requested decoders
  int registry_repairs = 0;
  std::uint64_t error_word_trials = 0;  // trials whose true user was flagged
  std::uint64_t decode_failures = 0;    // trials where some decoder failed outright
  std::optional<ConcentrationReport> concentration;  // fixed-codebook mode only
};

// Shared trial loop: every requested decoder sees the same enrollments and
// the same channel outputs, so decoder comparisons difference out the Monte
// Carlo noise. Per-trial randomness derives from (seed, trial index) only.
inline TrialSetResult run_trials_at(const SystemConfig& cfg,
                                    const std::vector<DecoderId>& decoders,
                                    std::uint64_t trials, std::uint64_t seed,
                                    bool fixed_codebook, int concentration_samples = 200) {
  cfg.validate();
  auto registry = std::make_shared<TypeRegistry>(build_registry(
      cfg.n, cfg.kx(), cfg.ky_or_default(), cfg.policy, cfg.constraint, cfg.source));
  TrialSetResult out;
  out.registry_repairs = registry->repair_count();

  bool want_exact = std::find(decoders.begin(), decoders.end(), DecoderId::exact_ml) !=
                    decoders.end();
  GammaCache cache;
  DecodeContext ctx;
  ctx.gamma_cache = &cache;
  ctx.tie_seed = derive_seed(seed, 0x4D4F54494542ULL);

  std::optional<LossyEncoder> fixed_enc;
  std::optional<ImageMap> fixed_image;
  if (fixed_codebook) {
    auto cb = std::make_shared<Codebook>(
        build_codebook(registry, derive_seed(seed, 0xF1CEDC0DEULL), cfg.subcode_cap));
    fixed_enc.emplace(cb);
    if (want_exact) fixed_image = build_image_map(*fixed_enc, cfg.brute_cap);
    auto eng = make_engine(seed, 0xC04CE47ULL);
    out.concentration = concentration_diagnostic(*fixed_enc, cfg.source, concentration_samples,
                                                 concentration_samples, eng, cfg.brute_cap);
  }

  std::vector<std::uint64_t> errors(decoders.size(), 0);
  for (std::uint64_t t = 0; t < trials; ++t) {
    std::optional<LossyEncoder> fresh_enc;
    std::optional<ImageMap> fresh_image;
    const LossyEncoder* enc = nullptr;
    if (fixed_codebook) {
      enc = &*fixed_enc;
      ctx.image = fixed_image ? &*fixed_image : nullptr;
    } else {
      auto cb = std::make_shared<Codebook>(
          build_codebook(registry, derive_seed(seed, 0xC0DE0000ULL ^ t), cfg.subcode_cap));
      fresh_enc.emplace(cb);
      enc = &*fresh_enc;
      if (want_exact) {
        fresh_image = build_image_map(*fresh_enc, cfg.brute_cap);
        ctx.image = &*fresh_image;
      }
    }
    auto rng = make_engine(seed, 0x7249A1ULL ^ (t << 1));
    TrialOutcome outcome = run_trial(cfg, *enc, decoders, rng, ctx);
    if (outcome.encoder_error_word_hit) ++out.error_word_trials;
    for (std::size_t d = 0; d < decoders.size(); ++d) {
      const auto& dec = outcome.decisions.at(decoders[d]);
      if (dec.failed) ++out.decode_failures;
      if (!outcome.correct(decoders[d])) ++errors[d];
    }
  }

  for (std::size_t d = 0; d < decoders.size(); ++d) {
    ErrorEstimate e;
    e.decoder = decoders[d];
    e.n = cfg.n;
    e.trials = trials;
    e.errors = errors[d];
    e.p_hat = static_cast<double>(errors[d]) / static_cast<double>(trials);
    auto ci = wilson_interval(errors[d], trials);
    e.ci_lo = ci.lo;
    e.ci_hi = ci.hi;
    e.emp_exponent = e.p_hat > 0.0 ? -std::log(e.p_hat) / cfg.n : kInf;
    out.estimates.push_back(e);
  }
  return out;
}

// Single-decoder entry point; shares the trial stream with any other
// decoder estimated under the same seed.
inline ErrorEstimate estimate_error_rate(const ExperimentPlan& plan, DecoderId decoder, int n) {
  SystemConfig cfg = plan.base;
  cfg.n = n;
  auto r = run_trials_at(cfg, {decoder}, plan.trials, plan.seed, plan.fixed_codebook,
                         plan.concentration_samples);
  return r.estimates.front();
}

struct RegressionReport {
  bool defined = false;
  std::string note;
  double slope = 0.0;      // empirical exponent estimate, nats per symbol
  double intercept = 0.0;  // -ln p_hat at n = 0 from the fit
  std::vector<double> residuals;
};

// Least-squares fit of -ln(p_hat) against n across block lengths.
inline RegressionReport exponent_regression(const std::vector<ErrorEstimate>& cells) {
  RegressionReport rep;
  std::vector<double> xs, ys;
  for (const auto& c : cells) {
    if (c.p_hat > 0.0) {
      xs.push_back(static_cast<double>(c.n));
      ys.push_back(-std::log(c.p_hat));
    }
  }
  if (xs.size() < 3) {
    rep.note = "need at least 3 block lengths with positive error estimates, have " +
               std::to_string(xs.size());
    return rep;
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(xs.size());
  my /= static_cast<double>(xs.size());
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx <= 0.0) {
    rep.note = "degenerate design: all block lengths equal";
    return rep;
  }
  rep.defined = true;
  rep.slope = sxy / sxx;
  rep.intercept = my - rep.slope * mx;
  for (std::size_t i = 0; i < xs.size(); ++i)
    rep.residuals.push_back(ys[i] - (rep.intercept + rep.slope * xs[i]));
  return rep;
}

struct KnReport {
  double kn = 0.0;
  double bound = 0.0;  // 1 + n log(1 / min positive G)
  bool within = false;
  std::size_t candidates = 0;  // rows with positive marginal mass
};

// Normalization-sum diagnostic: order candidates by exact P(z|y) under the
// keyed tie-break, then K_n = sum a_i / A_i with a_i the candidate marginal
// masses and A_i their running sums. Must stay below 1 + n log(1/G_min).
inline KnReport kn_diagnostic(const std::vector<Sequence>& rows, const Sequence& z,
                              const Distribution& G, const ConditionalKernel& W,
                              const LossyEncoder& enc, std::uint64_t tie_seed,
                              std::uint64_t brute_cap = (std::uint64_t{1} << 24)) {
  ImageMap im = build_image_map(enc, brute_cap);
  struct Cand {
    double a;         // P(y)
    double like;      // P(z|y)
    std::uint64_t h;  // keyed tie-break
    const Sequence* y;
  };
  std::vector<Cand> cands;
  for (const auto& y : rows) {
    auto it = im.preimages.find(y);
    if (it == im.preimages.end()) continue;
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
    cands.push_back({py, pzy / py, sequence_hash2(tie_seed, y, z, 0x4D4FULL), &y});
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.like != b.like) return a.like > b.like;
    if (a.h != b.h) return a.h < b.h;
    return *a.y < *b.y;
  });
  KnReport rep;
  rep.candidates = cands.size();
  double acc = 0.0;
  for (const auto& c : cands) {
    acc += c.a;
    rep.kn += c.a / acc;
  }
  rep.bound = 1.0 + enc.registry().n() * std::log(1.0 / G.min_positive());
  rep.within = rep.kn <= rep.bound + 1e-9;
  return rep;
}

// Continuous analogue of the configured mapping policy, for exponent
// predictions. user_table has no continuous analogue.
inline std::optional<Mapping> policy_mapping(const MappingPolicy& policy,
                                             const CompressionConstraint& con,
                                             const Distribution& G, std::size_t ky,
                                             const ConditionalKernel& channel) {
  if (policy.strategy == MappingStrategy::user_table) return std::nullopt;
  MappingPolicy p = policy;
  if (p.strategy == MappingStrategy::greedy_capacity && !p.channel) p.channel = channel;
  return Mapping([p, con, G, ky](const Distribution& qx) {
    if (p.delta > 0.0 && entropy(qx) < p.identity_threshold())
      return ConditionalKernel::identity(qx.size(), ky);
    return select_test_channel(qx, p, con, G, ky);
  });
}

namespace detail {
inline std::string format_double(double v) {
  if (v == kInf) return "inf";
  if (v == -kInf) return "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}
}  // namespace detail

struct ExperimentResult {
  std::vector<ErrorEstimate> cells;
  std::map<std::string, RegressionReport> regressions;  // keyed by decoder name
  std::optional<double> exponent_fixed;  // E(R_I) prediction
  std::optional<double> exponent_dd;     // decoding-domain prediction
  std::string prediction_note;
  std::string csv_path, json_path;
  bool positivity_warning = false;
};

// Full experiment: every (decoder, n) cell, CSV flushed per cell, JSON
// summary with exponent predictions alongside the empirical regression.
inline ExperimentResult run_experiment(const ExperimentPlan& plan,
                                       const ExponentOptions& eopts = {}) {
  plan.validate();
  namespace fs = std::filesystem;
  fs::create_directories(plan.out_dir);
  ExperimentResult result;
  result.csv_path = (fs::path(plan.out_dir) / "results.csv").string();
  result.json_path = (fs::path(plan.out_dir) / "summary.json").string();

  std::ofstream csv(result.csv_path);
  if (!csv) throw ConfigError("run_experiment: cannot write " + result.csv_path);
  csv << "decoder,n,trials,errors,p_hat,ci_lo,ci_hi,emp_exponent\n";
  csv.flush();

  result.positivity_warning =
      !plan.base.channel_positive() &&
      std::find(plan.decoders.begin(), plan.decoders.end(), DecoderId::universal) !=
          plan.decoders.end();

  nlohmann::json diag;
  diag["registry_repairs"] = nlohmann::json::object();
  for (int n : plan.n_list) {
    SystemConfig cfg = plan.base;
    cfg.n = n;
    TrialSetResult r = run_trials_at(cfg, plan.decoders, plan.trials, plan.seed,
                                     plan.fixed_codebook, plan.concentration_samples);
    diag["registry_repairs"][std::to_string(n)] = r.registry_repairs;
    diag["error_word_trials"][std::to_string(n)] = r.error_word_trials;
    if (r.concentration) {
      const auto& c = *r.concentration;
      diag["concentration"][std::to_string(n)] = {
          {"window_lo", c.window_lo},       {"window_hi", c.window_hi},
          {"x_samples", c.x_samples},       {"x_inside", c.x_inside},
          {"x_fraction", c.x_fraction},     {"x_low_entropy", c.x_low_entropy},
          {"brute_force", c.brute_force},   {"y_samples", c.y_samples},
          {"y_pass", c.y_pass},             {"y_fraction", c.y_fraction}};
    }
    for (const auto& e : r.estimates) {
      result.cells.push_back(e);
      csv << to_string(e.decoder) << ',' << e.n << ',' << e.trials << ',' << e.errors << ','
          << detail::format_double(e.p_hat) << ',' << detail::format_double(e.ci_lo) << ','
          << detail::format_double(e.ci_hi) << ',' << detail::format_double(e.emp_exponent)
          << '\n';
      csv.flush();
    }
  }

  for (DecoderId d : plan.decoders) {
    std::vector<ErrorEstimate> series;
    for (const auto& c : result.cells)
      if (c.decoder == d) series.push_back(c);
    result.regressions[to_string(d)] = exponent_regression(series);
  }

  auto mapping = policy_mapping(plan.base.policy, plan.base.constraint, plan.base.source,
                                plan.base.ky_or_default(), plan.base.channel);
  if (mapping) {
    ExponentResult ef = exponent_fixed_mapping(plan.base.source, plan.base.channel, *mapping,
                                               plan.base.rate_identification, eopts);
    ExponentResult ed = exponent_dd(plan.base.source, plan.base.channel, *mapping,
                                    plan.base.rate_identification, eopts);
    result.exponent_fixed = ef.value;
    result.exponent_dd = ed.value;
  } else {
    result.prediction_note = "user_table policy has no continuous analogue; predictions skipped";
  }

  nlohmann::json j;
  j["seed"] = plan.seed;
  j["trials"] = plan.trials;
  j["fixed_codebook"] = plan.fixed_codebook;
  j["n_list"] = plan.n_list;
  j["rate_identification"] = plan.base.rate_identification;
  j["source"] = plan.base.source.probs();
  {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t x = 0; x < plan.base.channel.in_size(); ++x) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t z = 0; z < plan.base.channel.out_size(); ++z)
        row.push_back(plan.base.channel(x, z));
      rows.push_back(row);
    }
    j["channel"] = rows;
  }
  j["policy"] = {{"strategy", to_string(plan.base.policy.strategy)},
                 {"delta", plan.base.policy.delta},
                 {"epsilon", plan.base.policy.epsilon}};
  j["constraint"] = {{"kind", to_string(plan.base.constraint.kind)},
                     {"rate", plan.base.constraint.rate},
                     {"excess_exponent", plan.base.constraint.excess_exponent},
                     {"s", plan.base.constraint.s},
                     {"lambda", plan.base.constraint.lambda}};
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& e : result.cells) {
    cells.push_back({{"decoder", to_string(e.decoder)},
                     {"n", e.n},
                     {"trials", e.trials},
                     {"errors", e.errors},
                     {"p_hat", e.p_hat},
                     {"ci_lo", e.ci_lo},
                     {"ci_hi", e.ci_hi},
                     {"emp_exponent", e.p_hat > 0.0 ? nlohmann::json(e.emp_exponent)
                                                    : nlohmann::json("inf")}});
  }
  j["cells"] = cells;
  nlohmann::json regs;
  for (const auto& [name, rep] : result.regressions) {
    regs[name] = {{"defined", rep.defined},
                  {"slope", rep.slope},
                  {"intercept", rep.intercept},
                  {"note", rep.note}};
  }
  j["regression"] = regs;
  nlohmann::json pred;
  if (result.exponent_fixed) {
    pred["exponent_fixed_mapping"] = *result.exponent_fixed;
    pred["exponent_dd"] = *result.exponent_dd;
  } else {
    pred["note"] = result.prediction_note;
  }
  j["exponent_predictions"] = pred;
  j["diagnostics"] = diag;
  if (result.positivity_warning)
    j["warnings"] = nlohmann::json::array(
        {"channel has zero entries: the universal decoder's optimality guarantee is proved for "
         "strictly positive channels"});

  std::ofstream js(result.json_path);
  if (!js) throw ConfigError("run_experiment: cannot write " + result.json_path);
  js << j.dump(2) << '\n';
  return result;
}

}  // namespace vqid
