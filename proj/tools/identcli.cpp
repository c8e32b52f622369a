// Command-line front end: exponent evaluation, Monte Carlo simulation,
// diagnostics, and type-class utilities, driven by INI config files.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vqid/vqid.hpp"

namespace {

using namespace vqid;

// Precedence: --seed flag, then IDENT_SEED env var, then the config value.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& cli_seed,
                           std::uint64_t config_seed) {
  if (cli_seed) return *cli_seed;
  if (const char* env = std::getenv("IDENT_SEED")) {
    try {
      std::size_t pos = 0;
      std::uint64_t v = std::stoull(env, &pos);
      if (pos == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("IDENT_SEED must be an unsigned integer, got: " + std::string(env));
  }
  return config_seed;
}

void print_distribution(const char* label, const Distribution& d) {
  std::printf("%s:", label);
  for (std::size_t i = 0; i < d.size(); ++i) std::printf(" %.6g", d[i]);
  std::printf("\n");
}

void print_kernel(const char* label, const ConditionalKernel& k) {
  std::printf("%s:\n", label);
  for (std::size_t i = 0; i < k.in_size(); ++i) {
    std::printf("  ");
    for (std::size_t j = 0; j < k.out_size(); ++j) std::printf("%.6g ", k(i, j));
    std::printf("\n");
  }
}

nlohmann::json kernel_json(const ConditionalKernel& k) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < k.in_size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < k.out_size(); ++j) row.push_back(k(i, j));
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json exponent_json(const ExponentResult& r) {
  nlohmann::json j;
  j["value"] = r.value == kInf ? nlohmann::json("inf") : nlohmann::json(r.value);
  j["terms"] = {{"source_divergence", r.terms.source_divergence},
                {"inner_divergence", r.terms.inner_divergence},
                {"rate_term", r.terms.rate_term},
                {"i_xy", r.terms.i_xy},
                {"i_yz", r.terms.i_yz}};
  j["qx_witness"] = r.qx_witness.probs();
  j["qzy_witness"] = kernel_json(r.qzy_witness);
  j["mapping_witness"] =
      r.mapping_witness ? kernel_json(*r.mapping_witness) : nlohmann::json(nullptr);
  j["starts_used"] = r.starts_used;
  j["upper_bound"] = r.upper_bound;
  return j;
}

void print_exponent(const char* label, const ExponentResult& r) {
  if (r.value == kInf)
    std::printf("%s: inf\n", label);
  else
    std::printf("%s: %.8f\n", label, r.value);
  std::printf("  terms: source=%.6g inner=%.6g rate=%.6g (I_XY=%.6g, I_YZ=%.6g)\n",
              r.terms.source_divergence, r.terms.inner_divergence, r.terms.rate_term,
              r.terms.i_xy, r.terms.i_yz);
  print_distribution("  optimizing source type", r.qx_witness);
}

int cmd_exponent(const std::string& config_path, std::optional<std::uint64_t> cli_seed,
                 std::optional<double> rate_override, const std::string& mapping_mode,
                 int starts, bool with_minmaxmin, bool with_capacity,
                 const std::string& out_dir) {
  ParsedConfig pc = ParsedConfig::from_file(config_path);
  SystemConfig sc = load_system_config(pc);
  double rate = rate_override ? *rate_override : sc.rate_identification;
  if (rate < 0) throw ConfigError("exponent: rate must be nonnegative");
  ExponentOptions opts;
  opts.seed = resolve_seed(cli_seed, pc.get_u64("experiment", "seed", 1));
  if (starts > 0) opts.starts = starts;

  Mapping mapping;
  if (mapping_mode == "identity") {
    mapping = identity_mapping(sc.ky_or_default());
  } else if (mapping_mode == "policy") {
    auto m = policy_mapping(sc.policy, sc.constraint, sc.source, sc.ky_or_default(), sc.channel);
    if (!m) throw ConfigError("exponent: configured policy has no continuous analogue");
    mapping = *m;
  } else {
    throw ConfigError("exponent: --mapping must be identity or policy");
  }

  ExponentResult fixed = exponent_fixed_mapping(sc.source, sc.channel, mapping, rate, opts);
  ExponentResult dd = exponent_dd(sc.source, sc.channel, mapping, rate, opts);
  std::printf("rate: %.6f nats/symbol\n", rate);
  print_exponent("exponent (fixed mapping)", fixed);
  print_exponent("exponent (decoding-domain rate)", dd);
  if (rate == 0.0 && mapping_mode == "identity") {
    ZeroRateForms z = zero_rate_closed_forms(sc.source);
    std::printf("zero-rate closed forms: fixed=%.8f dd=%.8f\n", z.exponent, z.exponent_dd);
  }

  nlohmann::json j;
  j["rate"] = rate;
  j["mapping"] = mapping_mode;
  j["fixed"] = exponent_json(fixed);
  j["dd"] = exponent_json(dd);

  if (with_minmaxmin) {
    ExponentResult mm = exponent_minmaxmin(sc.source, sc.channel, sc.constraint, rate,
                                           sc.ky_or_default(), opts);
    print_exponent("exponent (worst source over best mapping)", mm);
    if (mm.mapping_witness) print_kernel("  mapping witness", *mm.mapping_witness);
    j["minmaxmin"] = exponent_json(mm);
  }
  if (with_capacity) {
    CapacityResult cap = identification_capacity(sc.source, sc.channel, sc.constraint.rate,
                                                 sc.ky_or_default(), opts);
    std::printf("identification capacity at compression rate %.6f: %.8f\n", sc.constraint.rate,
                cap.value);
    print_kernel("  capacity-achieving mapping", cap.kernel);
    j["capacity"] = {{"value", cap.value}, {"kernel", kernel_json(cap.kernel)}};
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    auto path = (std::filesystem::path(out_dir) / "exponent.json").string();
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path);
    f << j.dump(2) << '\n';
    std::printf("wrote %s\n", path.c_str());
  }
  return 0;
}

int cmd_simulate(const std::string& config_path, std::optional<std::uint64_t> cli_seed,
                 std::optional<std::uint64_t> trials, const std::vector<int>& n_list,
                 const std::vector<std::string>& decoder_names, bool fixed_codebook,
                 const std::string& out_dir) {
  ParsedConfig pc = ParsedConfig::from_file(config_path);
  ExperimentPlan plan = load_experiment_plan(pc);
  plan.seed = resolve_seed(cli_seed, plan.seed);
  if (trials) plan.trials = *trials;
  if (!n_list.empty()) plan.n_list = n_list;
  if (!decoder_names.empty()) {
    plan.decoders.clear();
    for (const auto& nm : decoder_names) plan.decoders.push_back(parse_decoder(nm));
  }
  if (fixed_codebook) plan.fixed_codebook = true;
  if (!out_dir.empty()) plan.out_dir = out_dir;
  plan.validate();

  ExperimentResult r = run_experiment(plan);
  if (r.positivity_warning)
    std::fprintf(stderr,
                 "warning: channel has zero entries; the universal decoder's optimality "
                 "guarantee is proved for strictly positive channels\n");
  std::printf("%-10s %4s %8s %8s %12s %22s %14s\n", "decoder", "n", "trials", "errors", "p_hat",
              "wilson95", "emp_exponent");
  for (const auto& c : r.cells) {
    char ci[40];
    std::snprintf(ci, sizeof(ci), "[%.3g, %.3g]", c.ci_lo, c.ci_hi);
    char expo[24];
    if (c.p_hat > 0)
      std::snprintf(expo, sizeof(expo), "%.4f", c.emp_exponent);
    else
      std::snprintf(expo, sizeof(expo), "inf");
    std::printf("%-10s %4d %8llu %8llu %12.6g %22s %14s\n", to_string(c.decoder), c.n,
                static_cast<unsigned long long>(c.trials),
                static_cast<unsigned long long>(c.errors), c.p_hat, ci, expo);
  }
  for (const auto& [name, reg] : r.regressions) {
    if (reg.defined)
      std::printf("regression %-10s slope=%.4f intercept=%.4f\n", name.c_str(), reg.slope,
                  reg.intercept);
    else
      std::printf("regression %-10s undefined (%s)\n", name.c_str(), reg.note.c_str());
  }
  if (r.exponent_fixed)
    std::printf("predicted exponents: fixed=%.6f dd=%.6f\n", *r.exponent_fixed, *r.exponent_dd);
  else
    std::printf("predicted exponents: %s\n", r.prediction_note.c_str());
  std::printf("wrote %s and %s\n", r.csv_path.c_str(), r.json_path.c_str());
  return 0;
}

int cmd_diagnose_kn(const std::string& config_path, std::optional<std::uint64_t> cli_seed,
                    std::uint64_t trials) {
  ParsedConfig pc = ParsedConfig::from_file(config_path);
  SystemConfig sc = load_system_config(pc);
  std::uint64_t seed = resolve_seed(cli_seed, pc.get_u64("experiment", "seed", 1));
  auto registry = std::make_shared<TypeRegistry>(build_registry(
      sc.n, sc.kx(), sc.ky_or_default(), sc.policy, sc.constraint, sc.source));
  double worst = 0.0, bound = 0.0;
  std::uint64_t violations = 0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    auto cb = std::make_shared<Codebook>(
        build_codebook(registry, derive_seed(seed, 0xC0DE0000ULL ^ t), sc.subcode_cap));
    LossyEncoder enc(cb);
    auto rng = make_engine(seed, 0x7249A1ULL ^ (t << 1));
    std::uint64_t m = sc.enrolled_count();
    std::vector<Sequence> rows;
    rows.reserve(m);
    for (std::uint64_t i = 0; i < m; ++i)
      rows.push_back(enc.encode(sample_source(sc.source, sc.n, rng)).y);
    std::uint64_t who = uniform_below(rng, m);
    Sequence x = sample_source(sc.source, sc.n, rng);
    Sequence z = transmit(sc.channel, x, rng);
    (void)who;
    KnReport rep = kn_diagnostic(rows, z, sc.source, sc.channel, enc,
                                 derive_seed(seed, 0x4D4F54494542ULL), sc.brute_cap);
    bound = rep.bound;
    if (rep.kn > worst) worst = rep.kn;
    if (!rep.within) ++violations;
  }
  std::printf("normalization-sum diagnostic over %llu trials\n",
              static_cast<unsigned long long>(trials));
  std::printf("max K_n = %.6f, bound 1 + n ln(1/G_min) = %.6f, violations = %llu\n", worst,
              bound, static_cast<unsigned long long>(violations));
  return 0;
}

int cmd_diagnose_concentration(const std::string& config_path,
                               std::optional<std::uint64_t> cli_seed, int samples) {
  ParsedConfig pc = ParsedConfig::from_file(config_path);
  SystemConfig sc = load_system_config(pc);
  std::uint64_t seed = resolve_seed(cli_seed, pc.get_u64("experiment", "seed", 1));
  auto cb = std::make_shared<Codebook>(build_codebook(
      std::make_shared<const TypeRegistry>(
          build_registry(sc.n, sc.kx(), sc.ky_or_default(), sc.policy, sc.constraint, sc.source)),
      derive_seed(seed, 0xF1CEDC0DEULL), sc.subcode_cap));
  LossyEncoder enc(cb);
  auto rng = make_engine(seed, 0xC04CE47ULL);
  ConcentrationReport rep =
      concentration_diagnostic(enc, sc.source, samples, samples, rng, sc.brute_cap);
  std::printf("intersection-size window: [%.6g, %.6g]\n", rep.window_lo, rep.window_hi);
  std::printf("source draws: %d examined, %d inside window, %d identity-branch (%.1f%% inside)\n",
              rep.x_samples, rep.x_inside, rep.x_low_entropy, 100.0 * rep.x_fraction);
  if (rep.brute_force)
    std::printf("preimage floor: %d/%d codewords passed (%.1f%%)\n", rep.y_pass, rep.y_samples,
                100.0 * rep.y_fraction);
  else
    std::printf("preimage floor: skipped (source space above brute-force cap)\n");
  return 0;
}

int cmd_diagnose_injectivity(const std::string& config_path) {
  ParsedConfig pc = ParsedConfig::from_file(config_path);
  SystemConfig sc = load_system_config(pc);
  TypeRegistry reg =
      build_registry(sc.n, sc.kx(), sc.ky_or_default(), sc.policy, sc.constraint, sc.source);
  std::size_t identity = 0, repaired = 0;
  std::set<std::vector<int>> distinct_qy;
  for (const auto& e : reg.entries()) {
    if (e.identity_branch) ++identity;
    if (e.repaired) ++repaired;
    distinct_qy.insert(e.qy.counts());
  }
  bool injective = distinct_qy.size() == reg.entries().size();
  std::printf("registered source types: %zu\n", reg.entries().size());
  std::printf("identity-branch entries: %zu, collision-repaired entries: %zu\n", identity,
              repaired);
  std::printf("mapping is injective: %s\n", injective ? "yes" : "NO");
  return injective ? 0 : 1;
}

int cmd_typeclass_enumerate(int n, int k, std::size_t limit) {
  auto types = enumerate_types(n, static_cast<std::size_t>(k));
  std::printf("%zu types of length-%d sequences over a %d-letter alphabet\n", types.size(), n, k);
  for (std::size_t i = 0; i < types.size() && i < limit; ++i) {
    std::printf("  (");
    const auto& c = types[i].counts();
    for (std::size_t j = 0; j < c.size(); ++j)
      std::printf("%s%llu", j ? ", " : "", static_cast<unsigned long long>(c[j]));
    std::printf(")\n");
  }
  if (types.size() > limit) std::printf("  ... (%zu more)\n", types.size() - limit);
  return 0;
}

int cmd_typeclass_count(const std::vector<int>& counts) {
  EmpiricalType t(counts);
  TypeClassSize s = type_class_size(t);
  std::ostringstream os;
  os << s.exact;
  std::printf("type class size: %s (log = %.6f)\n", os.str().c_str(), s.log_size);
  return 0;
}

int cmd_typeclass_sample(const std::vector<int>& counts, int samples,
                         std::optional<std::uint64_t> cli_seed) {
  EmpiricalType t(counts);
  std::uint64_t seed = resolve_seed(cli_seed, 1);
  auto rng = make_engine(seed, 0x5A3D);
  for (int i = 0; i < samples; ++i) {
    Sequence x = sample_from_type_class(t, rng);
    for (std::size_t j = 0; j < x.size(); ++j) std::printf("%s%d", j ? " " : "", int(x[j]));
    std::printf("\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vector-quantized identification: exponents, simulation, diagnostics"};
  app.require_subcommand(1);

  std::string config_path, out_dir, mapping_mode = "policy", diag_kind;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> trials_opt;
  std::optional<double> rate_override;
  std::vector<int> n_list;
  std::vector<std::string> decoder_names;
  bool fixed_codebook = false, with_minmaxmin = false, with_capacity = false;
  int starts = 0, samples = 200, tc_n = 0, tc_k = 0, tc_samples = 10;
  std::size_t tc_limit = 30;
  std::vector<int> tc_counts;
  std::uint64_t diag_trials = 20;

  auto* exp_cmd = app.add_subcommand("exponent", "evaluate error exponents");
  exp_cmd->add_option("--config", config_path, "config file")->required();
  exp_cmd->add_option("--seed", seed, "seed override");
  exp_cmd->add_option("--rate", rate_override, "identification rate override (nats/symbol)");
  exp_cmd->add_option("--mapping", mapping_mode, "identity or policy (default policy)");
  exp_cmd->add_option("--starts", starts, "optimizer start count");
  exp_cmd->add_flag("--minmaxmin", with_minmaxmin, "also optimize over mappings for the worst source");
  exp_cmd->add_flag("--capacity", with_capacity, "also compute identification capacity");
  exp_cmd->add_option("--out", out_dir, "directory for exponent.json");

  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo error-rate estimation");
  sim_cmd->add_option("--config", config_path, "config file")->required();
  sim_cmd->add_option("--seed", seed, "seed override");
  sim_cmd->add_option("--trials", trials_opt, "trial count override");
  sim_cmd->add_option("--n", n_list, "block length list override")->delimiter(',');
  sim_cmd->add_option("--decoders", decoder_names,
                      "decoders: universal mmi approx_ml exact_ml")
      ->delimiter(',');
  sim_cmd->add_flag("--fixed-codebook", fixed_codebook, "share one codebook across trials");
  sim_cmd->add_option("--out", out_dir, "output directory override");

  auto* diag_cmd = app.add_subcommand("diagnose", "sanity diagnostics");
  diag_cmd->add_option("kind", diag_kind, "kn | concentration | injectivity")->required();
  diag_cmd->add_option("--config", config_path, "config file")->required();
  diag_cmd->add_option("--seed", seed, "seed override");
  diag_cmd->add_option("--trials", diag_trials, "trials for the kn diagnostic");
  diag_cmd->add_option("--samples", samples, "samples for the concentration diagnostic");

  auto* tc_cmd = app.add_subcommand("typeclass", "type-class utilities");
  tc_cmd->require_subcommand(1);
  auto* tc_enum = tc_cmd->add_subcommand("enumerate", "list all types");
  tc_enum->add_option("--n", tc_n, "sequence length")->required();
  tc_enum->add_option("--k", tc_k, "alphabet size")->required();
  tc_enum->add_option("--limit", tc_limit, "max types to print");
  auto* tc_count = tc_cmd->add_subcommand("count", "exact type-class size");
  tc_count->add_option("--counts", tc_counts, "occupancy counts")->required()->delimiter(',');
  auto* tc_sample = tc_cmd->add_subcommand("sample", "uniform draws from a type class");
  tc_sample->add_option("--counts", tc_counts, "occupancy counts")->required()->delimiter(',');
  tc_sample->add_option("--samples", tc_samples, "number of draws");
  tc_sample->add_option("--seed", seed, "seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (exp_cmd->parsed())
      return cmd_exponent(config_path, seed, rate_override, mapping_mode, starts, with_minmaxmin,
                          with_capacity, out_dir);
    if (sim_cmd->parsed())
      return cmd_simulate(config_path, seed, trials_opt, n_list, decoder_names, fixed_codebook,
                          out_dir);
    if (diag_cmd->parsed()) {
      if (diag_kind == "kn") return cmd_diagnose_kn(config_path, seed, diag_trials);
      if (diag_kind == "concentration")
        return cmd_diagnose_concentration(config_path, seed, samples);
      if (diag_kind == "injectivity") return cmd_diagnose_injectivity(config_path);
      throw vqid::ConfigError("diagnose: kind must be kn, concentration, or injectivity");
    }
    if (tc_cmd->parsed()) {
      if (tc_enum->parsed()) return cmd_typeclass_enumerate(tc_n, tc_k, tc_limit);
      if (tc_count->parsed()) return cmd_typeclass_count(tc_counts);
      if (tc_sample->parsed()) return cmd_typeclass_sample(tc_counts, tc_samples, seed);
    }
  } catch (const vqid::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const vqid::InfeasibleError& e) {
    std::fprintf(stderr, "infeasible: %s\n", e.what());
    return 3;
  } catch (const vqid::CapExceededError& e) {
    std::fprintf(stderr, "cap exceeded: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
