#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "vqid/config.hpp"
#include "vqid/harness.hpp"

using namespace vqid;

namespace {

const char* kIni = R"(
# demo system
[source]
probs = 0.8 0.2

[channel]
row0 = 0.9 0.1
row1 = 0.2 0.8

[system]
n = 6
rate_identification = 0.25

[policy]
strategy = identity_if_allowed
delta = 0.3
epsilon = 0.02

[constraint]
kind = excess_probability
rate = 0.2
excess_exponent = 10

[experiment]
n_list = 4 6
trials = 25
decoders = universal mmi
seed = 9
out_dir = harness_out
)";

}  // namespace

TEST_CASE("Wilson interval matches hand-computed reference values") {
  auto a = wilson_interval(0, 100);
  CHECK(a.lo == Catch::Approx(0.0).margin(1e-12));
  CHECK(a.hi == Catch::Approx(0.0369935).margin(1e-6));
  auto b = wilson_interval(5, 100);
  CHECK(b.lo == Catch::Approx(0.0215436).margin(1e-6));
  CHECK(b.hi == Catch::Approx(0.1117505).margin(1e-6));
  auto c = wilson_interval(100, 100);
  CHECK(c.hi == Catch::Approx(1.0).margin(1e-12));
  CHECK(c.lo == Catch::Approx(1.0 - a.hi).margin(1e-9));
}

TEST_CASE("exponent regression recovers an exact exponential decay") {
  std::vector<ErrorEstimate> cells;
  for (int n : {4, 8, 12, 16}) {
    ErrorEstimate e;
    e.n = n;
    e.trials = 1000;
    e.p_hat = std::exp(-(0.3 * n + 0.5));
    e.errors = 1;  // irrelevant to the fit; p_hat drives it
    cells.push_back(e);
  }
  auto rep = exponent_regression(cells);
  REQUIRE(rep.defined);
  CHECK(rep.slope == Catch::Approx(0.3).margin(1e-10));
  CHECK(rep.intercept == Catch::Approx(0.5).margin(1e-9));
  for (double r : rep.residuals) CHECK(std::abs(r) < 1e-9);

  cells.resize(2);
  auto small = exponent_regression(cells);
  CHECK_FALSE(small.defined);
  CHECK(small.note.find("3") != std::string::npos);

  // Zero-error cells are dropped, not treated as infinite.
  ErrorEstimate zero;
  zero.n = 20;
  zero.p_hat = 0.0;
  std::vector<ErrorEstimate> with_zero = {cells[0], cells[1], zero};
  CHECK_FALSE(exponent_regression(with_zero).defined);
}

TEST_CASE("normalization-sum diagnostic stays within its bound") {
  Distribution G({0.8, 0.2});
  MappingPolicy pol;
  pol.delta = 0.3;
  pol.epsilon = 0.02;
  CompressionConstraint con;
  con.kind = ConstraintKind::excess_probability;
  con.rate = 0.2;
  con.excess_exponent = 10.0;
  auto reg = std::make_shared<TypeRegistry>(build_registry(6, 2, 2, pol, con, G));
  auto cb = std::make_shared<Codebook>(build_codebook(reg, 5));
  LossyEncoder enc(cb);

  auto g = make_engine(8, 8);
  std::vector<Sequence> rows;
  for (int m = 0; m < 12; ++m) {
    auto out = enc.encode(sample_source(G, 6, g));
    if (!out.error_word) rows.push_back(out.y);
  }
  Sequence z = sample_source(G, 6, g);
  ConditionalKernel W({{0.9, 0.1}, {0.2, 0.8}});
  KnReport rep = kn_diagnostic(rows, z, G, W, enc, 1234);
  CHECK(rep.bound == Catch::Approx(1.0 + 6.0 * std::log(1.0 / 0.2)).margin(1e-12));
  CHECK(rep.candidates <= rows.size());
  if (rep.candidates > 0) CHECK(rep.kn >= 1.0 - 1e-12);
  CHECK(rep.within);
  CHECK(rep.kn <= rep.bound + 1e-9);
}

TEST_CASE("trial batches are deterministic and decoder-stream independent") {
  ParsedConfig pc = ParsedConfig::from_string(kIni);
  SystemConfig cfg = load_system_config(pc);

  auto both = run_trials_at(cfg, {DecoderId::universal, DecoderId::mmi}, 40, 11, false);
  auto both2 = run_trials_at(cfg, {DecoderId::universal, DecoderId::mmi}, 40, 11, false);
  REQUIRE(both.estimates.size() == 2);
  CHECK(both.estimates[0].errors == both2.estimates[0].errors);
  CHECK(both.estimates[1].errors == both2.estimates[1].errors);

  // The trial stream does not depend on which decoders are attached: the
  // single-decoder run reproduces the same universal error count.
  auto solo = run_trials_at(cfg, {DecoderId::universal}, 40, 11, false);
  REQUIRE(solo.estimates.size() == 1);
  CHECK(solo.estimates[0].errors == both.estimates[0].errors);

  // Different seed, different stream (overwhelmingly likely to differ in
  // x_true draws; compare full outcome via error counts of a longer run).
  auto other = run_trials_at(cfg, {DecoderId::universal}, 40, 12, false);
  CHECK(other.estimates[0].trials == 40);
}

TEST_CASE("fixed-codebook mode reports a concentration diagnostic") {
  ParsedConfig pc = ParsedConfig::from_string(kIni);
  SystemConfig cfg = load_system_config(pc);
  auto r = run_trials_at(cfg, {DecoderId::mmi}, 10, 3, true, 40);
  REQUIRE(r.concentration.has_value());
  CHECK(r.concentration->x_samples + r.concentration->x_low_entropy == 40);
  auto r2 = run_trials_at(cfg, {DecoderId::mmi}, 10, 3, true, 40);
  CHECK(r.estimates[0].errors == r2.estimates[0].errors);
  CHECK(r.concentration->x_inside == r2.concentration->x_inside);
}

TEST_CASE("config parser round-trips the system and experiment sections") {
  ParsedConfig pc = ParsedConfig::from_string(kIni, "demo.ini");
  SystemConfig sc = load_system_config(pc);
  CHECK(sc.source[0] == Catch::Approx(0.8));
  CHECK(sc.channel(1, 0) == Catch::Approx(0.2));
  CHECK(sc.n == 6);
  CHECK(sc.rate_identification == Catch::Approx(0.25));
  CHECK(sc.policy.delta == Catch::Approx(0.3));
  CHECK(sc.constraint.kind == ConstraintKind::excess_probability);
  CHECK(sc.constraint.excess_exponent == Catch::Approx(10.0));

  ExperimentPlan plan = load_experiment_plan(pc);
  CHECK(plan.n_list == std::vector<int>{4, 6});
  CHECK(plan.trials == 25);
  REQUIRE(plan.decoders.size() == 2);
  CHECK(plan.decoders[0] == DecoderId::universal);
  CHECK(plan.decoders[1] == DecoderId::mmi);
  CHECK(plan.seed == 9);
  CHECK(plan.out_dir == "harness_out");
}

TEST_CASE("config parser reports the offending line") {
  try {
    ParsedConfig::from_string("[source]\nprobs 0.5 0.5\n", "bad.ini");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    CHECK(msg.find("bad.ini:2") != std::string::npos);
  }
  CHECK_THROWS_AS(ParsedConfig::from_string("key = 1\n"), ConfigError);
  CHECK_THROWS_AS(ParsedConfig::from_string("[sec\nx = 1\n"), ConfigError);

  ParsedConfig pc = ParsedConfig::from_string("[policy]\nstrategy = user_table\n[source]\n"
                                              "probs = 0.5 0.5\n[channel]\nrow0 = 1 0\n"
                                              "row1 = 0 1\n[system]\nn = 4\n"
                                              "rate_identification = 0.1\n[constraint]\n"
                                              "kind = excess_probability\nrate = 0.2\n");
  CHECK_THROWS_AS(load_system_config(pc), ConfigError);
}

TEST_CASE("experiment runner writes the CSV and JSON outputs") {
  namespace fs = std::filesystem;
  ParsedConfig pc = ParsedConfig::from_string(kIni);
  ExperimentPlan plan = load_experiment_plan(pc);
  plan.trials = 15;
  plan.n_list = {4};
  plan.out_dir = "harness_out_test";
  fs::remove_all(plan.out_dir);

  ExponentOptions eopts;
  eopts.starts = 6;
  eopts.max_iters = 80;
  ExperimentResult res = run_experiment(plan, eopts);
  REQUIRE(fs::exists(res.csv_path));
  REQUIRE(fs::exists(res.json_path));
  CHECK(res.cells.size() == 2);

  std::ifstream csv(res.csv_path);
  std::string header;
  std::getline(csv, header);
  CHECK(header == "decoder,n,trials,errors,p_hat,ci_lo,ci_hi,emp_exponent");
  int rows = 0;
  std::string line;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);

  std::ifstream js(res.json_path);
  nlohmann::json j = nlohmann::json::parse(js);
  CHECK(j["seed"] == 9);
  CHECK(j["cells"].size() == 2);
  CHECK(j["regression"].contains("universal"));
  CHECK(j["exponent_predictions"].contains("exponent_fixed_mapping"));
  REQUIRE(res.exponent_fixed.has_value());
  REQUIRE(res.exponent_dd.has_value());
  CHECK(*res.exponent_dd <= *res.exponent_fixed + 1e-6);
  CHECK_FALSE(res.positivity_warning);
}

TEST_CASE("experiment plans validate decoder prerequisites") {
  ParsedConfig pc = ParsedConfig::from_string(kIni);
  ExperimentPlan plan = load_experiment_plan(pc);
  plan.decoders = {DecoderId::exact_ml};
  plan.base.brute_cap = 4;  // 2^4 = 16 > 4 even at the smallest n
  CHECK_THROWS_AS(plan.validate(), ConfigError);

  ExperimentPlan plan2 = load_experiment_plan(pc);
  plan2.n_list = {6, 4};
  CHECK_THROWS_AS(plan2.validate(), ConfigError);

  ExperimentPlan plan3 = load_experiment_plan(pc);
  plan3.decoders = {DecoderId::approx_ml};
  plan3.base.channel = ConditionalKernel::identity(2, 2);
  CHECK_THROWS_AS(plan3.validate(), InfeasibleError);
}

TEST_CASE("continuous policy mapping mirrors the registry construction") {
  Distribution G({0.8, 0.2});
  MappingPolicy pol;
  pol.delta = 0.3;
  pol.epsilon = 0.02;
  CompressionConstraint con;
  con.kind = ConstraintKind::excess_probability;
  con.rate = 0.2;
  con.excess_exponent = 10.0;
  auto m = policy_mapping(pol, con, G, 2, ConditionalKernel::identity(2, 2));
  REQUIRE(m.has_value());

  // Low-entropy source law: identity kernel.
  Distribution spiky({0.98, 0.02});
  REQUIRE(entropy(spiky) < pol.identity_threshold());
  ConditionalKernel k = (*m)(spiky);
  CHECK(k(0, 0) == Catch::Approx(1.0));
  CHECK(k(1, 1) == Catch::Approx(1.0));

  // High-entropy law: a genuine test channel meeting the entropy floor.
  Distribution flat({0.5, 0.5});
  ConditionalKernel k2 = (*m)(flat);
  auto jm = joint_measures(JointDistribution::product(flat, k2));
  CHECK(jm.h_first_given_second >= pol.entropy_floor() - 1e-9);

  MappingPolicy ut;
  ut.strategy = MappingStrategy::user_table;
  CHECK_FALSE(policy_mapping(ut, con, G, 2, ConditionalKernel::identity(2, 2)).has_value());
}
