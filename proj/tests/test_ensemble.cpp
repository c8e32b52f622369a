#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "vqid/ensemble.hpp"

using namespace vqid;

namespace {

MappingPolicy standard_policy(double delta = 0.3, double eps = 0.02) {
  MappingPolicy p;
  p.strategy = MappingStrategy::identity_if_allowed;
  p.delta = delta;
  p.epsilon = eps;
  return p;
}

CompressionConstraint loose_constraint(double rc = 0.2) {
  CompressionConstraint c;
  c.kind = ConstraintKind::excess_probability;
  c.rate = rc;
  c.excess_exponent = 10.0;  // vicinity covers everything of interest
  return c;
}

}  // namespace

TEST_CASE("compression constraint predicates, all kinds") {
  Distribution G({0.5, 0.5});

  // Inside the vicinity (D small), the rate bound bites.
  Distribution qx({0.5, 0.5});
  ConditionalKernel id = ConditionalKernel::identity(2, 2);  // I = H = ln 2
  CompressionConstraint c1;
  c1.kind = ConstraintKind::expected_length;
  c1.rate = 0.2;
  c1.excess_exponent = 0.1;
  auto r = check_compression_constraint(qx, id, c1, G);
  CHECK_FALSE(r.pass);
  CHECK(r.mutual_info == Catch::Approx(std::log(2.0)));

  c1.rate = 0.8;  // above ln 2
  CHECK(check_compression_constraint(qx, id, c1, G).pass);

  // Outside the vicinity the constraint does not apply.
  Distribution skew({0.99, 0.01});
  CompressionConstraint c2;
  c2.kind = ConstraintKind::excess_probability;
  c2.rate = 0.0;
  c2.excess_exponent = 0.05;  // D((0.99,0.01) || uniform) = 0.636 > 0.05
  CHECK(check_compression_constraint(skew, id, c2, G).pass);
  c2.excess_exponent = 1.0;  // now inside the vicinity, I = H(skew) > 0
  CHECK_FALSE(check_compression_constraint(skew, id, c2, G).pass);
  ConditionalKernel constant({{1.0, 0.0}, {1.0, 0.0}});  // I = 0
  CHECK(check_compression_constraint(skew, constant, c2, G).pass);

  // Exponential moment: I <= (lambda - D) / s.
  CompressionConstraint c3;
  c3.kind = ConstraintKind::exponential_moment;
  c3.s = 2.0;
  c3.lambda = 0.5;
  // uniform qx: D = 0, bound = 0.25 < ln 2.
  CHECK_FALSE(check_compression_constraint(qx, id, c3, G).pass);
  c3.lambda = 2.0;  // bound = 1.0 > ln 2
  CHECK(check_compression_constraint(qx, id, c3, G).pass);
}

TEST_CASE("continuous identity selection blends just enough") {
  Distribution G({0.8, 0.2});
  Distribution qx({0.7, 0.3});
  MappingPolicy pol = standard_policy(0.09, 0.01);  // floor 0.12, threshold 0.3
  CompressionConstraint con = loose_constraint(0.25);
  ConditionalKernel k = select_test_channel(qx, pol, con, G, 2);
  auto jm = joint_measures(JointDistribution::product(qx, k));
  CHECK(jm.h_first_given_second >= pol.entropy_floor() - 1e-9);
  CHECK(jm.mutual_information <= con.rate + 1e-9);
  // Minimality: backing off the blend noticeably should violate a predicate.
  // The blend parameter is recoverable from the off-diagonal mass.
  double lam = 2.0 * k(0, 1);  // identity blended with uniform: off-diag = lam/2
  double back = std::max(0.0, lam - 0.05);
  ConditionalKernel k2 = detail::blend_toward_uniform(ConditionalKernel::identity(2, 2), back);
  if (back > 0.0) CHECK_FALSE(detail::selection_ok(qx, k2, pol, con, G));
}

TEST_CASE("infeasible selection reports why") {
  Distribution G({0.5, 0.5});
  MappingPolicy pol = standard_policy(0.3, 0.02);
  // lambda = 0 with D(qx||G) > 0 makes the mutual-information bound negative,
  // which nothing can satisfy.
  CompressionConstraint con;
  con.kind = ConstraintKind::exponential_moment;
  con.s = 1.0;
  con.lambda = 0.0;
  Distribution qx({0.7, 0.3});
  CHECK_THROWS_AS(select_test_channel(qx, pol, con, G, 2), InfeasibleError);
}

TEST_CASE("user_table lookup, verification, and dimension checks") {
  Distribution G({0.5, 0.5});
  MappingPolicy pol;
  pol.strategy = MappingStrategy::user_table;
  pol.delta = 0.0;
  pol.epsilon = 0.0;
  CompressionConstraint con = loose_constraint(1.0);

  EmpiricalType t(std::vector<int>{3, 1});
  pol.user_table.insert_or_assign(std::vector<int>{3, 1}, ConditionalKernel::uniform(2, 2));
  ConditionalKernel k = select_test_channel(t, pol, con, G, 2);
  CHECK(k(0, 0) == Catch::Approx(0.5));

  EmpiricalType missing(std::vector<int>{2, 2});
  CHECK_THROWS_AS(select_test_channel(missing, pol, con, G, 2), InfeasibleError);

  pol.user_table.insert_or_assign(std::vector<int>{2, 2}, ConditionalKernel::uniform(3, 2));  // wrong input dim
  CHECK_THROWS_AS(select_test_channel(EmpiricalType(std::vector<int>{2, 2}), pol, con, G, 2),
                  ConfigError);

  // A kernel violating the constraint must be rejected with the reason.
  MappingPolicy tight = pol;
  CompressionConstraint con2 = loose_constraint(0.1);
  tight.user_table.insert_or_assign(std::vector<int>{2, 2}, ConditionalKernel::identity(2, 2));  // I = ln 2 > 0.1
  CHECK_THROWS_AS(select_test_channel(EmpiricalType(std::vector<int>{2, 2}), tight, con2, G, 2),
                  InfeasibleError);
}

TEST_CASE("registry covers every type, injectively, with exact predicates") {
  Distribution G({0.8, 0.2});
  MappingPolicy pol = standard_policy();        // delta 0.3, eps 0.02, floor 0.36
  CompressionConstraint con = loose_constraint();  // R_C 0.2 within vicinity
  TypeRegistry reg = build_registry(6, 2, 2, pol, con, G);

  REQUIRE(reg.entries().size() == 7);  // all binary types of n = 6
  std::set<std::vector<int>> qys;
  for (const auto& e : reg.entries()) {
    qys.insert(e.qy.counts());
    int rowsum0 = e.joint.count(0, 0) + e.joint.count(0, 1);
    CHECK(rowsum0 == e.qx.counts()[0]);
    double hx = entropy(e.qx.distribution());
    if (hx < pol.identity_threshold()) {
      CHECK(e.identity_branch);
      CHECK(e.qy.counts() == e.qx.counts());
    } else {
      CHECK_FALSE(e.identity_branch);
      auto jm = joint_measures(e.joint.distribution());
      CHECK(jm.h_first_given_second >= pol.entropy_floor() - 1e-12);
      auto cr = detail::constraint_from_measures(jm.mutual_information,
                                                 divergence(e.qx.distribution(), G), con);
      CHECK(cr.pass);
      CHECK(e.mutual_info == Catch::Approx(jm.mutual_information).margin(1e-12));
      CHECK(e.h_x_given_y == Catch::Approx(jm.h_first_given_second).margin(1e-12));
    }
  }
  CHECK(qys.size() == reg.entries().size());  // injective

  // Round trips through both lookup directions.
  for (const auto& e : reg.entries()) {
    CHECK(reg.by_qx(e.qx).index == e.index);
    CHECK(reg.by_qy(e.qy).index == e.index);
  }
  CHECK(reg.find_by_qx({9, 9}) == nullptr);
}

TEST_CASE("registry repairs deliberate output-type collisions") {
  // Force two source types onto the same target output type via user_table.
  Distribution G({0.5, 0.5});
  MappingPolicy pol;
  pol.strategy = MappingStrategy::user_table;
  pol.delta = 0.0;
  pol.epsilon = 0.0;
  ConditionalKernel to_one({{0.0, 1.0}, {0.0, 1.0}});  // everything to y = 1
  for (int a = 0; a <= 4; ++a) pol.user_table.insert_or_assign(std::vector<int>{a, 4 - a}, to_one);
  CompressionConstraint con = loose_constraint(1.0);

  TypeRegistry reg = build_registry(4, 2, 2, pol, con, G);
  REQUIRE(reg.entries().size() == 5);
  CHECK(reg.repair_count() >= 4);  // only one type keeps (0,4)
  std::set<std::vector<int>> qys;
  for (const auto& e : reg.entries()) qys.insert(e.qy.counts());
  CHECK(qys.size() == 5);
  int repaired = 0;
  for (const auto& e : reg.entries())
    if (e.repaired) ++repaired;
  CHECK(repaired == reg.repair_count());
}

TEST_CASE("subcodebook sizing formula") {
  CHECK(subcodebook_size(5, 0.3, 0.2) == 13);  // ceil(e^{2.5}) = 13
  CHECK(subcodebook_size(1, 0.0, 0.0) == 1);
  CHECK(subcodebook_size(1000, 1.0, 1.0) == ~std::uint64_t{0});  // saturates
}

TEST_CASE("codebook build is deterministic and typed; identity entries empty") {
  Distribution G({0.8, 0.2});
  MappingPolicy pol = standard_policy();
  CompressionConstraint con = loose_constraint();
  auto reg = std::make_shared<TypeRegistry>(build_registry(6, 2, 2, pol, con, G));

  Codebook a = build_codebook(reg, 99);
  Codebook b = build_codebook(reg, 99);
  Codebook c = build_codebook(reg, 100);
  REQUIRE(a.subcodebooks.size() == reg->entries().size());
  bool any_differs = false;
  for (std::size_t i = 0; i < a.subcodebooks.size(); ++i) {
    const auto& e = reg->entries()[i];
    if (e.identity_branch) {
      CHECK(a.subcodebooks[i].empty());
      continue;
    }
    std::uint64_t m = subcodebook_size(6, e.mutual_info, pol.delta);
    CHECK(a.subcodebooks[i].size() == m);
    REQUIRE(a.subcodebooks[i] == b.subcodebooks[i]);
    if (a.subcodebooks[i] != c.subcodebooks[i]) any_differs = true;
    for (const auto& w : a.subcodebooks[i])
      CHECK(empirical_type(w, 2).counts() == e.qy.counts());
  }
  CHECK(any_differs);

  // Tiny cap trips the guard.
  CHECK_THROWS_AS(build_codebook(reg, 99, 1), CapExceededError);
}

TEST_CASE("encoder picks the minimum-rank member of the right class") {
  Distribution G({0.8, 0.2});
  MappingPolicy pol = standard_policy();
  CompressionConstraint con = loose_constraint();
  auto reg = std::make_shared<TypeRegistry>(build_registry(6, 2, 2, pol, con, G));
  auto cb = std::make_shared<Codebook>(build_codebook(reg, 7));
  LossyEncoder enc(cb);

  int checked = 0;
  for_each_sequence(2, 6, [&](const Sequence& x) {
    auto out = enc.encode(x);
    auto out2 = enc.encode(x);
    CHECK(out.y == out2.y);  // deterministic
    const RegistryEntry& e = reg->by_qx(empirical_type(x, 2));
    if (e.identity_branch) {
      CHECK(out.identity);
      CHECK(out.y == x);
      return;
    }
    if (out.error_word) {
      CHECK(out.y == cb->error_word);
      return;
    }
    // Membership and minimality against a manual scan.
    bool in_book = false;
    std::uint64_t best = ~std::uint64_t{0};
    for (const auto& w : cb->subcodebooks[e.index]) {
      if (!(empirical_joint(x, w, 2, 2) == e.joint)) continue;
      best = std::min(best, rank_value(x, w, cb->ranking_seed));
      if (w == out.y) in_book = true;
    }
    REQUIRE(in_book);
    CHECK(rank_value(x, out.y, cb->ranking_seed) == best);
    CHECK(empirical_joint(x, out.y, 2, 2) == e.joint);
    ++checked;
  });
  CHECK(checked > 0);
}

TEST_CASE("encoder emits the flagged error word when the class is missed") {
  // Hand-built codebook: the sub-codebook deliberately contains no member of
  // the conditional class of one input.
  auto reg = std::make_shared<TypeRegistry>(TypeRegistry(2, 2, 2, 0.0, 0.0));
  RegistryEntry e{EmpiricalType(std::vector<int>{1, 1}), EmpiricalType(std::vector<int>{1, 1}),
                  JointEmpiricalType(2, 2, std::vector<int>{0, 1, 1, 0}),  // y = flip(x)
                  false, false};
  reg->add(e);

  Codebook cb;
  cb.registry = reg;
  cb.error_word = Sequence{0, 0};
  cb.subcodebooks = {{Sequence{0, 1}}};
  auto cbp = std::make_shared<const Codebook>(std::move(cb));
  LossyEncoder enc(cbp);

  auto hit = enc.encode(Sequence{1, 0});  // flip is {0,1}, present
  CHECK_FALSE(hit.error_word);
  CHECK(hit.y == Sequence{0, 1});
  auto miss = enc.encode(Sequence{0, 1});  // flip is {1,0}, absent
  CHECK(miss.error_word);
  CHECK(miss.y == Sequence{0, 0});
}

TEST_CASE("rank ranking is uniform over a small class") {
  // Across seeds, each member of T((2,2)) should win the min-rank scan about
  // equally often.
  auto types = std::vector<Sequence>();
  oracle::for_each_seq(2, 4, [&](const oracle::Seq& y) {
    if (oracle::counts_of(y, 2) == std::vector<int>{2, 2})
      types.push_back(Sequence(y.begin(), y.end()));
  });
  REQUIRE(types.size() == 6);
  Sequence x{0, 1, 0, 1};
  std::vector<int> wins(6, 0);
  const int seeds = 6000;
  for (int s = 0; s < seeds; ++s) {
    std::size_t arg = 0;
    std::uint64_t best = ~std::uint64_t{0};
    for (std::size_t i = 0; i < types.size(); ++i) {
      auto r = rank_value(x, types[i], static_cast<std::uint64_t>(s) * 2654435761u + 17);
      if (r < best) {
        best = r;
        arg = i;
      }
    }
    ++wins[arg];
  }
  for (int w : wins) CHECK(std::abs(w / double(seeds) - 1.0 / 6.0) < 0.02);
}

TEST_CASE("inverse image partitions the source space consistently") {
  Distribution G({0.7, 0.3});
  MappingPolicy pol = standard_policy();
  CompressionConstraint con = loose_constraint();
  auto cb = std::make_shared<Codebook>(build_codebook(4, 2, 2, G, pol, con, 21));
  LossyEncoder enc(cb);
  ImageMap im = build_image_map(enc);

  std::size_t total = 0;
  for (const auto& [y, xs] : im.preimages) total += xs.size();
  CHECK(total == 16);

  for_each_sequence(2, 4, [&](const Sequence& x) {
    Sequence y = enc.encode(x).y;
    const auto& pre = im.preimages.at(y);
    CHECK(std::find(pre.begin(), pre.end(), x) != pre.end());
  });

  // inverse_image agrees with the image map.
  for (const auto& [y, xs] : im.preimages) {
    CHECK(inverse_image(y, enc) == xs);
    double mass = 0.0;
    for (const auto& x : xs) {
      double p = 1.0;
      for (Symbol s : x) p *= G[s];
      mass += p;
    }
    CHECK(im.mass_of(y, G) == Catch::Approx(mass).margin(1e-15));
  }

  CHECK_THROWS_AS(build_image_map(enc, 3), CapExceededError);
}

TEST_CASE("delta = 0 with a singleton conditional class echoes or fails") {
  // Identity user_table at delta = 0: H(X|Y) = 0, so the only admissible
  // codeword for x is x itself.
  Distribution G({0.5, 0.5});
  MappingPolicy pol;
  pol.strategy = MappingStrategy::user_table;
  pol.delta = 0.0;
  pol.epsilon = 0.0;
  for (int a = 0; a <= 4; ++a) pol.user_table.insert_or_assign(std::vector<int>{a, 4 - a}, ConditionalKernel::identity(2, 2));
  CompressionConstraint con = loose_constraint(1.0);
  auto cb = std::make_shared<Codebook>(build_codebook(4, 2, 2, G, pol, con, 3));
  LossyEncoder enc(cb);
  int echoes = 0, misses = 0;
  for_each_sequence(2, 4, [&](const Sequence& x) {
    auto out = enc.encode(x);
    if (out.error_word) {
      ++misses;
    } else {
      CHECK(out.y == x);
      ++echoes;
    }
  });
  CHECK(echoes + misses == 16);
  CHECK(echoes > 0);
}

TEST_CASE("codebook serialization round-trips byte-identically") {
  Distribution G({0.8, 0.2});
  MappingPolicy pol = standard_policy();
  CompressionConstraint con = loose_constraint();
  Codebook cb = build_codebook(6, 2, 2, G, pol, con, 12345);

  std::ostringstream os(std::ios::binary);
  save_codebook(cb, os);
  std::string bytes = os.str();
  REQUIRE(bytes.size() > 16);

  std::istringstream is(bytes, std::ios::binary);
  Codebook back = load_codebook(is);
  CHECK(back.build_seed == cb.build_seed);
  CHECK(back.ranking_seed == cb.ranking_seed);
  CHECK(back.registry->n() == cb.registry->n());
  CHECK(back.registry->delta() == cb.registry->delta());
  REQUIRE(back.subcodebooks.size() == cb.subcodebooks.size());
  for (std::size_t i = 0; i < cb.subcodebooks.size(); ++i) {
    REQUIRE(back.subcodebooks[i] == cb.subcodebooks[i]);
    const auto& e1 = cb.registry->entries()[i];
    const auto& e2 = back.registry->entries()[i];
    CHECK(e1.qx.counts() == e2.qx.counts());
    CHECK(e1.qy.counts() == e2.qy.counts());
    CHECK(e1.joint.counts() == e2.joint.counts());
    CHECK(e1.identity_branch == e2.identity_branch);
    CHECK(e1.mutual_info == Catch::Approx(e2.mutual_info).margin(1e-12));
  }

  std::ostringstream os2(std::ios::binary);
  save_codebook(back, os2);
  CHECK(os2.str() == bytes);

  // Truncation is detected.
  std::istringstream bad(bytes.substr(0, bytes.size() / 2), std::ios::binary);
  CHECK_THROWS_AS(load_codebook(bad), ConfigError);

  // Encoders built from both behave identically.
  auto ea = LossyEncoder(std::make_shared<const Codebook>(cb));
  auto eb = LossyEncoder(std::make_shared<const Codebook>(back));
  for_each_sequence(2, 6, [&](const Sequence& x) { CHECK(ea.encode(x).y == eb.encode(x).y); });
}

TEST_CASE("concentration diagnostic populates a sane report") {
  Distribution G({0.5, 0.5});
  MappingPolicy pol = standard_policy(0.15, 0.05);
  CompressionConstraint con = loose_constraint(0.1);
  auto cb = std::make_shared<Codebook>(build_codebook(12, 2, 2, G, pol, con, 5));
  LossyEncoder enc(cb);
  auto rng = make_engine(5, 99);
  ConcentrationReport rep = concentration_diagnostic(enc, G, 60, 40, rng);
  CHECK(rep.n == 12);
  CHECK(rep.window_lo == Catch::Approx(std::exp(12 * 0.10)));
  CHECK(rep.window_hi == Catch::Approx(std::exp(12 * 0.20)));
  CHECK(rep.x_samples + rep.x_low_entropy == 60);
  CHECK(rep.x_counts.size() == static_cast<std::size_t>(rep.x_samples));
  CHECK(rep.x_fraction >= 0.0);
  CHECK(rep.x_fraction <= 1.0);
  CHECK(rep.brute_force);  // 2^12 under the default cap
  CHECK(rep.y_samples > 0);
}
