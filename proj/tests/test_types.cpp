#include <catch2/catch_amalgamated.hpp>

#include <boost/math/distributions/chi_squared.hpp>
#include <map>
#include <set>

#include "oracles.hpp"
#include "vqid/rng.hpp"
#include "vqid/types.hpp"

using namespace vqid;

TEST_CASE("empirical type and joint counting") {
  Sequence x{0, 1, 1, 2, 1, 0};
  EmpiricalType t = empirical_type(x, 3);
  CHECK(t.counts() == std::vector<int>{2, 3, 1});
  CHECK(t.n() == 6);
  Sequence y{1, 1, 0, 0, 1, 0};
  JointEmpiricalType j = empirical_joint(x, y, 3, 2);
  CHECK(j.count(0, 1) == 1);
  CHECK(j.count(1, 1) == 2);
  CHECK(j.count(1, 0) == 1);
  CHECK(j.count(2, 0) == 1);
  CHECK(j.marginal_first().counts() == t.counts());
}

TEST_CASE("type enumeration order and count") {
  auto types = enumerate_types(2, 2);
  REQUIRE(types.size() == 3);
  CHECK(types[0].counts() == std::vector<int>{2, 0});
  CHECK(types[1].counts() == std::vector<int>{1, 1});
  CHECK(types[2].counts() == std::vector<int>{0, 2});

  auto t43 = enumerate_types(4, 3);
  CHECK(t43.size() == 15);  // C(6, 2)
  CHECK(t43.front().counts() == std::vector<int>{4, 0, 0});
  // Deterministic first-coordinate-descending order.
  CHECK(t43[1].counts() == std::vector<int>{3, 1, 0});
  CHECK(t43[2].counts() == std::vector<int>{3, 0, 1});
  CHECK(t43.back().counts() == std::vector<int>{0, 0, 4});

  CHECK(count_compositions(4, 3) == 15);
}

TEST_CASE("enumeration cap is enforced") {
  CHECK_THROWS_AS(enumerate_types(100, 6, 1000), CapExceededError);
}

TEST_CASE("type class sizes match enumeration oracle") {
  EmpiricalType t(std::vector<int>{2, 2});
  TypeClassSize s = type_class_size(t);
  CHECK(s.exact == BigInt(6));
  CHECK(s.log_size == Catch::Approx(std::log(6.0)).epsilon(1e-12));
  CHECK(oracle::count_class_by_enumeration({2, 2}, 4) == 6);

  EmpiricalType t2(std::vector<int>{3, 1, 2});
  CHECK(type_class_size(t2).exact == BigInt(60));
  CHECK(oracle::count_class_by_enumeration({3, 1, 2}, 6) == 60);
}

TEST_CASE("type class sizes partition the sequence space exactly") {
  for (int k = 2; k <= 4; ++k) {
    for (int n = 1; n <= 12; ++n) {
      BigInt total = 0;
      for (const auto& t : enumerate_types(n, static_cast<std::size_t>(k)))
        total += type_class_size(t).exact;
      BigInt expect = 1;
      for (int i = 0; i < n; ++i) expect *= k;
      REQUIRE(total == expect);
    }
  }
}

TEST_CASE("conditional type class size matches enumeration") {
  Sequence x{0, 0, 1, 1};
  JointEmpiricalType j(2, 2, std::vector<int>{1, 1, 1, 1});
  BigInt cnt = conditional_type_class_size(j).exact;
  CHECK(cnt == BigInt(4));
  // Oracle: number of y with joint counts [[1,1],[1,1]] against x.
  long long brute = 0;
  oracle::for_each_seq(2, 4, [&](const oracle::Seq& y) {
    oracle::Seq xs{0, 0, 1, 1};
    if (oracle::joint_counts_of(xs, y, 2, 2) == std::vector<int>{1, 1, 1, 1}) ++brute;
  });
  CHECK(brute == 4);
}

TEST_CASE("log of large class sizes is accurate") {
  // n = 200 binary balanced: compare against lgamma.
  std::vector<int> c{100, 100};
  EmpiricalType t(c);
  double expect = std::lgamma(201.0) - 2 * std::lgamma(101.0);
  CHECK(type_class_size(t).log_size == Catch::Approx(expect).epsilon(1e-10));
}

TEST_CASE("type class sampler is uniform (chi-square at 1e-3)") {
  EmpiricalType t(std::vector<int>{2, 2});
  auto g = make_engine(2024, 5);
  std::map<Sequence, int> freq;
  const int draws = 6000;
  for (int i = 0; i < draws; ++i) {
    Sequence s = sample_from_type_class(t, g);
    REQUIRE(empirical_type(s, 2).counts() == t.counts());
    ++freq[s];
  }
  REQUIRE(freq.size() == 6);
  double stat = 0.0;
  const double expect = draws / 6.0;
  for (const auto& [seq, f] : freq) {
    CHECK(std::abs(f / double(draws) - 1.0 / 6.0) < 0.02);
    stat += (f - expect) * (f - expect) / expect;
  }
  boost::math::chi_squared chi(5);
  CHECK(stat < boost::math::quantile(chi, 0.999));
}

TEST_CASE("same_conditional_type detects matching conditional classes") {
  Sequence z{0, 0, 1, 1};
  Sequence a{0, 1, 0, 1};  // joint with z: one of each pair
  Sequence b{0, 0, 1, 1};  // joint with z: diagonal
  Sequence c{0, 1, 1, 0};  // same joint counts as a
  CHECK(same_conditional_type(a, c, z, 2, 2));
  CHECK_FALSE(same_conditional_type(a, b, z, 2, 2));
  CHECK((oracle::joint_counts_of({0, 1, 0, 1}, {0, 0, 1, 1}, 2, 2) ==
         oracle::joint_counts_of({0, 1, 1, 0}, {0, 0, 1, 1}, 2, 2)));
  CHECK((oracle::joint_counts_of({0, 1, 0, 1}, {0, 0, 1, 1}, 2, 2) !=
         oracle::joint_counts_of({0, 0, 1, 1}, {0, 0, 1, 1}, 2, 2)));
}
