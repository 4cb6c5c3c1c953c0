#include "doctest_torch.hpp"

#include "einv/correspondence.hpp"
#include "einv/error.hpp"
#include "../oracles.hpp"
#include "support.hpp"

using namespace einv;

TEST_SUITE("correspondence") {
  TEST_CASE("matching equals exhaustive assignment") {
    const auto r = oracle::matching_matches_exhaustive(50);
    INFO(r.detail);
    CHECK(r.ok);
    CHECK(r.cases == 50);
  }

  TEST_CASE("permuted copies are recovered exactly") {
    const auto r = oracle::permuted_copy_recovery(20);
    INFO(r.detail);
    CHECK(r.ok);
    CHECK(r.cases == 20);
  }

  TEST_CASE("threshold demotes weak pairs") {
    Matrix s(3, 3, 0.0);
    s(0, 1) = 0.9;
    s(1, 0) = 0.8;
    s(2, 2) = 0.05;
    const auto r = match_classes(s, 0.1);
    REQUIRE(r.pairs.size() == 2);
    CHECK(r.pairs[0].a == 0);
    CHECK(r.pairs[0].b == 1);
    CHECK(r.pairs[1].a == 1);
    CHECK(r.pairs[1].b == 0);
    CHECK(r.unmatched_a == std::vector<std::int64_t>{2});
    CHECK(r.unmatched_b == std::vector<std::int64_t>{2});
    CHECK(match_classes(Matrix(3, 3, 0.0), 0.1).pairs.empty());
    Matrix bad(1, 1, std::nan(""));
    CHECK_THROWS_AS(match_classes(bad, 0.0), ValidationError);
  }

  TEST_CASE("greedy differs from optimal where it should") {
    Matrix s(2, 2);
    s(0, 0) = 10;
    s(0, 1) = 9;
    s(1, 0) = 9;
    s(1, 1) = 0;
    CHECK(match_classes(s, -1, MatchAlgorithm::greedy).pairs[0].b == 0);
    CHECK(match_classes(s, -1, MatchAlgorithm::optimal).pairs[0].b == 1);
  }

  TEST_CASE("null threshold by hand") {
    Matrix s(2, 2);
    s.data = {0.1, -0.2, 0.3, -0.4};
    // |scores| sorted 0.1..0.4; the 95th percentile interpolates at position 2.85.
    CHECK(null_threshold(s) == doctest::Approx(3 * (0.3 + 0.85 * 0.1)).epsilon(1e-12));
    CHECK(null_threshold(s, 1.0, 1.0) == doctest::Approx(0.4));
    CHECK_THROWS_AS(null_threshold(Matrix()), ValidationError);
  }

  TEST_CASE("covariance matrix against a direct computation") {
    const auto a = test::random_model("lenet5", 10, 11), b = test::random_model("lenet5", 10, 12);
    auto gen = make_generator(2);
    const auto probe = torch::rand({200, 1, 28, 28}, gen) * 2 - 1;
    const auto cov = covariance_matrix(*a, *b, probe);
    const auto pa = a->predict_probabilities(probe).to(torch::kFloat64);
    const auto pb = b->predict_probabilities(probe).to(torch::kFloat64);
    for (const auto& [p, q] : {std::pair{0, 0}, std::pair{3, 7}, std::pair{9, 1}}) {
      const auto x = pa.select(1, p), y = pb.select(1, q);
      const double want = ((x - x.mean()) * (y - y.mean())).sum().item<double>() / 199.0;
      CHECK(cov(p, q) == doctest::Approx(want).epsilon(1e-9));
    }
    const auto corr = covariance_matrix(*a, *a, probe, ScoreKind::correlation);
    for (std::size_t i = 0; i < 10; ++i) CHECK(corr(i, i) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK_THROWS_AS(covariance_matrix(*a, *b, probe.slice(0, 0, 99)), ValidationError);
  }

  TEST_CASE("align ensemble maps canonical classes through the inverse permutation") {
    const auto ref = test::random_model("lenet5", 10, 21, "ref");
    const std::vector<std::int64_t> perm{4, 7, 0, 9, 1, 3, 8, 2, 6, 5};
    const auto member = std::make_shared<const FrozenModel>(ref->with_permuted_outputs(perm, "member"));
    auto gen = make_generator(3);
    const auto probe = torch::rand({500, 1, 28, 28}, gen) * 2 - 1;
    const auto r = align_ensemble({ref, member}, *ref, probe, {});
    CHECK(r.ensemble.shared_class_count == 10);
    for (std::int64_t c = 0; c < 10; ++c) {
      CHECK(r.ensemble.class_maps[0][c] == c);
      CHECK(perm[r.ensemble.class_maps[1][c]] == c);
    }
    CHECK(r.per_member.size() == 2);
  }
}
