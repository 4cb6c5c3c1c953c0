#include "doctest_torch.hpp"

#include <map>
#include <set>

#include "einv/error.hpp"
#include "einv/selection.hpp"
#include "../oracles.hpp"
#include "support.hpp"

using namespace einv;

namespace {

std::vector<ModelEmbedding> points(const std::vector<std::vector<float>>& rows) {
  std::vector<ModelEmbedding> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.push_back({oracle::index_id(i), torch::tensor(rows[i], torch::kFloat32), "p"});
  }
  return out;
}

}  // namespace

TEST_SUITE("selection") {
  TEST_CASE("fms matches brute-force greedy farthest point sampling") {
    const auto r = oracle::fms_matches_brute_force(100);
    INFO(r.detail);
    CHECK(r.ok);
    CHECK(r.cases == 100);
  }

  TEST_CASE("fms on a hand example") {
    // Centroid (1.25, 0.25), so (4,0) starts. (0,1) is farthest from it. Running
    // minima are then 1 for (0,0) and sqrt(2) for (1,0).
    const auto e = points({{0, 0}, {1, 0}, {4, 0}, {0, 1}});
    CHECK(fms_select(e, 1) == std::vector<std::string>{"m002"});
    CHECK(fms_select(e, 3) == std::vector<std::string>{"m002", "m003", "m001"});
    CHECK(fms_select(e, 4).size() == 4);
    FmsOptions first;
    first.start_rule = StartRule::first_index;
    CHECK(fms_select(e, 2, first) == std::vector<std::string>{"m000", "m002"});
    FmsOptions explicit_start;
    explicit_start.start = "m003";
    CHECK(fms_select(e, 2, explicit_start) == std::vector<std::string>{"m003", "m002"});
    CHECK_THROWS_AS(fms_select(e, 5), ValidationError);
    CHECK_THROWS_AS(fms_select(e, 0), ValidationError);
  }

  TEST_CASE("ties go to the lowest id") {
    const auto e = points({{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}});
    FmsOptions first;
    first.start_rule = StartRule::first_index;
    // Four points tie at distance 1 from the start.
    CHECK(fms_select(e, 2, first)[1] == "m001");
  }

  TEST_CASE("fms picks at least as spread a set as random selection") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> ud(0, 1);
    std::vector<std::vector<float>> rows(30, std::vector<float>(3));
    for (auto& r : rows)
      for (auto& v : r) v = ud(rng);
    const auto e = points(rows);
    std::vector<std::string> ids;
    for (const auto& x : e) ids.push_back(x.model_id);
    const auto fms = fms_select(e, 4);
    double worse = 0;
    for (std::uint64_t s = 0; s < 50; ++s) {
      if (min_pairwise_distance(e, random_select(ids, 4, s)) > min_pairwise_distance(e, fms)) ++worse;
    }
    CHECK(worse <= 5);
  }

  TEST_CASE("random select is uniform, without replacement and seeded") {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back(oracle::index_id(i));
    std::map<std::string, int> counts;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
      const auto pick = random_select(ids, 3, static_cast<std::uint64_t>(t));
      std::set<std::string> uniq(pick.begin(), pick.end());
      CHECK(uniq.size() == 3);
      for (const auto& p : pick) ++counts[p];
    }
    // Each id lands in a sample with probability 0.3; allow 3 standard deviations.
    const double mean = trials * 0.3, sd = std::sqrt(trials * 0.3 * 0.7);
    for (const auto& [id, n] : counts) CHECK(std::abs(n - mean) <= 3 * sd);
    CHECK(random_select(ids, 4, 77) == random_select(ids, 4, 77));
    CHECK(random_select(ids, 10, 1).size() == 10);
    CHECK_THROWS_AS(random_select(ids, 11, 1), ValidationError);
  }

  TEST_CASE("embeddings and distances") {
    const auto probe = ProbeSet::uniform_noise(1000, 7);
    CHECK(probe.hash == ProbeSet::uniform_noise(1000, 7).hash);
    CHECK(probe.hash != ProbeSet::uniform_noise(1000, 8).hash);
    CHECK(probe.inputs.min().item<float>() >= -1.0f);
    CHECK(probe.inputs.max().item<float>() <= 1.0f);
    const auto a = test::random_model("lenet5", 10, 1), b = test::random_model("lenet5", 10, 2);
    const auto ea = embed_model(*a, probe), eb = embed_model(*b, probe);
    CHECK(ea.vector.numel() == 10000);
    const auto rows = ea.vector.view({1000, 10}).sum(1);
    CHECK(torch::allclose(rows, torch::ones_like(rows), 1e-5, 1e-5));
    CHECK(model_distance(ea, ea) == 0.0);
    CHECK(model_distance(ea, eb) == model_distance(eb, ea));
    const double manual = (ea.vector.to(torch::kFloat64) - eb.vector.to(torch::kFloat64)).norm().item<double>();
    CHECK(model_distance(ea, eb) == doctest::Approx(manual).epsilon(1e-12));
    const std::vector<ModelEmbedding> both{ea, eb};
    const auto d = pairwise_distances(both);
    CHECK(d(0, 1) == d(1, 0));
    CHECK(d(0, 0) == 0.0);
    const auto other = embed_model(*b, ProbeSet::uniform_noise(1000, 8));
    CHECK_THROWS_AS(model_distance(ea, other), ValidationError);
  }
}
