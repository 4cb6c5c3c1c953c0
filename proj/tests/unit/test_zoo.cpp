#include "doctest_torch.hpp"

#include <set>

#include "einv/error.hpp"
#include "einv/zoo.hpp"
#include "support.hpp"

using namespace einv;

TEST_SUITE("zoo") {
  TEST_CASE("disjoint split") {
    const auto data = test::toy_set(103, 1);
    PartitionPlan plan;
    plan.num_models = 4;
    plan.shuffle_seed = 5;
    const auto views = build_partitions(data, plan);
    REQUIRE(views.size() == 4);
    std::set<std::int64_t> seen;
    for (const auto& v : views) {
      CHECK(v.size() == 25);
      for (const auto i : v.indices) CHECK(seen.insert(i).second);
    }
    const auto again = build_partitions(data, plan);
    CHECK(again[2].indices == views[2].indices);
    plan.shuffle_seed = 6;
    CHECK(build_partitions(data, plan)[0].indices != views[0].indices);
  }

  TEST_CASE("bootstrap views are without replacement and differ") {
    const auto data = test::toy_set(50, 1);
    PartitionPlan plan;
    plan.strategy = PartitionStrategy::bootstrap;
    plan.num_models = 3;
    plan.samples_per_model = 20;
    const auto views = build_partitions(data, plan);
    for (const auto& v : views) {
      CHECK(v.size() == 20);
      CHECK(std::set<std::int64_t>(v.indices.begin(), v.indices.end()).size() == 20);
    }
    CHECK(views[0].indices != views[1].indices);
    plan.samples_per_model = 51;
    CHECK_THROWS_AS(build_partitions(data, plan), ValidationError);
  }

  TEST_CASE("snapshot views cover the whole set") {
    const auto data = test::toy_set(30, 1);
    PartitionPlan plan;
    plan.strategy = PartitionStrategy::snapshots;
    plan.num_models = 2;
    for (const auto& v : build_partitions(data, plan)) CHECK(v.size() == 30);
  }

  TEST_CASE("training is seeded and snapshots equal single runs") {
    const auto data = test::toy_set(128, 2);
    const auto view = full_view(data);
    TrainOptions opt;
    opt.batch_size = 32;
    const auto a = train_classifier(view, "lenet5", 2, 3, opt);
    const auto b = train_classifier(view, "lenet5", 2, 3, opt);
    const auto c = train_classifier(view, "lenet5", 2, 4, opt);
    CHECK(a.weights_hash() == b.weights_hash());
    CHECK(a.weights_hash() != c.weights_hash());
    const auto snaps = snapshot_train(view, "lenet5", {1, 2}, 3, opt);
    REQUIRE(snaps.size() == 2);
    CHECK(snaps[1].weights_hash() == a.weights_hash());
    CHECK(snaps[0].weights_hash() == train_classifier(view, "lenet5", 1, 3, opt).weights_hash());
    CHECK(snaps[0].provenance().epoch == 1);
    CHECK_THROWS_AS(snapshot_train(view, "lenet5", {2, 1}, 3, opt), ValidationError);
    CHECK_THROWS_AS(train_classifier(view, "lenet5", 0, 3, opt), ValidationError);
  }

  TEST_CASE("accuracy floor flags without failing") {
    const auto data = test::toy_set(64, 3);
    TrainOptions opt;
    opt.held_out = test::toy_set(64, 4);
    opt.accuracy_floor = 1.01;
    const auto m = train_classifier(full_view(data), "logreg", 1, 1, opt);
    CHECK(m.metadata().value("below_accuracy_floor", false));
    opt.accuracy_floor = 0.0;
    CHECK_FALSE(train_classifier(full_view(data), "logreg", 1, 1, opt).metadata().value("below_accuracy_floor", false));
  }

  TEST_CASE("easy toy problem is learned") {
    TrainOptions opt;
    opt.batch_size = 32;
    const auto m = train_classifier(full_view(test::toy_set(256, 5)), "lenet5", 3, 1, opt);
    const auto held = test::toy_set(200, 6);
    CHECK(m.accuracy(held->images, held->labels) > 0.95);
  }

  TEST_CASE("affine augmentation keeps range and shape") {
    auto gen = make_generator(1);
    const auto x = torch::rand({6, 1, 28, 28}, gen) * 2 - 1;
    const auto y = affine_augment(x, gen);
    CHECK(y.sizes() == x.sizes());
    CHECK(y.min().item<float>() >= -1.0f - 1e-5f);
    CHECK(y.max().item<float>() <= 1.0f + 1e-5f);
    CHECK_FALSE(torch::equal(x, y));
    CHECK(torch::allclose(affine_augment(x, gen, 0, 0, 0), x, 1e-5, 1e-5));
  }

  TEST_CASE("parallel_for keeps every job") {
    std::vector<int> out(17, 0);
    parallel_for(out.size(), 3, [&](std::size_t i) { out[i] = static_cast<int>(i) * 2; });
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == static_cast<int>(i) * 2);
  }

  TEST_CASE("mnist subset loads") {
    const auto train = load_dataset("mnist", Split::train, test::data_dir());
    CHECK(train.size() == 4000);
    CHECK(train.num_classes == 10);
    CHECK(train.images.sizes() == torch::IntArrayRef({4000, 1, 28, 28}));
    CHECK(train.images.min().item<float>() >= -1.0f);
    CHECK(train.hash() == load_dataset("mnist", Split::train, test::data_dir()).hash());
    const auto letters = load_dataset("letters-synth", Split::train, test::data_dir());
    CHECK(letters.labels.max().item<std::int64_t>() <= 25);
    CHECK(letters.labels.min().item<std::int64_t>() >= 0);
  }
}
