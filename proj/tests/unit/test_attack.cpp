#include "doctest_torch.hpp"

#include <fstream>

#include "einv/attack.hpp"
#include "einv/ensemble.hpp"
#include "einv/error.hpp"
#include "einv/hash.hpp"
#include "../oracles.hpp"
#include "support.hpp"

using namespace einv;

namespace {

AttackConfig tiny_config(AttackMode mode = AttackMode::data_free) {
  AttackConfig c;
  c.mode = mode;
  c.steps = 3;
  c.batch_size = 8;
  c.latent_dim = 16;
  c.generator_width = 8;
  c.alpha1 = 1;
  c.alpha2 = 0.5;
  c.seed = 12;
  if (mode == AttackMode::auxiliary) c.beta2 = 1;
  return c;
}

}  // namespace

TEST_SUITE("attack") {
  TEST_CASE("loss values match hand and scalar computations") {
    const auto r = oracle::loss_values();
    INFO(r.detail);
    CHECK(r.ok);
    CHECK(r.cases > 70);
  }

  TEST_CASE("loss gradients match central differences") {
    const auto r = oracle::loss_gradients();
    INFO(r.detail);
    CHECK(r.ok);
  }

  TEST_CASE("class loss gradient is softmax minus one-hot") {
    auto y = oracle::dtensor({{0.3, -1.2, 2.0}}).set_requires_grad(true);
    class_loss({y}, 1, {{0, 1, 2}}).backward();
    const double e[] = {std::exp(0.3), std::exp(-1.2), std::exp(2.0)};
    const double s = e[0] + e[1] + e[2];
    CHECK(y.grad()[0][0].item<double>() == doctest::Approx(e[0] / s).epsilon(1e-9));
    CHECK(y.grad()[0][1].item<double>() == doctest::Approx(e[1] / s - 1).epsilon(1e-9));
    CHECK(y.grad()[0][2].item<double>() == doctest::Approx(e[2] / s).epsilon(1e-9));
  }

  TEST_CASE("class loss is invariant to a consistent permutation") {
    auto gen = make_generator(3);
    const auto y = torch::randn({6, 5}, gen, torch::kFloat64);
    const std::vector<std::int64_t> perm{3, 0, 4, 1, 2};
    const auto yp = y.index_select(1, torch::tensor(perm));  // output j holds class perm[j]
    std::vector<std::int64_t> map(5);
    for (std::int64_t j = 0; j < 5; ++j) map[perm[j]] = j;
    const auto t = torch::tensor(std::vector<std::int64_t>{0, 1, 2, 3, 4, 0});
    CHECK(class_loss({yp}, t, {map}).item<double>() ==
          doctest::Approx(class_loss({y}, t, {{0, 1, 2, 3, 4}}).item<double>()).epsilon(1e-12));
    CHECK_THROWS_AS(class_loss({y}, 5, {{0, 1, 2, 3, 4}}), ValidationError);
  }

  TEST_CASE("adversarial losses") {
    const auto z = torch::zeros({4}, torch::kFloat64);
    const auto l = adversarial_losses_from_logits(z, z, z);
    CHECK(l.l_d.item<double>() == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
    CHECK(l.l_adv.item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const auto big = torch::full({4}, 30.0, torch::kFloat64);
    CHECK(adversarial_losses_from_logits(big, big, -big).l_adv.item<double>() < 1e-12);
    CHECK(adversarial_losses_from_logits(big, big, -big).l_d.item<double>() < 1e-12);
  }

  TEST_CASE("combined generator loss") {
    AttackConfig c;
    c.alpha1 = 2;
    c.alpha2 = 3;
    c.beta1 = 5;
    c.beta2 = 7;
    c.mode = AttackMode::auxiliary;
    const auto t = [](double v) { return torch::tensor(v, torch::kFloat64); };
    CHECK(combine_generator_loss(c, 2, t(1), t(1), t(1), t(1)).item<double>() == doctest::Approx(5 + 7));
    c.mode = AttackMode::data_free;
    c.beta2 = 0;
    CHECK(combine_generator_loss(c, 1, t(1), t(2), t(3), torch::Tensor()).item<double>() == doctest::Approx(23));
  }

  TEST_CASE("config validation and json") {
    auto c = tiny_config();
    CHECK(AttackConfig::from_json(c.to_json()).to_json() == c.to_json());
    CHECK_THROWS_AS(AttackConfig::from_json({{"alpah1", 1}}), ValidationError);
    c.beta2 = 1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = tiny_config();
    c.alpha1 = -1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
  }

  TEST_CASE("data-free run leaves members untouched and is reproducible") {
    const auto a = test::random_model("lenet5", 10, 1), b = test::random_model("lenet5", 10, 2);
    const auto ens = identity_ensemble({a, b});
    const auto before = std::vector<std::string>{a->weights_hash(), b->weights_hash()};
    const auto r1 = run_attack(ens, tiny_config());
    const auto r2 = run_attack(ens, tiny_config());
    CHECK(a->current_weights_hash() == before[0]);
    CHECK(b->current_weights_hash() == before[1]);
    CHECK(r1.member_hashes == before);
    CHECK(r1.discriminator == nullptr);
    CHECK(r1.trace.size() == 3);
    CHECK(generator_hash(*r1.generator) == generator_hash(*r2.generator));
    for (const auto& row : r1.trace) {
      CHECK(row.l_adv == 0.0f);
      CHECK(row.l_d == 0.0f);
      // Total is the weighted combination of the logged terms, averaged over the two members.
      CHECK(row.l_g_total == doctest::Approx((1 * row.l_oh + 0.5 * row.l_mr + 1 * row.l_class) / 2).epsilon(1e-5));
    }
    auto other = tiny_config();
    other.seed = 13;
    CHECK(generator_hash(*run_attack(ens, other).generator) != generator_hash(*r1.generator));
  }

  TEST_CASE("zero steps returns the initialized generator") {
    const auto ens = identity_ensemble({test::random_model("logreg", 10, 1)});
    auto c = tiny_config();
    c.steps = 0;
    const auto r = run_attack(ens, c);
    CHECK(r.trace.empty());
    CHECK(generator_hash(*r.generator) == generator_hash(*run_attack(ens, c).generator));
  }

  TEST_CASE("auxiliary mode needs data and trains a discriminator") {
    const auto ens = identity_ensemble({test::random_model("lenet5", 10, 1)});
    CHECK_THROWS_AS(run_attack(ens, tiny_config(AttackMode::auxiliary)), ValidationError);
    const auto aux = test::toy_set(32, 4);
    const auto r = run_attack(ens, tiny_config(AttackMode::auxiliary), aux.get());
    CHECK(r.discriminator != nullptr);
    for (const auto& row : r.trace) {
      CHECK(row.l_d > 0.0f);
      CHECK(row.l_adv > 0.0f);
    }
  }

  TEST_CASE("non-finite member weights diverge") {
    auto gen = make_generator(1);
    auto net = make_classifier("logreg", 10, gen);
    {
      torch::NoGradGuard g;
      net->head()->bias.fill_(std::numeric_limits<float>::quiet_NaN());
    }
    const auto ens = identity_ensemble({std::make_shared<const FrozenModel>("nan", net, Provenance{})});
    CHECK_THROWS_AS(run_attack(ens, tiny_config()), AttackDiverged);
  }

  TEST_CASE("generator artifact round trip") {
    test::TempDir tmp;
    const auto ens = identity_ensemble({test::random_model("logreg", 10, 1)});
    const auto r = run_attack(ens, tiny_config());
    const auto entry = save_generator(*r.generator, r.config, tmp.path / "g.einv");
    const auto back = load_generator(tmp.path / "g.einv", entry.sha256);
    CHECK(generator_hash(*back.generator) == generator_hash(*r.generator));
    CHECK(back.config.to_json() == r.config.to_json());
    write_loss_trace(tmp.path / "t.csv", r.trace);
    std::ifstream in(tmp.path / "t.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "step,l_oh,l_mr,l_class,l_adv,l_g_total,l_d");
  }
}
