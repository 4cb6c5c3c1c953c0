#include "doctest_torch.hpp"

#include <fstream>

#include "einv/artifact.hpp"
#include "einv/error.hpp"
#include "einv/hash.hpp"
#include "einv/manifest.hpp"
#include "einv/matrix.hpp"
#include "support.hpp"

using namespace einv;

TEST_SUITE("core") {
  TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex(std::string_view("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex(std::string_view("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    Sha256 h;
    h.update(std::string_view("a")).update(std::string_view("bc"));
    CHECK(h.hex_digest() == sha256_hex(std::string_view("abc")));
  }

  TEST_CASE("derived seeds are stable and separate streams") {
    CHECK(derive_seed(1, "x") == derive_seed(1, "x"));
    CHECK(derive_seed(1, "x") != derive_seed(1, "y"));
    CHECK(derive_seed(1, "x") != derive_seed(2, "x"));
    CHECK(derive_seed(3, std::uint64_t{0}) != derive_seed(3, std::uint64_t{1}));
    auto a = make_generator(9), b = make_generator(9);
    CHECK(torch::equal(torch::rand({16}, a), torch::rand({16}, b)));
  }

  TEST_CASE("round6") {
    CHECK(round6(0.1234564) == doctest::Approx(0.123456).epsilon(1e-12));
    CHECK(round6(0.1234566) == doctest::Approx(0.123457).epsilon(1e-12));
    CHECK(std::signbit(round6(-1e-9)) == false);
    CHECK(rounded(json{{"a", 1.23456789}, {"b", {2.0000004}}, {"c", 3}}) ==
          json{{"a", 1.234568}, {"b", {2.0}}, {"c", 3}});
  }

  TEST_CASE("assignment on a small matrix") {
    Matrix s(3, 3);
    const double v[] = {1, 2, 3, 2, 4, 6, 3, 6, 9};
    std::copy(std::begin(v), std::end(v), s.data.begin());
    // Any permutation of an outer product of increasing vectors: identity is optimal.
    CHECK(solve_assignment(s, true) == std::vector<long>{0, 1, 2});
    CHECK(solve_assignment(s, false) == std::vector<long>{2, 1, 0});
    Matrix tall(3, 2, 0.0);
    tall(0, 1) = 5;
    tall(2, 0) = 4;
    CHECK(solve_assignment(tall, true) == std::vector<long>{1, -1, 0});
    CHECK(Matrix::from_json(s.to_json()).data == s.data);
  }

  TEST_CASE("artifact round trip and corruption") {
    test::TempDir tmp;
    ArtifactFile f;
    f.kind = ArtifactKind::report;
    f.header = {{"z", 1}, {"a", "x"}};
    f.payload = {std::byte{1}, std::byte{2}, std::byte{3}};
    const auto entry = write_artifact(tmp.path / "a.einv", f);
    CHECK(entry.sha256 == sha256_file(tmp.path / "a.einv"));
    const auto back = read_artifact(tmp.path / "a.einv", entry.sha256);
    CHECK(back.kind == ArtifactKind::report);
    CHECK(back.header == f.header);
    CHECK((back.payload == f.payload));
    CHECK((encode_artifact(f) == encode_artifact(back)));

    auto bytes = read_file_bytes(tmp.path / "a.einv");
    bytes.back() ^= std::byte{0xff};
    write_file_bytes(tmp.path / "a.einv", bytes);
    CHECK_THROWS_AS(read_artifact(tmp.path / "a.einv", entry.sha256), CorruptionError);
    bytes.resize(bytes.size() / 2);
    CHECK_THROWS_AS(decode_artifact(bytes, "half"), CorruptionError);
  }

  TEST_CASE("model save and load keeps logits bit-identical") {
    test::TempDir tmp;
    for (const auto& arch : supported_archs()) {
      const auto m = test::random_model(arch, 10, 4);
      const auto entry = save_model(*m, tmp.path / (arch + ".einv"));
      const auto back = load_model(tmp.path / (arch + ".einv"), entry.sha256);
      CHECK(back.weights_hash() == m->weights_hash());
      CHECK(back.arch_id() == arch);
      auto gen = make_generator(1);
      const auto x = torch::rand({8, 1, 28, 28}, gen) * 2 - 1;
      CHECK(torch::equal(back.predict_logits(x), m->predict_logits(x)));
    }
  }

  TEST_CASE("frozen models reject gradients on their weights") {
    const auto m = test::random_model("lenet5", 10, 2);
    const auto x = torch::rand({2, 1, 28, 28}).requires_grad_(true);
    m->logits(x).sum().backward();
    CHECK(x.grad().defined());
    CHECK(m->current_weights_hash() == m->weights_hash());
  }

  TEST_CASE("permuted outputs") {
    const auto m = test::random_model("logreg", 4, 3);
    const auto p = m->with_permuted_outputs({2, 0, 3, 1}, "p");
    const auto x = torch::rand({5, 1, 28, 28});
    const auto a = m->predict_logits(x), b = p.predict_logits(x);
    CHECK(torch::equal(b.select(1, 0), a.select(1, 2)));
    CHECK(torch::equal(b.select(1, 3), a.select(1, 1)));
    CHECK_THROWS_AS(m->with_permuted_outputs({0, 0, 1, 2}, "bad"), ValidationError);
  }

  TEST_CASE("manifest verify catches a tampered artifact") {
    test::TempDir tmp;
    RunManifest man;
    man.run_id = "r";
    write_text_file(tmp.path / "reports" / "x.json", "{}\n");
    man.record(tmp.path, {(tmp.path / "reports" / "x.json").string(), sha256_file(tmp.path / "reports" / "x.json"),
                          "report"});
    CHECK(man.artifacts.front().path == "reports/x.json");
    man.save(tmp.path);
    const auto back = RunManifest::load(tmp.path);
    CHECK_NOTHROW(back.verify(tmp.path));
    write_text_file(tmp.path / "reports" / "x.json", "{ }\n");
    CHECK_THROWS_AS(back.verify(tmp.path), CorruptionError);
    write_text_file(tmp.path / "manifest.json", "{not json");
    CHECK_THROWS_AS(RunManifest::load(tmp.path), CorruptionError);
  }
}
