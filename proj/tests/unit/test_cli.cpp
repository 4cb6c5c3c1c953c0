#include "doctest_torch.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "einv/artifact.hpp"
#include "support.hpp"

#ifndef EINV_CLI_PATH
#error "EINV_CLI_PATH must name the einv executable"
#endif

namespace {

int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(EINV_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("exit codes") {
    einv::test::TempDir tmp;
    const auto log = tmp.path / "log.txt";
    const auto out = " --out " + tmp.path.string();
    CHECK(run_cli("--help", log) == 0);
    CHECK(run_cli("experiment presets", log) == 0);
    CHECK(slurp(log).find("table1-datafree") != std::string::npos);
    CHECK(run_cli("--no-such-flag", log) == 2);
    CHECK(run_cli("select fms --k 2", log) == 2);  // --zoo is required
    CHECK(run_cli("synth filter --samples x.einv --keep 2" + out, log) != 0);

    einv::write_text_file(tmp.path / "bad.json", R"({"name": "bad", "zoo": {"num_models": 2, "speed": 1}})");
    CHECK(run_cli("experiment run " + (tmp.path / "bad.json").string() + out, log) == 2);
    CHECK(slurp(log).find("zoo.speed") != std::string::npos);

    einv::write_text_file(tmp.path / "garbage.einv", "definitely not an artifact");
    CHECK(run_cli("synth filter --keep 0.5 --samples " + (tmp.path / "garbage.einv").string() + out, log) == 4);

    // A training stage that fails at run time: the data directory is empty.
    einv::write_text_file(tmp.path / "ok.json",
                          R"({"name": "nodata", "zoo": {"num_models": 2, "epochs": 1}, "seeds": [0]})");
    std::filesystem::create_directories(tmp.path / "empty");
    CHECK(run_cli("experiment run " + (tmp.path / "ok.json").string() + out + " --data-dir " +
                      (tmp.path / "empty").string(),
                  log) == 3);
  }

  TEST_CASE("module commands chain together") {
    einv::test::TempDir tmp;
    const auto log = tmp.path / "log.txt";
    const auto d = tmp.path.string();
    const auto common = " --out " + d + " --data-dir " + einv::test::data_dir().string();
    REQUIRE(run_cli("zoo train --num-models 2 --epochs 1" + common, log) == 0);
    CHECK(std::filesystem::exists(tmp.path / "zoo.json"));
    REQUIRE(run_cli("select fms --zoo " + d + " --k 2 --probe-size 200" + common, log) == 0);
    REQUIRE(run_cli("align --selection " + d + "/selection.json" + common, log) == 0);
    REQUIRE(run_cli("attack run --ensemble " + d + "/ensemble.json --steps 2 --batch-size 8 --name g" + common, log) ==
            0);
    CHECK(std::filesystem::exists(tmp.path / "loss_trace.csv"));
    REQUIRE(run_cli("synth generate --g " + d + "/models/g.einv --per-class 4 --ensemble " + d + "/ensemble.json" +
                        common,
                    log) == 0);
    REQUIRE(run_cli("synth filter --samples " + d + "/samples/samples.einv --keep 0.5" + common, log) == 0);
    CHECK(slurp(log).find("kept 20 of 40") != std::string::npos);

    const auto side = " --data-dir " + einv::test::data_dir().string() + " --num-models 1 --epochs 1 --out ";
    REQUIRE(run_cli("zoo train --arch resnet18-eval --dataset mnist:test" + side + d + "/eva", log) == 0);
    REQUIRE(run_cli("zoo train --arch generic-cnn --dataset natural-patches" + side + d + "/generic", log) == 0);
    const auto model_in = [](const std::filesystem::path& dir) {
      return std::filesystem::directory_iterator(dir / "models")->path().string();
    };
    REQUIRE(run_cli("eval report --samples " + d + "/samples/filtered.einv --eva " + model_in(tmp.path / "eva") +
                        " --generic " + model_in(tmp.path / "generic") + " --ensemble " + d + "/ensemble.json" +
                        common,
                    log) == 0);
    CHECK(slurp(tmp.path / "reports" / "report.csv").find("attack_accuracy,") != std::string::npos);
    // The evaluator may not be one of the attacked models.
    CHECK(run_cli("eval report --samples " + d + "/samples/filtered.einv --eva " + d +
                      "/models/lenet5-part0of2-s0.einv --generic " + model_in(tmp.path / "generic") +
                      " --ensemble " + d + "/ensemble.json" + common,
                  log) == 2);
    CHECK(std::filesystem::exists(tmp.path / "manifest.json"));
  }
}
