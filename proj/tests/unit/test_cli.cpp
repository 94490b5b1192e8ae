#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include "lesionforge/io.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {
struct Run {
  int code;
  std::string err;
};

Run cli(const std::string& args, const fs::path& scratch) {
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd = std::string(LESIONFORGE_CLI) + " " + args + " >" +
                          (scratch / "stdout.txt").string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}
}  // namespace

TEST_CASE("cli usage errors") {
  const auto dir = lft::scratch_dir("cli_usage");
  CHECK(cli("--help", dir).code == 0);
  CHECK(cli("train --help", dir).code == 0);
  CHECK(cli("", dir).code == 2);
  CHECK(cli("frobnicate", dir).code == 2);
  const Run r = cli("phantom-gen --healthy 1 --pathological 1 --out x --bogus", dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("--bogus") != std::string::npos);
  CHECK(cli("synthesize --gen missing.lfck --in missing.png --out o", dir).code == 2);
}

TEST_CASE("cli phantom-gen, train, synthesize, evaluate") {
  const auto dir = lft::scratch_dir("cli_flow");
  const auto data = dir / "d";
  std::ofstream(dir / "s.json") << R"({"size": 32, "seed": 3})";
  REQUIRE(cli("phantom-gen --spec " + (dir / "s.json").string() +
                  " --healthy 4 --pathological 4 --out " + data.string(),
              dir).code == 0);
  CHECK(lf::list_images(data / "healthy").size() == 4);
  CHECK(lf::list_images(data / "pathological" / "images").size() == 4);
  CHECK(lf::list_images(data / "pathological" / "masks").size() == 4);
  CHECK(fs::exists(data / "run.json"));

  fs::create_directories(dir / "empty");
  const Run empty = cli("train --data " + (dir / "empty").string() + " --out " + (dir / "r0").string(), dir);
  CHECK(empty.code == 2);
  CHECK(empty.err.find("empty dataset") != std::string::npos);

  // File sets epochs 5, the flag overrides it.
  std::ofstream(dir / "t.json") << R"({"epochs": 5, "decay_start_epoch": 0, "n": 3, "generator_base_channels": 4,
    "res_blocks": 1, "discriminator_base_channels": 4, "image_size": 32, "checkpoint_every": 1})";
  const auto run = dir / "run";
  REQUIRE(cli("train --config " + (dir / "t.json").string() + " --data " + data.string() +
                  " --out " + run.string() + " --epochs 1 --seed 4",
              dir).code == 0);
  std::ifstream rc(run / "config.resolved.json");
  const auto resolved = nlohmann::json::parse(rc);
  CHECK(resolved.at("epochs") == 1);
  CHECK(resolved.at("seed") == 4);
  CHECK(resolved.at("n") == 3);
  CHECK(fs::exists(run / "run.json"));
  const auto gen = run / "checkpoints" / "epoch_0001" / "g_p.lfck";
  REQUIRE(fs::exists(gen));

  const auto img = lf::list_images(data / "healthy").front();
  const auto syn = dir / "syn";
  REQUIRE(cli("synthesize --gen " + gen.string() + " --in " + img.string() + " --out " + syn.string() +
                  " --samples 2 --dropout off",
              dir).code == 0);
  CHECK(lf::load_image(syn / "sample_00.png") == lf::load_image(syn / "sample_01.png"));
  CHECK(fs::exists(syn / "run.json"));
  CHECK(cli("synthesize --gen " + gen.string() + " --in " + img.string() + " --out " + syn.string() +
                " --dropout maybe",
            dir).code == 2);

  const auto masks = data / "pathological" / "masks";
  REQUIRE(cli("evaluate dice --pred " + masks.string() + " --ref " + masks.string() + " --out " +
                  (dir / "ev" / "dice.json").string(),
              dir).code == 0);
  std::ifstream dj(dir / "ev" / "dice.json");
  CHECK(nlohmann::json::parse(dj).at("dice").at("mean") == 1.0);
  CHECK(fs::exists(dir / "ev" / "run.json"));
  CHECK(cli("evaluate hausdorff --pred " + masks.string() + " --ref " + masks.string() + " --out " +
                (dir / "ev2" / "hd.json").string(),
            dir).code == 0);
  CHECK(cli("evaluate dice --pred " + (dir / "nope").string() + " --ref " + masks.string() +
                " --out " + (dir / "ev3" / "d.json").string(),
            dir).code == 2);

  const auto aug = dir / "aug";
  std::ofstream(dir / "a.json") << R"({"ffd": {"steps_per_level": 3}})";
  REQUIRE(cli("augment --gen " + gen.string() + " --data " + data.string() + " --out " + aug.string() +
                  " --k 1 --seed 2 --config " + (dir / "a.json").string(),
              dir).code == 0);
  CHECK(fs::exists(aug / "manifest.json"));
  CHECK(fs::exists(aug / "run.json"));
}
