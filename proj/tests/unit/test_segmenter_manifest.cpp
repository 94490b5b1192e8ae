#include <doctest.h>

#include <fstream>

#include "lesionforge/manifest.hpp"
#include "lesionforge/metrics.hpp"
#include "lesionforge/phantom.hpp"
#include "lesionforge/segmenter.hpp"
#include "test_util.hpp"

using namespace lf;

namespace {
std::vector<PathologicalItem> items(int first, int n) {
  phantom::PhantomSpec spec;
  spec.size = 32;
  std::vector<PathologicalItem> out;
  for (int i = first; i < first + n; ++i) {
    const auto p = phantom::add_lesions(phantom::gen_healthy(spec, i), spec, i);
    out.push_back({"s" + std::to_string(i), p.image, p.lesion});
  }
  return out;
}
}  // namespace

TEST_CASE("segmenter learns phantom lesions") {
  SegmenterConfig cfg;
  cfg.iterations = 300;
  Segmenter seg(cfg, 1);
  Rng rng(1);
  const auto loss = seg.fit(items(0, 4), rng);
  REQUIRE(loss.size() == 300);
  double first = 0, last = 0;
  for (int i = 0; i < 20; ++i) first += loss[i], last += loss[loss.size() - 1 - i];
  CHECK(last < 0.7 * first);
  double d = 0;
  for (const auto& t : items(50, 4)) d += dice(seg.predict(t.image), t.mask);
  CHECK(d / 4 > 0.3);
}

TEST_CASE("seg experiment table") {
  SegExperimentConfig cfg;
  cfg.fractions = {1.0, 0.5};
  cfg.seeds = 2;
  cfg.segmenter.iterations = 20;
  const auto res = run_seg_experiment(cfg, items(0, 2), items(10, 2), items(20, 3));
  CHECK(res.arms.size() == 4);
  CHECK(res.comparisons.size() == 2);
  for (const auto& arm : res.arms) {
    CHECK(arm.subject_dice.size() == 3);
    CHECK(arm.seed_dice.size() == 2);
    CHECK(arm.n_real == (arm.fraction == 1.0 ? 2 : 1));
    CHECK(arm.n_synthetic == (arm.arm == "real" ? 0 : arm.n_real));
  }
  const std::string csv = res.to_csv();
  CHECK(csv.find("real+synthetic") != std::string::npos);
  CHECK(res.to_json().at("arms").size() == 4);

  cfg.fractions = {0.1};
  CHECK_THROWS_AS(run_seg_experiment(cfg, items(0, 2), {}, items(20, 1)), InputError);
  cfg.fractions = {1.5};
  CHECK_THROWS_AS(validate(cfg), InputError);
}

TEST_CASE("run manifest") {
  const auto dir = lft::scratch_dir("manifest");
  std::ofstream(dir / "in.txt") << "abc";
  CHECK(sha256_bytes("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_path(dir / "in.txt") == sha256_bytes("abc"));
  RunManifest m("unit");
  m.set_config({{"a", 1}});
  m.add_seed("main", 7);
  m.add_input(dir / "in.txt");
  m.add_artifact(dir / "out");
  const auto path = m.write(dir);
  std::ifstream in(path);
  const auto j = nlohmann::json::parse(in);
  CHECK(j.at("command") == "unit");
  CHECK(j.at("seeds").at("main") == 7);
  CHECK(j.at("inputs").at(0).at("sha256") == sha256_bytes("abc"));
  CHECK(j.contains("version"));
  CHECK(j.at("wall_clock_seconds").get<double>() >= 0);
  CHECK_THROWS_AS(sha256_path(dir / "missing"), InputError);
}
