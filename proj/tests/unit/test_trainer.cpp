#include <doctest.h>

#include <fstream>

#include "lesionforge/metrics.hpp"
#include "lesionforge/phantom.hpp"
#include "lesionforge/trainer.hpp"
#include "test_util.hpp"

using namespace lf;

namespace {
TrainConfig tiny_config(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.decay_start_epoch = 0;
  c.n = 3;
  c.generator_base_channels = 4;
  c.res_blocks = 1;
  c.discriminator_base_channels = 4;
  c.image_size = 32;
  c.checkpoint_every = 1;
  c.seed = 5;
  return c;
}

UnpairedDataset tiny_data(int healthy, int pathological) {
  phantom::PhantomSpec spec;
  spec.size = 32;
  spec.lesion_radius_range = {1.5, 2.5};
  UnpairedDataset ds;
  for (int i = 0; i < healthy; ++i) {
    ds.healthy_ids.push_back("h" + std::to_string(i));
    ds.healthy.push_back(phantom::gen_healthy(spec, i).image);
  }
  for (int i = 0; i < pathological; ++i) {
    const int idx = 100 + i;
    const auto p = phantom::add_lesions(phantom::gen_healthy(spec, idx), spec, idx);
    ds.pathological.push_back({"p" + std::to_string(i), p.image, p.lesion});
    ds.foreground.push_back(make_foreground(p.image, p.lesion));
  }
  return ds;
}

TrainOptions quiet(const std::filesystem::path& dir) {
  TrainOptions o;
  o.out_dir = dir;
  o.verbose = false;
  return o;
}
}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  for (int e : {1, 100, 200}) CHECK(lr_at_epoch(c, e) == 0.001);
  CHECK(lr_at_epoch(c, 300) == doctest::Approx(0.0005));
  CHECK(lr_at_epoch(c, 400) == 0.0);
  for (int e = 201; e < 400; ++e) CHECK(lr_at_epoch(c, e) < lr_at_epoch(c, e - 1));
}

TEST_CASE("train config json") {
  TrainConfig c;
  c.epochs = 7;
  c.weights.lambda_idt = 0.25;
  const nlohmann::json j = c;
  const TrainConfig back = j.get<TrainConfig>();
  CHECK(back.epochs == 7);
  CHECK(back.weights.lambda_idt == 0.25);
  CHECK(nlohmann::json(back) == j);
  CHECK(nlohmann::json::parse(R"({"epochs": 3})").get<TrainConfig>().lr == 0.001);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"epoch": 3})").get<TrainConfig>(), InputError);
  TrainConfig bad;
  bad.decay_start_epoch = 500;
  CHECK_THROWS_AS(validate(bad), InputError);
  bad = TrainConfig{};
  bad.batch_size = 0;
  CHECK_THROWS_AS(validate(bad), InputError);
  CHECK(TrainConfig{}.resolved().res_blocks == 6);
  TrainConfig big;
  big.image_size = 256;
  CHECK(big.resolved().res_blocks == 9);
  CHECK(big.resolved().discriminator_layers == 4);
}

TEST_CASE("image pool") {
  Rng rng(1);
  ImagePool none(0);
  for (int i = 0; i < 10; ++i) {
    const Image2D x(2, 2, float(i));
    CHECK(pool_query(none, x, rng) == x);
  }
  CHECK(none.size() == 0);
  ImagePool pool(50);
  CHECK(pool_query(pool, Image2D(2, 2, 1.f), rng) == Image2D(2, 2, 1.f));
  CHECK(pool.size() == 1);
  int swapped = 0;
  for (int i = 0; i < 1000; ++i) {
    const Image2D x(2, 2, float(i + 2));
    swapped += !(pool_query(pool, x, rng) == x);
    CHECK(pool.size() <= 50);
  }
  CHECK(pool.size() == 50);
  CHECK(swapped > 350);
  CHECK(swapped < 600);
}

TEST_CASE("in-training augmentation") {
  phantom::PhantomSpec spec;
  const auto h = phantom::gen_healthy(spec, 0);
  SUBCASE("mirror is an involution") {
    TrainConfig c;
    c.elastic = false;
    c.mirror_prob = 1.0;
    Rng rng(0);
    Image2D img = h.image;
    BinaryMask2D m = h.ventricle;
    augment_in_training(img, &m, c, rng);
    CHECK_FALSE(img == h.image);
    augment_in_training(img, &m, c, rng);
    CHECK(img == h.image);
    CHECK(m == h.ventricle);
  }
  SUBCASE("zero-amplitude elastic is the identity") {
    TrainConfig c;
    c.mirror = false;
    c.elastic_prob = 1.0;
    c.elastic_amplitude = 0.0;
    Rng rng(0);
    Image2D img = h.image;
    augment_in_training(img, nullptr, c, rng);
    CHECK(img == h.image);
  }
  SUBCASE("masks follow their image") {
    TrainConfig c;
    c.mirror_prob = 0.5;
    c.elastic_prob = 1.0;
    c.elastic_amplitude = 0.5;
    double total = 0;
    for (int idx = 0; idx < 10; ++idx) {
      const auto hh = phantom::gen_healthy(spec, idx);
      const auto p = phantom::add_lesions(hh, spec, idx);
      // The lesion increment is boost * profile, and the mask is profile >= t.
      Image2D diff = p.image;
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = p.image[i] - hh.image[i];
      BinaryMask2D m = p.lesion;
      Rng rng(idx);
      augment_in_training(diff, &m, c, rng);
      // Halfway up the mask edge step, where a nearest-neighbour label flips.
      const float cut = static_cast<float>(0.5 * spec.lesion_intensity_boost * spec.lesion_profile_threshold);
      const double d = dice(m, threshold_above(diff, cut));
      CHECK(d >= 0.9);
      total += d;
    }
    CHECK(total / 10 >= 0.95);
  }
}

TEST_CASE("one-epoch smoke run writes checkpoints and a log") {
  const auto dir = lft::scratch_dir("train_smoke");
  const TrainConfig cfg = tiny_config(1);
  const auto res = train(cfg, tiny_data(2, 2), quiet(dir));
  for (const char* f : kBundleFiles) CHECK(std::filesystem::exists(res.final_checkpoint / f));
  CHECK(std::filesystem::exists(dir / "config.resolved.json"));
  const auto log = read_log(dir / "log.jsonl");
  CHECK(log.size() == 2);
  for (const auto& r : log) {
    CHECK(r.losses.g_total == doctest::Approx(r.losses.g_H + r.losses.g_P + r.losses.cc + r.losses.idt).epsilon(1e-6));
    CHECK(std::isfinite(r.losses.d_F));
  }
  CHECK(load_generator<float>(res.final_checkpoint / "g_p.lfck").config().masks == 3);

  // The resolved config reproduces the run when fed back.
  std::ifstream in(dir / "config.resolved.json");
  const TrainConfig again = nlohmann::json::parse(in).get<TrainConfig>();
  CHECK(nlohmann::json(again) == nlohmann::json(cfg.resolved()));
}

TEST_CASE("training is deterministic and the log covers every iteration") {
  const auto data = tiny_data(3, 2);
  const TrainConfig cfg = tiny_config(2);
  const auto a = train(cfg, data, quiet(lft::scratch_dir("train_det_a")));
  const auto b = train(cfg, data, quiet(lft::scratch_dir("train_det_b")));
  REQUIRE(a.records.size() == 6);
  REQUIRE(b.records.size() == a.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i)
    CHECK(nlohmann::json(a.records[i]) == nlohmann::json(b.records[i]));
}

TEST_CASE("resume continues from a checkpoint") {
  const auto data = tiny_data(2, 2);
  const auto dir = lft::scratch_dir("train_resume");
  TrainConfig cfg = tiny_config(3);
  cfg.pool_size = 0;  // pools restart empty on resume
  const auto full = train(cfg, data, quiet(lft::scratch_dir("train_full")));
  train(cfg, data, quiet(dir));
  TrainOptions opts = quiet(dir);
  opts.resume_from = dir / "checkpoints" / "epoch_0002";
  const auto resumed = train(cfg, data, opts);
  REQUIRE(resumed.records.size() == 2);
  CHECK(nlohmann::json(resumed.records.back()) == nlohmann::json(full.records.back()));
  CHECK(read_log(dir / "log.jsonl").size() == 6);
}

TEST_CASE("empty dataset is an input error") {
  CHECK_THROWS_AS(train(tiny_config(1), UnpairedDataset{}, quiet(lft::scratch_dir("train_empty"))), InputError);
}
