#include "lesionforge/segmenter.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lesionforge/networks.hpp"

namespace lf {

using nlohmann::json;
using Var = nn::Var<float>;

void to_json(json& j, const SegmenterConfig& c) {
  j = json{{"base_channels", c.base_channels},
           {"iterations", c.iterations},
           {"lr", c.lr},
           {"mirror", c.mirror}};
}

void from_json(const json& j, SegmenterConfig& c) {
  const SegmenterConfig d;
  c.base_channels = j.value("base_channels", d.base_channels);
  c.iterations = j.value("iterations", d.iterations);
  c.lr = j.value("lr", d.lr);
  c.mirror = j.value("mirror", d.mirror);
}

void to_json(json& j, const SegExperimentConfig& c) {
  j = json{{"fractions", c.fractions},
           {"seeds", c.seeds},
           {"seed", c.seed},
           {"synthetic_per_real", c.synthetic_per_real},
           {"segmenter", c.segmenter}};
}

void from_json(const json& j, SegExperimentConfig& c) {
  const SegExperimentConfig d;
  c.fractions = j.value("fractions", d.fractions);
  c.seeds = j.value("seeds", d.seeds);
  c.seed = j.value("seed", d.seed);
  c.synthetic_per_real = j.value("synthetic_per_real", d.synthetic_per_real);
  c.segmenter = j.value("segmenter", d.segmenter);
}

void validate(const SegExperimentConfig& c) {
  if (c.fractions.empty()) throw InputError("seg experiment needs at least one fraction");
  for (double f : c.fractions)
    if (!(f > 0 && f <= 1)) throw InputError("training fractions must lie in (0, 1]");
  if (c.seeds < 1) throw InputError("seeds must be >= 1");
  if (c.synthetic_per_real < 0) throw InputError("synthetic_per_real must be >= 0");
  if (c.segmenter.base_channels < 1 || c.segmenter.iterations < 1 || !(c.segmenter.lr > 0))
    throw InputError("invalid segmenter settings");
}

Segmenter::Segmenter(const SegmenterConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  const int c = cfg.base_channels;
  auto he = [](int fan_in) { return std::sqrt(2.0 / fan_in); };
  // Encoder: level 0 keeps resolution, levels 1..3 start with a stride-2 conv.
  int in = 1;
  for (int l = 0; l < 4; ++l) {
    const int out = c << l;
    const int stride = l == 0 ? 1 : 2;
    enc_.push_back(Block{nn::Conv2d<float>(in, out, 3, stride, 1, rng, he(in * 9)),
                         nn::Conv2d<float>(out, out, 3, 1, 1, rng, he(out * 9))});
    in = out;
  }
  // Decoder: upsample, concatenate the skip, two convs.
  for (int l = 2; l >= 0; --l) {
    const int out = c << l;
    const int cat = in + out;
    dec_.push_back(Block{nn::Conv2d<float>(cat, out, 3, 1, 1, rng, he(cat * 9)),
                         nn::Conv2d<float>(out, out, 3, 1, 1, rng, he(out * 9))});
    in = out;
  }
  head_ = nn::Conv2d<float>(in, 1, 1, 1, 0, rng, he(in));
}

Var Segmenter::block(const Block& blk, const Var& x) const {
  Var h = nn::relu(nn::norm_or_identity(blk.a(x)));
  return nn::relu(nn::norm_or_identity(blk.b(h)));
}

Var Segmenter::forward(const Var& x) const {
  const auto& s = x->value.shape();
  if (s.size() != 3 || s[0] != 1 || s[1] % 8 != 0 || s[2] % 8 != 0)
    throw ShapeError("segmenter input must be (1, H, W) with H, W divisible by 8");
  std::vector<Var> skips;
  Var h = x;
  for (const auto& blk : enc_) {
    h = block(blk, h);
    skips.push_back(h);
  }
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    const Var& skip = skips[skips.size() - 2 - i];
    h = block(dec_[i], nn::concat_channels(nn::upsample_nearest2x(h), skip));
  }
  return head_(h);
}

BinaryMask2D Segmenter::predict(const Image2D& img) const {
  nn::NoGradGuard ng;
  const Var logits = forward(nn::constant(image_to_tensor<float>(img)));
  BinaryMask2D m(img.height(), img.width());
  m.spacing = img.spacing;
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = logits->value[i] > 0.0f ? 1 : 0;
  return m;
}

nn::ParamList<float> Segmenter::parameters() const {
  nn::ParamList<float> out;
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    enc_[i].a.collect(out, "enc" + std::to_string(i) + ".a");
    enc_[i].b.collect(out, "enc" + std::to_string(i) + ".b");
  }
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    dec_[i].a.collect(out, "dec" + std::to_string(i) + ".a");
    dec_[i].b.collect(out, "dec" + std::to_string(i) + ".b");
  }
  head_.collect(out, "head");
  return out;
}

std::vector<double> Segmenter::fit(const std::vector<PathologicalItem>& train, Rng& rng) {
  if (train.empty()) throw InputError("segmenter needs at least one training item");
  nn::Adam<float> opt(parameters(), nn::AdamOptions{0.9, 0.999, 1e-8});
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(cfg_.iterations));
  for (int it = 0; it < cfg_.iterations; ++it) {
    const PathologicalItem& item = train[pick(rng)];
    Image2D img = item.image;
    BinaryMask2D mask = item.mask;
    if (cfg_.mirror && coin(rng) < 0.5) {
      img = mirror_horizontal(img);
      mask = mirror_horizontal(mask);
    }
    nn::Tensor<float> target = nn::Tensor<float>::chw(1, mask.height(), mask.width());
    for (std::size_t i = 0; i < mask.size(); ++i) target[i] = mask[i] ? 1.0f : 0.0f;

    opt.zero_grad();
    const Var logits = forward(nn::constant(image_to_tensor<float>(img)));
    const Var bce = nn::bce_with_logits(logits, target);
    const Var t = nn::constant(target);
    const Var p = nn::sigmoid(logits);
    const Var inter = nn::sum_all(nn::mul(p, t));
    const Var denom = nn::add_scalar(nn::add(nn::sum_all(p), nn::sum_all(t)), 1.0f);
    const Var soft_dice = nn::div(nn::add_scalar(nn::scale(inter, 2.0f), 1.0f), denom);
    const Var loss = nn::add(bce, nn::add_scalar(nn::scale(soft_dice, -1.0f), 1.0f));
    if (!std::isfinite(loss->value[0])) throw NumericalError("segmenter loss diverged");
    nn::backward(loss);
    opt.step(cfg_.lr);
    trace.push_back(loss->value[0]);
  }
  return trace;
}

namespace {

struct Job {
  std::size_t fraction_index;
  int seed;
  bool augmented;
};

struct JobResult {
  int n_real = 0, n_synthetic = 0;
  std::vector<double> dice;
  std::vector<std::optional<double>> hd95, hd100;
};

}  // namespace

SegExperimentResult run_seg_experiment(const SegExperimentConfig& cfg,
                                       const std::vector<PathologicalItem>& real_train,
                                       const std::vector<PathologicalItem>& synthetic,
                                       const std::vector<PathologicalItem>& test) {
  validate(cfg);
  if (real_train.empty()) throw InputError("seg experiment: no real training subjects");
  if (test.empty()) throw InputError("seg experiment: empty test set");
  std::vector<int> n_real(cfg.fractions.size());
  for (std::size_t f = 0; f < cfg.fractions.size(); ++f) {
    n_real[f] = static_cast<int>(std::lround(cfg.fractions[f] * static_cast<double>(real_train.size())));
    if (n_real[f] == 0)
      throw InputError("training fraction " + std::to_string(cfg.fractions[f]) +
                       " selects zero subjects");
  }

  std::vector<Job> jobs;
  for (std::size_t f = 0; f < cfg.fractions.size(); ++f)
    for (int s = 0; s < cfg.seeds; ++s)
      for (bool aug : {false, true}) jobs.push_back({f, s, aug});
  std::vector<JobResult> results(jobs.size());

  parallel_for(jobs.size(), [&](std::size_t j) {
    const Job& job = jobs[j];
    // Both arms of a (fraction, seed) pair share the real subset and the
    // network initialization, so the comparison isolates the synthetic data.
    Rng pick = make_rng(cfg.seed, 1, job.fraction_index, static_cast<std::uint64_t>(job.seed));
    std::vector<std::size_t> order(real_train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), pick);
    std::vector<PathologicalItem> train;
    for (int i = 0; i < n_real[job.fraction_index]; ++i) train.push_back(real_train[order[i]]);
    JobResult& r = results[j];
    r.n_real = static_cast<int>(train.size());
    if (job.augmented && !synthetic.empty()) {
      std::vector<std::size_t> sorder(synthetic.size());
      std::iota(sorder.begin(), sorder.end(), std::size_t{0});
      std::shuffle(sorder.begin(), sorder.end(), pick);
      const std::size_t want = std::min(
          synthetic.size(), static_cast<std::size_t>(r.n_real) * cfg.synthetic_per_real);
      for (std::size_t i = 0; i < want; ++i) train.push_back(synthetic[sorder[i]]);
      r.n_synthetic = static_cast<int>(want);
    }
    const std::uint64_t net_seed =
        mix_seed(cfg.seed, 2, job.fraction_index, static_cast<std::uint64_t>(job.seed));
    Segmenter seg(cfg.segmenter, net_seed);
    Rng train_rng = make_rng(net_seed, job.augmented ? 1 : 0);
    seg.fit(train, train_rng);
    for (const auto& t : test) {
      const BinaryMask2D pred = seg.predict(t.image);
      r.dice.push_back(dice(pred, t.mask));
      r.hd95.push_back(hausdorff(pred, t.mask, 95.0));
      r.hd100.push_back(hausdorff(pred, t.mask, 100.0));
    }
  });

  SegExperimentResult out;
  const std::size_t nt = test.size();
  for (std::size_t f = 0; f < cfg.fractions.size(); ++f) {
    SegArmResult arms[2];
    for (int a = 0; a < 2; ++a) {
      SegArmResult& arm = arms[a];
      arm.fraction = cfg.fractions[f];
      arm.arm = a ? "real+synthetic" : "real";
      arm.subject_dice.assign(nt, 0.0);
      std::vector<std::size_t> hd_n(nt, 0);
      std::vector<double> hd_acc(nt, 0.0);
      std::vector<std::optional<double>> all_d, all_h95, all_h100;
      for (std::size_t j = 0; j < jobs.size(); ++j) {
        if (jobs[j].fraction_index != f || jobs[j].augmented != (a == 1)) continue;
        const JobResult& r = results[j];
        arm.n_real = r.n_real;
        arm.n_synthetic = r.n_synthetic;
        double seed_mean = 0;
        for (std::size_t t = 0; t < nt; ++t) {
          arm.subject_dice[t] += r.dice[t] / cfg.seeds;
          seed_mean += r.dice[t] / static_cast<double>(nt);
          all_d.emplace_back(r.dice[t]);
          all_h95.push_back(r.hd95[t]);
          all_h100.push_back(r.hd100[t]);
          if (r.hd95[t]) {
            hd_acc[t] += *r.hd95[t];
            ++hd_n[t];
          }
        }
        arm.seed_dice.push_back(seed_mean);
      }
      for (std::size_t t = 0; t < nt; ++t)
        arm.subject_hd95.push_back(hd_n[t] ? hd_acc[t] / static_cast<double>(hd_n[t])
                                           : std::numeric_limits<double>::quiet_NaN());
      arm.dice = summarize(all_d);
      arm.hd95 = summarize(all_h95);
      arm.hd100 = summarize(all_h100);
    }
    SegComparison cmp;
    cmp.fraction = cfg.fractions[f];
    cmp.p_dice = paired_t_test(arms[1].subject_dice, arms[0].subject_dice);
    std::vector<double> ha, hb;
    for (std::size_t t = 0; t < nt; ++t)
      if (!std::isnan(arms[0].subject_hd95[t]) && !std::isnan(arms[1].subject_hd95[t])) {
        ha.push_back(arms[1].subject_hd95[t]);
        hb.push_back(arms[0].subject_hd95[t]);
      }
    cmp.p_hd95 = paired_t_test(ha, hb);
    cmp.dice_gain = arms[1].dice.mean - arms[0].dice.mean;
    out.arms.push_back(std::move(arms[0]));
    out.arms.push_back(std::move(arms[1]));
    out.comparisons.push_back(cmp);
  }
  return out;
}

std::string SegExperimentResult::to_csv() const {
  std::ostringstream os;
  os << "fraction,arm,n_real,n_synthetic,dice_mean,dice_std,hd95_mean,hd95_std,hd95_missing,"
        "hd100_mean,hd100_std,p_dice,p_hd95\n";
  for (const auto& a : arms) {
    double p_d = std::numeric_limits<double>::quiet_NaN(), p_h = p_d;
    if (a.arm != "real")
      for (const auto& c : comparisons)
        if (c.fraction == a.fraction) {
          p_d = c.p_dice;
          p_h = c.p_hd95;
        }
    os << a.fraction << ',' << a.arm << ',' << a.n_real << ',' << a.n_synthetic << ','
       << a.dice.mean << ',' << a.dice.std << ',' << a.hd95.mean << ',' << a.hd95.std << ','
       << a.hd95.missing << ',' << a.hd100.mean << ',' << a.hd100.std << ',';
    if (std::isnan(p_d)) os << ',';
    else os << p_d << ',';
    if (!std::isnan(p_h)) os << p_h;
    os << '\n';
  }
  return os.str();
}

namespace {

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json summary_json(const Summary& s) {
  return json{{"mean", num(s.mean)}, {"std", num(s.std)}, {"n", s.n}, {"missing", s.missing}};
}

}  // namespace

json SegExperimentResult::to_json() const {
  json j;
  j["arms"] = json::array();
  for (const auto& a : arms)
    j["arms"].push_back({{"fraction", a.fraction},
                         {"arm", a.arm},
                         {"n_real", a.n_real},
                         {"n_synthetic", a.n_synthetic},
                         {"dice", summary_json(a.dice)},
                         {"hd95", summary_json(a.hd95)},
                         {"hd100", summary_json(a.hd100)},
                         {"seed_dice", a.seed_dice}});
  j["comparisons"] = json::array();
  for (const auto& c : comparisons)
    j["comparisons"].push_back({{"fraction", c.fraction},
                                {"p_dice", num(c.p_dice)},
                                {"p_hd95", num(c.p_hd95)},
                                {"dice_gain", c.dice_gain}});
  return j;
}

}  // namespace lf
