#include "lesionforge/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "lesionforge/registration.hpp"

namespace lf {

using nlohmann::json;
namespace fs = std::filesystem;

GeneratorConfig TrainConfig::generator() const {
  const TrainConfig r = resolved();
  return GeneratorConfig{r.n, r.generator_base_channels, r.res_blocks, r.dropout};
}

DiscriminatorConfig TrainConfig::discriminator() const {
  const TrainConfig r = resolved();
  return DiscriminatorConfig{r.discriminator_base_channels, r.discriminator_layers, false};
}

TrainConfig TrainConfig::resolved() const {
  TrainConfig r = *this;
  if (r.res_blocks == 0) r.res_blocks = image_size >= 256 ? 9 : 6;
  if (r.discriminator_layers == 0) r.discriminator_layers = image_size >= 256 ? 4 : 3;
  return r;
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},
           {"decay_start_epoch", c.decay_start_epoch},
           {"batch_size", c.batch_size},
           {"lr", c.lr},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"weights", c.weights},
           {"n", c.n},
           {"dropout", c.dropout},
           {"generator_base_channels", c.generator_base_channels},
           {"res_blocks", c.res_blocks},
           {"discriminator_base_channels", c.discriminator_base_channels},
           {"discriminator_layers", c.discriminator_layers},
           {"pool_size", c.pool_size},
           {"seed", c.seed},
           {"mirror", c.mirror},
           {"mirror_prob", c.mirror_prob},
           {"elastic", c.elastic},
           {"elastic_prob", c.elastic_prob},
           {"elastic_amplitude", c.elastic_amplitude},
           {"elastic_grid", c.elastic_grid},
           {"image_size", c.image_size},
           {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw InputError("train config must be a JSON object");
  const json known = TrainConfig{};
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw InputError("unknown train config key '" + key + "'");
  try {
    const TrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.decay_start_epoch = j.value("decay_start_epoch", d.decay_start_epoch);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.weights = j.value("weights", d.weights);
    c.n = j.value("n", d.n);
    c.dropout = j.value("dropout", d.dropout);
    c.generator_base_channels = j.value("generator_base_channels", d.generator_base_channels);
    c.res_blocks = j.value("res_blocks", d.res_blocks);
    c.discriminator_base_channels =
        j.value("discriminator_base_channels", d.discriminator_base_channels);
    c.discriminator_layers = j.value("discriminator_layers", d.discriminator_layers);
    c.pool_size = j.value("pool_size", d.pool_size);
    c.seed = j.value("seed", d.seed);
    c.mirror = j.value("mirror", d.mirror);
    c.mirror_prob = j.value("mirror_prob", d.mirror_prob);
    c.elastic = j.value("elastic", d.elastic);
    c.elastic_prob = j.value("elastic_prob", d.elastic_prob);
    c.elastic_amplitude = j.value("elastic_amplitude", d.elastic_amplitude);
    c.elastic_grid = j.value("elastic_grid", d.elastic_grid);
    c.image_size = j.value("image_size", d.image_size);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed train config: ") + e.what());
  }
}

void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw InputError("epochs must be >= 1");
  if (c.decay_start_epoch < 0 || c.decay_start_epoch > c.epochs)
    throw InputError("decay_start_epoch must lie in [0, epochs]");
  if (c.batch_size < 1) throw InputError("batch_size must be >= 1");
  if (!(c.lr > 0)) throw InputError("lr must be > 0");
  if (!(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1))
    throw InputError("Adam betas must lie in [0, 1)");
  validate(c.weights);
  if (c.n < 2) throw InputError("n must be >= 2");
  if (!(c.dropout >= 0 && c.dropout < 1)) throw InputError("dropout must lie in [0, 1)");
  if (c.pool_size < 0) throw InputError("pool_size must be >= 0");
  for (double p : {c.mirror_prob, c.elastic_prob})
    if (!(p >= 0 && p <= 1)) throw InputError("augmentation probabilities must lie in [0, 1]");
  if (!(c.elastic_amplitude >= 0)) throw InputError("elastic_amplitude must be >= 0");
  if (c.elastic_grid < 2) throw InputError("elastic_grid must be >= 2");
  if (!is_network_shape(c.image_size, c.image_size))
    throw InputError("image_size must be one of 32, 64, 128, 256");
  if (c.checkpoint_every < 1) throw InputError("checkpoint_every must be >= 1");
  if (c.generator_base_channels < 1 || c.discriminator_base_channels < 1)
    throw InputError("base channel counts must be >= 1");
  if (c.res_blocks < 0 || c.discriminator_layers < 0)
    throw InputError("res_blocks and discriminator_layers must be >= 0");
}

double lr_at_epoch(const TrainConfig& c, int epoch) {
  if (epoch <= c.decay_start_epoch || c.epochs == c.decay_start_epoch) return c.lr;
  const double frac = static_cast<double>(c.epochs - epoch) / (c.epochs - c.decay_start_epoch);
  return c.lr * std::max(0.0, frac);
}

nn::Tensor<float> ImagePool::query(const nn::Tensor<float>& fake, Rng& rng) {
  if (capacity_ <= 0) return fake;
  if (buffer_.size() < static_cast<std::size_t>(capacity_)) {
    buffer_.push_back(fake);
    return fake;
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < 0.5) return fake;
  std::uniform_int_distribution<std::size_t> pick(0, buffer_.size() - 1);
  nn::Tensor<float>& slot = buffer_[pick(rng)];
  nn::Tensor<float> old = std::move(slot);
  slot = fake;
  return old;
}

void augment_in_training(Image2D& image, BinaryMask2D* mask, const TrainConfig& cfg, Rng& rng) {
  if (mask) require_same_shape(image, *mask, "augment_in_training");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (cfg.mirror && coin(rng) < cfg.mirror_prob) {
    image = mirror_horizontal(image);
    if (mask) *mask = mirror_horizontal(*mask);
  }
  if (cfg.elastic && coin(rng) < cfg.elastic_prob && cfg.elastic_amplitude > 0) {
    const DisplacementField f = random_elastic_field(image.height(), image.width(),
                                                     cfg.elastic_grid, cfg.elastic_amplitude, rng);
    image = warp_image(image, f);
    if (mask) *mask = warp_mask(*mask, f);
  }
}

void to_json(json& j, const IterationRecord& r) {
  j = r.losses;
  j["epoch"] = r.epoch;
  j["iteration"] = r.iteration;
  j["lr"] = r.lr;
}

void from_json(const json& j, IterationRecord& r) {
  r.epoch = j.at("epoch");
  r.iteration = j.at("iteration");
  r.lr = j.at("lr");
  r.losses = j.get<LossReport>();
}

std::vector<IterationRecord> read_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read training log " + path.string());
  std::vector<IterationRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line).get<IterationRecord>());
  return out;
}

namespace {

using Var = nn::Var<float>;
using Tensor = nn::Tensor<float>;

struct Streams {
  Rng data, augment, dropout, pool;
};

std::string rng_state(const Rng& r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

void set_rng_state(Rng& r, const std::string& s) {
  std::istringstream is(s);
  is >> r;
  if (!is) throw InputError("corrupt RNG state in checkpoint");
}

// Index sequence of length `len` built from back-to-back shuffles of [0, n).
std::vector<std::size_t> cyclic_order(std::size_t n, std::size_t len, Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(len);
  std::vector<std::size_t> perm(n);
  while (out.size() < len) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < n && out.size() < len; ++i) out.push_back(perm[i]);
  }
  return out;
}

struct Optimizers {
  nn::Adam<float> g_p, g_h, d_h, d_p, d_f;
};

Optimizers make_optimizers(const ModelBundles<float>& m, const TrainConfig& c) {
  const nn::AdamOptions o{c.beta1, c.beta2, 1e-8};
  return Optimizers{nn::Adam<float>(m.g_p.parameters(), o), nn::Adam<float>(m.g_h.parameters(), o),
                    nn::Adam<float>(m.d_h.parameters(), o), nn::Adam<float>(m.d_p.parameters(), o),
                    nn::Adam<float>(m.d_f.parameters(), o)};
}

void set_discriminators_trainable(const ModelBundles<float>& m, bool on) {
  nn::set_requires_grad(m.d_h.parameters(), on);
  nn::set_requires_grad(m.d_p.parameters(), on);
  nn::set_requires_grad(m.d_f.parameters(), on);
}

void set_generators_trainable(const ModelBundles<float>& m, bool on) {
  nn::set_requires_grad(m.g_p.parameters(), on);
  nn::set_requires_grad(m.g_h.parameters(), on);
}

fs::path checkpoint_dir(const fs::path& out, int epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04d", epoch);
  return out / "checkpoints" / name;
}

void save_all(const fs::path& dir, const ModelBundles<float>& m, Optimizers& o, int epoch,
              const Streams& s, const TrainConfig& cfg) {
  fs::create_directories(dir);
  const json extra{{"train_config", cfg}};
  save_generator(dir / kBundleFiles[0], m.g_p, {"g_p", epoch, extra}, &o.g_p);
  save_generator(dir / kBundleFiles[1], m.g_h, {"g_h", epoch, extra}, &o.g_h);
  save_discriminator(dir / kBundleFiles[2], m.d_h, {"d_h", epoch, extra}, &o.d_h);
  save_discriminator(dir / kBundleFiles[3], m.d_p, {"d_p", epoch, extra}, &o.d_p);
  save_discriminator(dir / kBundleFiles[4], m.d_f, {"d_f", epoch, extra}, &o.d_f);
  const json state{{"epoch", epoch},
                   {"rng",
                    {{"data", rng_state(s.data)},
                     {"augment", rng_state(s.augment)},
                     {"dropout", rng_state(s.dropout)},
                     {"pool", rng_state(s.pool)}}}};
  std::ofstream(dir / "state.json") << state.dump(2) << "\n";
}

bool finite(const LossReport& r) {
  for (double v : {r.g_H, r.g_P, r.cc, r.idt, r.g_total, r.d_H, r.d_P, r.d_F})
    if (!std::isfinite(v)) return false;
  return true;
}

struct Sample {
  Image2D x_H, x_P, x_F;
  BinaryMask2D mask;
  std::size_t h_index = 0, p_index = 0;
};

[[noreturn]] void abort_divergence(const fs::path& out, const IterationRecord& rec,
                                   const Sample& s) {
  const fs::path dir = out / "divergence";
  fs::create_directories(dir);
  save_image(s.x_H, dir / "x_H", ImageFormat::kRawFloat);
  save_image(s.x_P, dir / "x_P", ImageFormat::kRawFloat);
  save_image(s.x_F, dir / "x_F", ImageFormat::kRawFloat);
  save_mask(s.mask, dir / "mask.png");
  json j = rec;
  j["healthy_index"] = s.h_index;
  j["pathological_index"] = s.p_index;
  std::ofstream(dir / "report.json") << j.dump(2) << "\n";
  throw NumericalError("non-finite loss at epoch " + std::to_string(rec.epoch) + ", iteration " +
                       std::to_string(rec.iteration) + "; batch dumped to " + dir.string());
}

}  // namespace

TrainResult train(const TrainConfig& config, const UnpairedDataset& data,
                  const TrainOptions& options) {
  configure_allocator();
  const TrainConfig cfg = config.resolved();
  validate(cfg);
  if (data.healthy.empty() || data.pathological.empty())
    throw InputError("empty dataset: training needs at least one healthy and one pathological image");
  for (const auto& img : data.healthy)
    if (img.height() != cfg.image_size || img.width() != cfg.image_size)
      throw ShapeError("healthy image is " + std::to_string(img.height()) + "x" +
                       std::to_string(img.width()) + ", config image_size is " +
                       std::to_string(cfg.image_size));
  for (const auto& it : data.pathological)
    if (it.image.height() != cfg.image_size || it.image.width() != cfg.image_size)
      throw ShapeError("pathological image " + it.id + " does not match image_size");

  const fs::path& out = options.out_dir;
  fs::create_directories(out / "checkpoints");
  std::ofstream(out / "config.resolved.json") << json(cfg).dump(2) << "\n";

  TrainResult result;
  ModelBundles<float>& m = result.models;
  m = init_bundles<float>(cfg.generator(), cfg.discriminator(), cfg.seed);
  Optimizers opt = make_optimizers(m, cfg);
  Streams rs{make_rng(cfg.seed, 11), make_rng(cfg.seed, 12), make_rng(cfg.seed, 13),
             make_rng(cfg.seed, 14)};
  int start_epoch = 1;

  std::vector<std::string> kept_log;
  if (options.resume_from) {
    const fs::path& dir = *options.resume_from;
    m.g_p = load_generator<float>(dir / kBundleFiles[0]);
    m.g_h = load_generator<float>(dir / kBundleFiles[1]);
    m.d_h = load_discriminator<float>(dir / kBundleFiles[2]);
    m.d_p = load_discriminator<float>(dir / kBundleFiles[3]);
    m.d_f = load_discriminator<float>(dir / kBundleFiles[4]);
    opt = make_optimizers(m, cfg);
    load_optimizer_state(dir / kBundleFiles[0], opt.g_p);
    load_optimizer_state(dir / kBundleFiles[1], opt.g_h);
    load_optimizer_state(dir / kBundleFiles[2], opt.d_h);
    load_optimizer_state(dir / kBundleFiles[3], opt.d_p);
    load_optimizer_state(dir / kBundleFiles[4], opt.d_f);
    std::ifstream sin(dir / "state.json");
    if (!sin) throw InputError("checkpoint " + dir.string() + " has no state.json");
    const json state = json::parse(sin);
    start_epoch = state.at("epoch").get<int>() + 1;
    set_rng_state(rs.data, state.at("rng").at("data"));
    set_rng_state(rs.augment, state.at("rng").at("augment"));
    set_rng_state(rs.dropout, state.at("rng").at("dropout"));
    set_rng_state(rs.pool, state.at("rng").at("pool"));
    // Drop log lines written after the checkpoint was taken.
    std::ifstream lin(out / "log.jsonl");
    std::string line;
    while (std::getline(lin, line))
      if (!line.empty() && json::parse(line).at("epoch").get<int>() < start_epoch)
        kept_log.push_back(line);
    spdlog::info("resuming from {} at epoch {}", dir.string(), start_epoch);
  }
  std::ofstream log(out / "log.jsonl", std::ios::trunc);
  for (const auto& l : kept_log) log << l << "\n";

  ImagePool pool_H(cfg.pool_size), pool_P(cfg.pool_size);
  const std::size_t nH = data.healthy.size(), nP = data.pathological.size();
  const std::size_t per_epoch = std::max(nH, nP);
  const int B = cfg.batch_size;
  const int iterations = static_cast<int>((per_epoch + B - 1) / B);
  const float inv_b = 1.0f / static_cast<float>(B);
  const LossWeights& w = cfg.weights;
  const auto t_start = std::chrono::steady_clock::now();

  for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    const std::size_t len = static_cast<std::size_t>(iterations) * B;
    const auto order_H = cyclic_order(nH, len, rs.data);
    const auto order_P = cyclic_order(nP, len, rs.data);
    double epoch_cc = 0;

    for (int it = 0; it < iterations; ++it) {
      IterationRecord rec{epoch, it, lr, {}};
      std::vector<Sample> samples(B);
      std::vector<Tensor> fake_P(B), fake_H(B), fore_P(B);

      // Generator step: discriminators frozen, both generators on one total objective.
      set_discriminators_trainable(m, false);
      set_generators_trainable(m, true);
      opt.g_p.zero_grad();
      opt.g_h.zero_grad();
      for (int b = 0; b < B; ++b) {
        Sample& s = samples[b];
        s.h_index = order_H[static_cast<std::size_t>(it) * B + b];
        s.p_index = order_P[static_cast<std::size_t>(it) * B + b];
        s.x_H = data.healthy[s.h_index];
        s.x_P = data.pathological[s.p_index].image;
        s.mask = data.pathological[s.p_index].mask;
        augment_in_training(s.x_H, nullptr, cfg, rs.augment);
        augment_in_training(s.x_P, &s.mask, cfg, rs.augment);
        s.x_F = make_foreground(s.x_P, s.mask);

        const Var xH = nn::constant(image_to_tensor<float>(s.x_H));
        const Var xP = nn::constant(image_to_tensor<float>(s.x_P));
        const FusionVars<float> gp = m.g_p.forward(xH, &rs.dropout);
        const FusionVars<float> rec_h = m.g_h.forward(gp.output, &rs.dropout);
        const FusionVars<float> gh = m.g_h.forward(xP, &rs.dropout);
        const FusionVars<float> rec_p = m.g_p.forward(gh.output, &rs.dropout);
        const FusionVars<float> idt_h = m.g_h.forward(xH, &rs.dropout);
        const FusionVars<float> idt_p = m.g_p.forward(xP, &rs.dropout);

        const Var l_gh = losses::gen_healthy(m.d_h.forward(gh.output));
        const Var fore_view = foreground_on_background(gp);
        const Var l_gp =
            losses::gen_pathological(m.d_p.forward(gp.output), m.d_f.forward(fore_view));
        const Var l_cc = losses::cycle(xH, rec_h.output, xP, rec_p.output, w);
        const Var l_idt = losses::identity(xH, idt_h.output, xP, idt_p.output, w);
        const Var total = nn::add(nn::add(l_gh, l_gp), nn::add(l_cc, l_idt));
        rec.losses.g_H += l_gh->value[0] * inv_b;
        rec.losses.g_P += l_gp->value[0] * inv_b;
        rec.losses.cc += l_cc->value[0] * inv_b;
        rec.losses.idt += l_idt->value[0] * inv_b;
        if (!std::isfinite(total->value[0])) abort_divergence(out, rec, s);
        nn::backward(B > 1 ? nn::scale(total, inv_b) : total);

        fake_P[b] = gp.output->value;
        fake_H[b] = gh.output->value;
        fore_P[b] = fore_view->value;
      }
      rec.losses.g_total = loss_gen_total(rec.losses.g_H, rec.losses.g_P, rec.losses.cc,
                                          rec.losses.idt);
      opt.g_p.step(lr);
      opt.g_h.step(lr);

      // Discriminator step on pooled fakes (D_F sees the current O^fore).
      set_generators_trainable(m, false);
      set_discriminators_trainable(m, true);
      opt.d_h.zero_grad();
      opt.d_p.zero_grad();
      opt.d_f.zero_grad();
      for (int b = 0; b < B; ++b) {
        const Sample& s = samples[b];
        const Var fh = nn::constant(pool_H.query(fake_H[b], rs.pool));
        const Var fp = nn::constant(pool_P.query(fake_P[b], rs.pool));
        const Var ff = nn::constant(fore_P[b]);
        const Var l_dh =
            losses::disc(m.d_h.forward(nn::constant(image_to_tensor<float>(s.x_H))), m.d_h.forward(fh));
        const Var l_dp =
            losses::disc(m.d_p.forward(nn::constant(image_to_tensor<float>(s.x_P))), m.d_p.forward(fp));
        const Var l_df =
            losses::disc(m.d_f.forward(nn::constant(image_to_tensor<float>(s.x_F))), m.d_f.forward(ff));
        rec.losses.d_H += l_dh->value[0] * inv_b;
        rec.losses.d_P += l_dp->value[0] * inv_b;
        rec.losses.d_F += l_df->value[0] * inv_b;
        const Var total = nn::add(nn::add(l_dh, l_dp), l_df);
        if (!std::isfinite(total->value[0])) abort_divergence(out, rec, s);
        nn::backward(B > 1 ? nn::scale(total, inv_b) : total);
      }
      opt.d_h.step(lr);
      opt.d_p.step(lr);
      opt.d_f.step(lr);
      set_generators_trainable(m, true);

      if (!finite(rec.losses)) abort_divergence(out, rec, samples.front());
      log << json(rec).dump() << "\n";
      epoch_cc += rec.losses.cc;
      result.records.push_back(rec);
      if (options.on_iteration) options.on_iteration(rec);
    }
    log.flush();

    if (options.verbose) {
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      const auto& last = result.records.back().losses;
      spdlog::info("epoch {}/{} lr {:.6f} cc {:.4f} g_total {:.4f} d_H {:.4f} d_P {:.4f} d_F {:.4f} ({:.0f}s)",
                   epoch, cfg.epochs, lr, epoch_cc / iterations, last.g_total, last.d_H, last.d_P,
                   last.d_F, elapsed);
    }
    if (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs) {
      const fs::path dir = checkpoint_dir(out, epoch);
      save_all(dir, m, opt, epoch, rs, cfg);
      result.final_checkpoint = dir;
    }
  }
  return result;
}

}  // namespace lf
