#include "lesionforge/networks.hpp"

#include "lesionforge/nn/checkpoint.hpp"

namespace lf {

using nlohmann::json;

void to_json(json& j, const GeneratorConfig& c) {
  j = json{{"masks", c.masks},
           {"base_channels", c.base_channels},
           {"res_blocks", c.res_blocks},
           {"dropout", c.dropout}};
}

void from_json(const json& j, GeneratorConfig& c) {
  const GeneratorConfig d;
  c.masks = j.value("masks", d.masks);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.res_blocks = j.value("res_blocks", d.res_blocks);
  c.dropout = j.value("dropout", d.dropout);
}

void to_json(json& j, const DiscriminatorConfig& c) {
  j = json{{"base_channels", c.base_channels},
           {"downsampling_layers", c.downsampling_layers},
           {"stub", c.stub}};
}

void from_json(const json& j, DiscriminatorConfig& c) {
  const DiscriminatorConfig d;
  c.base_channels = j.value("base_channels", d.base_channels);
  c.downsampling_layers = j.value("downsampling_layers", d.downsampling_layers);
  c.stub = j.value("stub", d.stub);
}

std::string to_string(DiscriminatorRole role) {
  switch (role) {
    case DiscriminatorRole::kHealthy:
      return "healthy";
    case DiscriminatorRole::kPathological:
      return "pathological";
    case DiscriminatorRole::kForeground:
      return "foreground";
  }
  return "unknown";
}

namespace {

DiscriminatorRole role_from_string(const std::string& s) {
  if (s == "healthy") return DiscriminatorRole::kHealthy;
  if (s == "pathological") return DiscriminatorRole::kPathological;
  if (s == "foreground") return DiscriminatorRole::kForeground;
  throw InputError("unknown discriminator role " + s);
}

void validate(const GeneratorConfig& c) {
  if (c.masks < 2) throw InputError("generator needs n >= 2 attention masks");
  if (c.base_channels < 1) throw InputError("generator base_channels must be >= 1");
  if (c.res_blocks < 0) throw InputError("res_blocks must be >= 0");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw InputError("dropout must lie in [0, 1)");
}

void validate(const DiscriminatorConfig& c) {
  if (c.base_channels < 1) throw InputError("discriminator base_channels must be >= 1");
  if (c.downsampling_layers < 1) throw InputError("discriminator needs >= 1 downsampling layer");
}

constexpr int kDownsamplings = 3;

}  // namespace

template <typename T>
GeneratorBundle<T>::GeneratorBundle(const GeneratorConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  validate(config);
  Rng rng(seed);
  const int c = config.base_channels;
  stem_ = nn::Conv2d<T>(1, c, 7, 1, 0, rng);
  int ch = c;
  for (int i = 0; i < kDownsamplings; ++i, ch *= 2) down_.emplace_back(ch, 2 * ch, 3, 2, 1, rng);
  for (int b = 0; b < config.res_blocks; ++b)
    blocks_.emplace_back(nn::Conv2d<T>(ch, ch, 3, 1, 0, rng), nn::Conv2d<T>(ch, ch, 3, 1, 0, rng));
  for (Decoder* dec : {&content_, &attention_}) {
    int dch = ch;
    for (int i = 0; i < kDownsamplings; ++i, dch /= 2) dec->up.emplace_back(dch, dch / 2, 3, 1, 0, rng);
  }
  content_.head = nn::Conv2d<T>(c, config.masks - 1, 7, 1, 0, rng);
  attention_.head = nn::Conv2d<T>(c, config.masks, 7, 1, 0, rng);
}

template <typename T>
nn::Var<T> GeneratorBundle<T>::Decoder::operator()(const nn::Var<T>& z) const {
  nn::Var<T> h = z;
  for (const auto& conv : up)
    h = nn::relu(nn::norm_or_identity(conv(nn::reflect_pad(nn::upsample_nearest2x(h), 1))));
  return head(nn::reflect_pad(h, 3));
}

template <typename T>
nn::Var<T> GeneratorBundle<T>::encode(const nn::Var<T>& x, Rng* dropout_rng) const {
  const auto& s = x->value.shape();
  if (s.size() != 3 || s[0] != 1) throw ShapeError("generator input must be (1, H, W)");
  if (s[1] % 8 != 0 || s[2] % 8 != 0 || s[1] == 0 || s[2] == 0)
    throw ShapeError("generator input side must be divisible by 8, got " + x->value.shape_string());
  nn::Var<T> h = nn::relu(nn::norm_or_identity(stem_(nn::reflect_pad(x, 3))));
  for (const auto& conv : down_) h = nn::relu(nn::norm_or_identity(conv(h)));
  for (const auto& [c1, c2] : blocks_) {
    nn::Var<T> r = nn::relu(nn::norm_or_identity(c1(nn::reflect_pad(h, 1))));
    if (dropout_rng && config_.dropout > 0.0) r = nn::dropout(r, config_.dropout, *dropout_rng);
    r = nn::norm_or_identity(c2(nn::reflect_pad(r, 1)));
    h = nn::add(h, r);
  }
  return h;
}

template <typename T>
nn::Var<T> GeneratorBundle<T>::decode_content(const nn::Var<T>& z) const {
  return content_(z);
}

template <typename T>
nn::Var<T> GeneratorBundle<T>::decode_attention(const nn::Var<T>& z) const {
  return attention_(z);
}

template <typename T>
FusionVars<T> GeneratorBundle<T>::forward(const nn::Var<T>& x, Rng* dropout_rng) const {
  const nn::Var<T> z = encode(x, dropout_rng);
  FusionVars<T> f;
  f.content_fore = nn::tanh(decode_content(z));
  f.attention = nn::softmax_channels(decode_attention(z));
  const int n = config_.masks;
  f.attention_back = nn::slice_channels(f.attention, 0, 1);
  f.attention_fore = nn::slice_channels(f.attention, 1, n);
  f.fore = nn::sum_channels(nn::mul(f.content_fore, f.attention_fore));
  f.back = nn::mul(x, f.attention_back);
  f.output = nn::add(f.fore, f.back);
  return f;
}

template <typename T>
nn::ParamList<T> GeneratorBundle<T>::parameters() const {
  nn::ParamList<T> out;
  stem_.collect(out, "enc.stem");
  for (std::size_t i = 0; i < down_.size(); ++i) down_[i].collect(out, "enc.down" + std::to_string(i));
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].first.collect(out, "enc.block" + std::to_string(i) + ".conv1");
    blocks_[i].second.collect(out, "enc.block" + std::to_string(i) + ".conv2");
  }
  for (auto [dec, name] : {std::pair{&content_, "dec_content"}, std::pair{&attention_, "dec_attention"}}) {
    for (std::size_t i = 0; i < dec->up.size(); ++i)
      dec->up[i].collect(out, std::string(name) + ".up" + std::to_string(i));
    dec->head.collect(out, std::string(name) + ".head");
  }
  return out;
}

template <typename T>
void GeneratorBundle<T>::force_background_attention() {
  attention_.head.weight->value.fill(T(0));
  auto& b = attention_.head.bias->value;
  b.fill(T(-400));
  b[0] = T(400);
}

template <typename T>
DiscriminatorBundle<T>::DiscriminatorBundle(const DiscriminatorConfig& config,
                                            DiscriminatorRole role, std::uint64_t seed)
    : config_(config), role_(role), seed_(seed) {
  validate(config);
  if (config.stub) return;
  Rng rng(seed);
  const int c = config.base_channels;
  const int cap = 8 * c;
  int in = 1, out = c;
  for (int i = 0; i < config.downsampling_layers; ++i) {
    layers_.emplace_back(in, out, 4, 2, 1, rng);
    in = out;
    out = std::min(2 * out, cap);
  }
  layers_.emplace_back(in, out, 4, 1, 1, rng);
  layers_.emplace_back(out, 1, 4, 1, 1, rng);
}

template <typename T>
nn::Var<T> DiscriminatorBundle<T>::forward(const nn::Var<T>& x) const {
  const auto& s = x->value.shape();
  if (s.size() != 3 || s[0] != 1) throw ShapeError("discriminator input must be (1, H, W)");
  if (config_.stub) return nn::reshape(nn::mean_all(x), {1, 1, 1});
  const auto [oh, ow] = output_size(s[1], s[2]);
  if (oh < 1 || ow < 1)
    throw ShapeError("discriminator input " + x->value.shape_string() +
                     " too small for its receptive field");
  nn::Var<T> h = x;
  const T slope = T(0.2);
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i > 0) h = nn::norm_or_identity(h);
    h = nn::leaky_relu(h, slope);
  }
  return layers_.back()(h);
}

template <typename T>
std::pair<int, int> DiscriminatorBundle<T>::output_size(int height, int width) const {
  if (config_.stub) return {1, 1};
  int h = height, w = width;
  for (const auto& l : layers_) {
    const int k = l.weight->value.dim(2);
    h = (h + 2 * l.pad - k) / l.stride + 1;
    w = (w + 2 * l.pad - k) / l.stride + 1;
    if (h < 1 || w < 1) return {0, 0};
  }
  return {h, w};
}

template <typename T>
nn::ParamList<T> DiscriminatorBundle<T>::parameters() const {
  nn::ParamList<T> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, "conv" + std::to_string(i));
  return out;
}

template <typename T>
ModelBundles<T> init_bundles(const GeneratorConfig& gen, const DiscriminatorConfig& disc,
                             std::uint64_t seed) {
  return ModelBundles<T>{
      GeneratorBundle<T>(gen, mix_seed(seed, 1)),
      GeneratorBundle<T>(gen, mix_seed(seed, 2)),
      DiscriminatorBundle<T>(disc, DiscriminatorRole::kHealthy, mix_seed(seed, 3)),
      DiscriminatorBundle<T>(disc, DiscriminatorRole::kPathological, mix_seed(seed, 4)),
      DiscriminatorBundle<T>(disc, DiscriminatorRole::kForeground, mix_seed(seed, 5)),
  };
}

template <typename T>
nn::Tensor<T> image_to_tensor(const Image2D& img) {
  nn::Tensor<T> t = nn::Tensor<T>::chw(1, img.height(), img.width());
  for (std::size_t i = 0; i < img.size(); ++i) t[i] = static_cast<T>(img[i]);
  return t;
}

template <typename T>
Image2D tensor_to_image(const nn::Tensor<T>& t, int channel) {
  Image2D img(t.height(), t.width());
  const std::size_t off = static_cast<std::size_t>(channel) * t.plane();
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(t[off + i]);
  return img;
}

FusionProducts generator_forward(const GeneratorBundle<float>& g, const Image2D& x,
                                 bool dropout_active, Rng& rng) {
  nn::NoGradGuard no_grad;
  const FusionVars<float> f =
      g.forward(nn::constant(image_to_tensor<float>(x)), dropout_active ? &rng : nullptr);
  FusionProducts out;
  out.attention_fore = f.attention_fore->value;
  out.attention_back = tensor_to_image(f.attention_back->value);
  out.content_fore = f.content_fore->value;
  out.fore = tensor_to_image(f.fore->value);
  out.back = tensor_to_image(f.back->value);
  out.output = tensor_to_image(f.output->value);
  out.fore_canonical = tensor_to_image(foreground_on_background(f)->value);
  for (auto* img : {&out.attention_back, &out.fore, &out.back, &out.output, &out.fore_canonical})
    img->spacing = x.spacing;
  return out;
}

Image2D discriminate(const DiscriminatorBundle<float>& d, const Image2D& x) {
  nn::NoGradGuard no_grad;
  return tensor_to_image(d.forward(nn::constant(image_to_tensor<float>(x)))->value);
}

namespace {

template <typename T>
void add_params(nn::CheckpointWriter& w, const nn::ParamList<T>& params, const nn::Adam<T>* opt) {
  for (const auto& [name, p] : params) w.add("param/" + name, p->value);
  if (!opt) return;
  for (std::size_t i = 0; i < opt->params().size(); ++i) {
    const std::string& name = opt->params()[i].first;
    w.add("adam_m/" + name, opt->first_moments()[i]);
    w.add("adam_v/" + name, opt->second_moments()[i]);
  }
}

template <typename T>
void restore_params(const nn::CheckpointReader& r, const nn::ParamList<T>& params,
                    const std::string& where) {
  for (const auto& [name, p] : params) {
    nn::Tensor<T> t = r.get<T>("param/" + name);
    if (!t.same_shape(p->value))
      throw InputError(where + ": tensor " + name + " has shape " + t.shape_string() +
                       ", expected " + p->value.shape_string());
    p->value = std::move(t);
  }
}

json base_manifest(const CheckpointInfo& info, const char* kind, std::uint64_t seed,
                   const char* dtype, const nn::Adam<float>*, long long steps) {
  return json{{"format_version", 1},   {"kind", kind},        {"role", info.role},
              {"seed", seed},          {"epoch", info.epoch}, {"dtype", dtype},
              {"optimizer_steps", steps}, {"extra", info.extra}};
}

void read_info(const json& m, CheckpointInfo* info) {
  if (!info) return;
  info->role = m.value("role", "");
  info->epoch = m.value("epoch", 0LL);
  info->extra = m.value("extra", json::object());
}

}  // namespace

template <typename T>
void save_generator(const std::filesystem::path& path, const GeneratorBundle<T>& g,
                    const CheckpointInfo& info, const nn::Adam<T>* opt) {
  nn::CheckpointWriter w;
  add_params(w, g.parameters(), opt);
  json m = base_manifest(info, "generator", g.seed(), nn::dtype_name<T>(), nullptr,
                         opt ? opt->steps() : -1);
  m["architecture"] = g.config();
  w.write(path, m);
}

template <typename T>
void save_discriminator(const std::filesystem::path& path, const DiscriminatorBundle<T>& d,
                        const CheckpointInfo& info, const nn::Adam<T>* opt) {
  nn::CheckpointWriter w;
  add_params(w, d.parameters(), opt);
  json m = base_manifest(info, "discriminator", d.seed(), nn::dtype_name<T>(), nullptr,
                         opt ? opt->steps() : -1);
  m["architecture"] = d.config();
  m["discriminator_role"] = to_string(d.role());
  w.write(path, m);
}

template <typename T>
GeneratorBundle<T> load_generator(const std::filesystem::path& path, CheckpointInfo* info) {
  nn::CheckpointReader r(path);
  const json& m = r.manifest();
  if (m.value("kind", "") != "generator")
    throw InputError(path.string() + " is not a generator checkpoint");
  GeneratorBundle<T> g(m.at("architecture").get<GeneratorConfig>(), m.at("seed").get<std::uint64_t>());
  restore_params(r, g.parameters(), path.string());
  read_info(m, info);
  return g;
}

template <typename T>
DiscriminatorBundle<T> load_discriminator(const std::filesystem::path& path,
                                          CheckpointInfo* info) {
  nn::CheckpointReader r(path);
  const json& m = r.manifest();
  if (m.value("kind", "") != "discriminator")
    throw InputError(path.string() + " is not a discriminator checkpoint");
  DiscriminatorBundle<T> d(m.at("architecture").get<DiscriminatorConfig>(),
                           role_from_string(m.at("discriminator_role").get<std::string>()),
                           m.at("seed").get<std::uint64_t>());
  restore_params(r, d.parameters(), path.string());
  read_info(m, info);
  return d;
}

template <typename T>
void load_optimizer_state(const std::filesystem::path& path, nn::Adam<T>& opt) {
  nn::CheckpointReader r(path);
  const long long steps = r.manifest().value("optimizer_steps", -1LL);
  if (steps < 0) throw InputError(path.string() + " carries no optimizer state");
  for (std::size_t i = 0; i < opt.params().size(); ++i) {
    const std::string& name = opt.params()[i].first;
    opt.first_moments()[i] = r.get<T>("adam_m/" + name);
    opt.second_moments()[i] = r.get<T>("adam_v/" + name);
  }
  opt.set_steps(steps);
}

#define LF_INSTANTIATE_NETWORKS(T)                                                              \
  template class GeneratorBundle<T>;                                                            \
  template class DiscriminatorBundle<T>;                                                        \
  template ModelBundles<T> init_bundles<T>(const GeneratorConfig&, const DiscriminatorConfig&,  \
                                           std::uint64_t);                                      \
  template nn::Tensor<T> image_to_tensor<T>(const Image2D&);                                    \
  template Image2D tensor_to_image<T>(const nn::Tensor<T>&, int);                               \
  template void save_generator<T>(const std::filesystem::path&, const GeneratorBundle<T>&,      \
                                  const CheckpointInfo&, const nn::Adam<T>*);                   \
  template void save_discriminator<T>(const std::filesystem::path&,                             \
                                      const DiscriminatorBundle<T>&, const CheckpointInfo&,     \
                                      const nn::Adam<T>*);                                      \
  template GeneratorBundle<T> load_generator<T>(const std::filesystem::path&, CheckpointInfo*); \
  template DiscriminatorBundle<T> load_discriminator<T>(const std::filesystem::path&,           \
                                                        CheckpointInfo*);                       \
  template void load_optimizer_state<T>(const std::filesystem::path&, nn::Adam<T>&);

LF_INSTANTIATE_NETWORKS(float)
LF_INSTANTIATE_NETWORKS(double)

}  // namespace lf
