#include "lesionforge/losses.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

namespace lf {

using nlohmann::json;

void to_json(json& j, const LossWeights& w) {
  j = json{{"lambda_H", w.lambda_H}, {"lambda_P", w.lambda_P}, {"lambda_idt", w.lambda_idt}};
}

void from_json(const json& j, LossWeights& w) {
  const LossWeights d;
  w.lambda_H = j.value("lambda_H", d.lambda_H);
  w.lambda_P = j.value("lambda_P", d.lambda_P);
  w.lambda_idt = j.value("lambda_idt", d.lambda_idt);
}

void validate(const LossWeights& w) {
  for (double v : {w.lambda_H, w.lambda_P, w.lambda_idt})
    if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("loss weights must be finite and >= 0");
}

void to_json(json& j, const LossReport& r) {
  j = json{{"g_H", r.g_H}, {"g_P", r.g_P},   {"cc", r.cc},   {"idt", r.idt},
           {"g_total", r.g_total}, {"d_H", r.d_H}, {"d_P", r.d_P}, {"d_F", r.d_F}};
}

void from_json(const json& j, LossReport& r) {
  r.g_H = j.at("g_H");
  r.g_P = j.at("g_P");
  r.cc = j.at("cc");
  r.idt = j.at("idt");
  r.g_total = j.at("g_total");
  r.d_H = j.at("d_H");
  r.d_P = j.at("d_P");
  r.d_F = j.at("d_F");
}

namespace {

void require_nonempty(const Image2D& s, const char* what) {
  if (s.empty()) throw InputError(std::string(what) + ": empty score map");
}

double mean_sq_offset(const Image2D& s, double target) {
  double acc = 0.0;
  for (float v : s.pixels()) acc += (v - target) * (v - target);
  return acc / static_cast<double>(s.size());
}

Image2D resize_scores(const Image2D& s, int h, int w) {
  Image2D out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out(y, x) = s(static_cast<int>(static_cast<long>(y) * s.height() / h),
                    static_cast<int>(static_cast<long>(x) * s.width() / w));
  return out;
}

void warn_resize(int ph, int pw, int fh, int fw) {
  static bool warned = false;
  if (warned) return;
  warned = true;
  spdlog::warn("score maps differ in shape ({}x{} vs {}x{}); resizing by nearest neighbour", ph,
               pw, fh, fw);
}

}  // namespace

double loss_gen_healthy(const Image2D& scores) {
  require_nonempty(scores, "loss_gen_healthy");
  return mean_sq_offset(scores, 1.0);
}

double loss_gen_pathological(const Image2D& p, const Image2D& f) {
  require_nonempty(p, "loss_gen_pathological");
  require_nonempty(f, "loss_gen_pathological");
  Image2D fr = f;
  if (!p.same_shape(f)) {
    warn_resize(p.height(), p.width(), f.height(), f.width());
    fr = resize_scores(f, p.height(), p.width());
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = 0.5 * (static_cast<double>(p[i]) + fr[i]) - 1.0;
    acc += d * d;
  }
  return acc / static_cast<double>(p.size());
}

double loss_cycle(const Image2D& x_H, const Image2D& rec_H, const Image2D& x_P,
                  const Image2D& rec_P, const LossWeights& w) {
  require_same_shape(x_H, rec_H, "loss_cycle");
  require_same_shape(x_P, rec_P, "loss_cycle");
  return w.lambda_H * mean_abs_diff(rec_H, x_H) + w.lambda_P * mean_abs_diff(rec_P, x_P);
}

double loss_identity(const Image2D& x_H, const Image2D& idt_H, const Image2D& x_P,
                     const Image2D& idt_P, const LossWeights& w) {
  require_same_shape(x_H, idt_H, "loss_identity");
  require_same_shape(x_P, idt_P, "loss_identity");
  return w.lambda_H * w.lambda_idt * mean_abs_diff(idt_H, x_H) +
         w.lambda_P * w.lambda_idt * mean_abs_diff(idt_P, x_P);
}

double loss_gen_total(double g_H, double g_P, double cc, double idt) {
  return g_H + g_P + cc + idt;
}

double loss_disc(const Image2D& real, const Image2D& fake) {
  require_nonempty(real, "loss_disc");
  require_nonempty(fake, "loss_disc");
  return mean_sq_offset(real, 1.0) + mean_sq_offset(fake, 0.0);
}

namespace losses {

namespace {

template <typename T>
void require_nonempty(const nn::Var<T>& v, const char* what) {
  if (v->value.empty()) throw InputError(std::string(what) + ": empty score map");
}

template <typename T>
void require_same(const nn::Var<T>& a, const nn::Var<T>& b, const char* what) {
  if (!a->value.same_shape(b->value))
    throw ShapeError(std::string(what) + ": shape mismatch " + a->value.shape_string() + " vs " +
                     b->value.shape_string());
}

}  // namespace

template <typename T>
nn::Var<T> gen_healthy(const nn::Var<T>& s) {
  require_nonempty(s, "gen_healthy");
  return nn::mean_all(nn::square(nn::add_scalar(s, T(-1))));
}

template <typename T>
nn::Var<T> gen_pathological(const nn::Var<T>& p, const nn::Var<T>& f) {
  require_nonempty(p, "gen_pathological");
  require_nonempty(f, "gen_pathological");
  nn::Var<T> fr = f;
  if (!p->value.same_shape(f->value)) {
    warn_resize(p->value.height(), p->value.width(), f->value.height(), f->value.width());
    fr = nn::resize_nearest(f, p->value.height(), p->value.width());
  }
  return nn::mean_all(nn::square(nn::add_scalar(nn::scale(nn::add(p, fr), T(0.5)), T(-1))));
}

template <typename T>
nn::Var<T> cycle(const nn::Var<T>& x_H, const nn::Var<T>& rec_H, const nn::Var<T>& x_P,
                 const nn::Var<T>& rec_P, const LossWeights& w) {
  require_same(x_H, rec_H, "cycle");
  require_same(x_P, rec_P, "cycle");
  return nn::add(nn::scale(nn::mean_abs(nn::sub(rec_H, x_H)), static_cast<T>(w.lambda_H)),
                 nn::scale(nn::mean_abs(nn::sub(rec_P, x_P)), static_cast<T>(w.lambda_P)));
}

template <typename T>
nn::Var<T> identity(const nn::Var<T>& x_H, const nn::Var<T>& idt_H, const nn::Var<T>& x_P,
                    const nn::Var<T>& idt_P, const LossWeights& w) {
  require_same(x_H, idt_H, "identity");
  require_same(x_P, idt_P, "identity");
  const T wh = static_cast<T>(w.lambda_H * w.lambda_idt);
  const T wp = static_cast<T>(w.lambda_P * w.lambda_idt);
  return nn::add(nn::scale(nn::mean_abs(nn::sub(idt_H, x_H)), wh),
                 nn::scale(nn::mean_abs(nn::sub(idt_P, x_P)), wp));
}

template <typename T>
nn::Var<T> disc(const nn::Var<T>& real, const nn::Var<T>& fake) {
  require_nonempty(real, "disc");
  require_nonempty(fake, "disc");
  return nn::add(nn::mean_all(nn::square(nn::add_scalar(real, T(-1)))),
                 nn::mean_all(nn::square(fake)));
}

#define LF_INSTANTIATE_LOSSES(T)                                                            \
  template nn::Var<T> gen_healthy<T>(const nn::Var<T>&);                                    \
  template nn::Var<T> gen_pathological<T>(const nn::Var<T>&, const nn::Var<T>&);            \
  template nn::Var<T> cycle<T>(const nn::Var<T>&, const nn::Var<T>&, const nn::Var<T>&,     \
                               const nn::Var<T>&, const LossWeights&);                      \
  template nn::Var<T> identity<T>(const nn::Var<T>&, const nn::Var<T>&, const nn::Var<T>&,  \
                                  const nn::Var<T>&, const LossWeights&);                   \
  template nn::Var<T> disc<T>(const nn::Var<T>&, const nn::Var<T>&);

LF_INSTANTIATE_LOSSES(float)
LF_INSTANTIATE_LOSSES(double)

}  // namespace losses

}  // namespace lf
