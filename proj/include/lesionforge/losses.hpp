#pragma once

#include <nlohmann/json.hpp>

#include "lesionforge/image.hpp"
#include "lesionforge/nn/ops.hpp"

namespace lf {

struct LossWeights {
  double lambda_H = 10.0;
  double lambda_P = 10.0;
  double lambda_idt = 0.5;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
void validate(const LossWeights& w);

struct LossReport {
  double g_H = 0, g_P = 0, cc = 0, idt = 0, g_total = 0;
  double d_H = 0, d_P = 0, d_F = 0;
};

void to_json(nlohmann::json& j, const LossReport& r);
void from_json(const nlohmann::json& j, LossReport& r);

// Scalar forms on plain score maps / images. Score maps are Image2D-shaped
// grids of arbitrary real values.

/// mean (s - 1)^2
double loss_gen_healthy(const Image2D& scores);
/// mean (0.5 (p + f) - 1)^2; f is nearest-resized to p's shape if they differ.
double loss_gen_pathological(const Image2D& p_scores, const Image2D& f_scores);
double loss_cycle(const Image2D& x_H, const Image2D& rec_H, const Image2D& x_P,
                  const Image2D& rec_P, const LossWeights& w);
double loss_identity(const Image2D& x_H, const Image2D& idt_H, const Image2D& x_P,
                     const Image2D& idt_P, const LossWeights& w);
double loss_gen_total(double g_H, double g_P, double cc, double idt);
/// mean (real - 1)^2 + mean fake^2
double loss_disc(const Image2D& real_scores, const Image2D& fake_scores);

/// Differentiable forms used by the trainer; inputs are (1, h, w) maps.
namespace losses {

template <typename T>
nn::Var<T> gen_healthy(const nn::Var<T>& scores);
template <typename T>
nn::Var<T> gen_pathological(const nn::Var<T>& p_scores, const nn::Var<T>& f_scores);
template <typename T>
nn::Var<T> cycle(const nn::Var<T>& x_H, const nn::Var<T>& rec_H, const nn::Var<T>& x_P,
                 const nn::Var<T>& rec_P, const LossWeights& w);
template <typename T>
nn::Var<T> identity(const nn::Var<T>& x_H, const nn::Var<T>& idt_H, const nn::Var<T>& x_P,
                    const nn::Var<T>& idt_P, const LossWeights& w);
template <typename T>
nn::Var<T> disc(const nn::Var<T>& real_scores, const nn::Var<T>& fake_scores);

}  // namespace losses

}  // namespace lf
