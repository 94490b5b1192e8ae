#include "lesionforge/registration.hpp"

#include <array>
#include <cmath>

namespace lf {

using nlohmann::json;

double DisplacementField::max_norm() const {
  double m = 0.0;
  for (std::size_t i = 0; i < dy.size(); ++i)
    m = std::max(m, std::hypot(static_cast<double>(dy[i]), static_cast<double>(dx[i])));
  return m;
}

Image2D warp_image(const Image2D& img, const DisplacementField& field) {
  require_same_shape(img, field.dy, "warp_image");
  Image2D out(img.height(), img.width());
  out.spacing = img.spacing;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out(y, x) = sample_bilinear(img, y + field.dy(y, x), x + field.dx(y, x));
  return out;
}

BinaryMask2D warp_mask(const BinaryMask2D& mask, const DisplacementField& field) {
  require_same_shape(mask, field.dy, "warp_mask");
  const int h = mask.height(), w = mask.width();
  BinaryMask2D out(h, w);
  out.spacing = mask.spacing;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sy = std::clamp(static_cast<int>(std::lround(y + field.dy(y, x))), 0, h - 1);
      const int sx = std::clamp(static_cast<int>(std::lround(x + field.dx(y, x))), 0, w - 1);
      out(y, x) = mask(sy, sx);
    }
  return out;
}

DisplacementField random_elastic_field(int height, int width, int grid_points, double amplitude,
                                       Rng& rng) {
  if (grid_points < 2) throw InputError("elastic grid needs >= 2 points per side");
  DisplacementField f(height, width);
  if (amplitude == 0.0) return f;
  std::normal_distribution<double> n(0.0, amplitude);
  Image2D cy(grid_points, grid_points), cx(grid_points, grid_points);
  for (std::size_t i = 0; i < cy.size(); ++i) {
    cy[i] = static_cast<float>(n(rng));
    cx[i] = static_cast<float>(n(rng));
  }
  f.dy = resize_bilinear(cy, height, width);
  f.dx = resize_bilinear(cx, height, width);
  return f;
}

void to_json(json& j, const FFDConfig& c) {
  j = json{{"spacings", c.spacings},
           {"steps_per_level", c.steps_per_level},
           {"step_size", c.step_size},
           {"smoothness", c.smoothness},
           {"min_step", c.min_step}};
}

void from_json(const json& j, FFDConfig& c) {
  const FFDConfig d;
  c.spacings = j.value("spacings", d.spacings);
  c.steps_per_level = j.value("steps_per_level", d.steps_per_level);
  c.step_size = j.value("step_size", d.step_size);
  c.smoothness = j.value("smoothness", d.smoothness);
  c.min_step = j.value("min_step", d.min_step);
}

void validate(const FFDConfig& c) {
  if (c.spacings.empty()) throw InputError("FFD needs at least one level");
  for (std::size_t i = 0; i < c.spacings.size(); ++i) {
    if (c.spacings[i] < 1) throw InputError("FFD spacings must be >= 1");
    if (i > 0 && c.spacings[i] >= c.spacings[i - 1])
      throw InputError("FFD spacings must be strictly decreasing");
  }
  if (c.steps_per_level < 1) throw InputError("FFD steps_per_level must be >= 1");
  if (!(c.step_size > 0) || !(c.min_step > 0) || !(c.smoothness >= 0))
    throw InputError("FFD step sizes must be > 0 and smoothness >= 0");
}

namespace {

using Weights = std::array<double, 4>;

Weights bspline(double u) {
  const double u2 = u * u, u3 = u2 * u;
  return {(1 - u) * (1 - u) * (1 - u) / 6.0, (3 * u3 - 6 * u2 + 4) / 6.0,
          (-3 * u3 + 3 * u2 + 3 * u + 1) / 6.0, u3 / 6.0};
}

// Cubic B-spline control lattice along one axis. Node a sits at (a - 1) * s.
struct Axis {
  int nodes = 0;
  std::vector<int> first;  // first contributing node per pixel
  std::vector<Weights> w;

  Axis(int len, int s) {
    nodes = (len - 1) / s + 4;
    first.resize(len);
    w.resize(len);
    for (int p = 0; p < len; ++p) {
      const int i = p / s;
      first[p] = i;
      w[p] = bspline(static_cast<double>(p) / s - i);
    }
  }
};

struct Level {
  Axis ay, ax;
  std::vector<double> cy, cx;  // control displacements, row-major ay.nodes x ax.nodes

  Level(int h, int w, int s)
      : ay(h, s), ax(w, s),
        cy(static_cast<std::size_t>(ay.nodes) * ax.nodes, 0.0),
        cx(static_cast<std::size_t>(ay.nodes) * ax.nodes, 0.0) {}

  std::size_t idx(int a, int b) const { return static_cast<std::size_t>(a) * ax.nodes + b; }

  void evaluate(const std::vector<double>& py, const std::vector<double>& px,
                DisplacementField& out, const DisplacementField& base) const {
    const int h = out.height(), w = out.width();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double dy = 0, dx = 0;
        for (int l = 0; l < 4; ++l)
          for (int m = 0; m < 4; ++m) {
            const double b = ay.w[y][l] * ax.w[x][m];
            const std::size_t k = idx(ay.first[y] + l, ax.first[x] + m);
            dy += b * py[k];
            dx += b * px[k];
          }
        out.dy(y, x) = static_cast<float>(base.dy(y, x) + dy);
        out.dx(y, x) = static_cast<float>(base.dx(y, x) + dx);
      }
  }

  // Membrane energy over 4-neighbour lattice edges, and its gradient.
  double smoothness(const std::vector<double>& py, const std::vector<double>& px,
                    std::vector<double>* gy, std::vector<double>* gx) const {
    double e = 0;
    std::size_t edges = 0;
    auto edge = [&](std::size_t i, std::size_t j) {
      const double ey = py[i] - py[j], ex = px[i] - px[j];
      e += ey * ey + ex * ex;
      ++edges;
      if (gy) {
        (*gy)[i] += 2 * ey;
        (*gy)[j] -= 2 * ey;
        (*gx)[i] += 2 * ex;
        (*gx)[j] -= 2 * ex;
      }
    };
    for (int a = 0; a < ay.nodes; ++a)
      for (int b = 0; b < ax.nodes; ++b) {
        if (a + 1 < ay.nodes) edge(idx(a, b), idx(a + 1, b));
        if (b + 1 < ax.nodes) edge(idx(a, b), idx(a, b + 1));
      }
    if (edges == 0) return 0;
    if (gy)
      for (std::size_t k = 0; k < gy->size(); ++k) {
        (*gy)[k] /= static_cast<double>(edges);
        (*gx)[k] /= static_cast<double>(edges);
      }
    return e / static_cast<double>(edges);
  }
};

double mean_ssd(const Image2D& a, const Image2D& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

Image2D central_gradient(const Image2D& img, bool along_y) {
  const int h = img.height(), w = img.width();
  Image2D g(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (along_y) {
        const int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, h - 1);
        g(y, x) = y1 > y0 ? (img(y1, x) - img(y0, x)) / static_cast<float>(y1 - y0) : 0.0f;
      } else {
        const int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, w - 1);
        g(y, x) = x1 > x0 ? (img(y, x1) - img(y, x0)) / static_cast<float>(x1 - x0) : 0.0f;
      }
    }
  return g;
}

bool all_finite(const std::vector<double>& v) {
  for (double d : v)
    if (!std::isfinite(d)) return false;
  return true;
}

}  // namespace

RegistrationResult register_ffd(const Image2D& moving, const Image2D& fixed, const FFDConfig& cfg) {
  require_same_shape(moving, fixed, "register_ffd");
  validate(cfg);
  const int h = moving.height(), w = moving.width();
  const double n = static_cast<double>(moving.size());
  const Image2D gy_img = central_gradient(moving, true);
  const Image2D gx_img = central_gradient(moving, false);

  RegistrationResult res;
  res.initial_ssd = mean_ssd(moving, fixed);
  DisplacementField base(h, w);
  DisplacementField best(h, w);
  double best_ssd = res.initial_ssd;
  DisplacementField trial(h, w);

  for (int s : cfg.spacings) {
    Level lv(h, w, s);
    auto energy = [&](const std::vector<double>& py, const std::vector<double>& px,
                      double* ssd_out) {
      lv.evaluate(py, px, trial, base);
      const double ssd = mean_ssd(warp_image(moving, trial), fixed);
      if (ssd_out) *ssd_out = ssd;
      return ssd + cfg.smoothness * lv.smoothness(py, px, nullptr, nullptr);
    };

    double ssd = 0;
    double e = energy(lv.cy, lv.cx, &ssd);
    double t = cfg.step_size;
    for (int step = 0; step < cfg.steps_per_level; ++step) {
      // Gradient at the current iterate (trial holds its field).
      lv.evaluate(lv.cy, lv.cx, trial, base);
      std::vector<double> gy(lv.cy.size(), 0.0), gx(lv.cx.size(), 0.0);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double sy = y + trial.dy(y, x), sx = x + trial.dx(y, x);
          const double r = sample_bilinear(moving, sy, sx) - fixed(y, x);
          if (r == 0.0) continue;
          const double dy = 2.0 * r * sample_bilinear(gy_img, sy, sx) / n;
          const double dx = 2.0 * r * sample_bilinear(gx_img, sy, sx) / n;
          for (int l = 0; l < 4; ++l)
            for (int m = 0; m < 4; ++m) {
              const double b = lv.ay.w[y][l] * lv.ax.w[x][m];
              const std::size_t k = lv.idx(lv.ay.first[y] + l, lv.ax.first[x] + m);
              gy[k] += b * dy;
              gx[k] += b * dx;
            }
        }
      if (cfg.smoothness > 0) {
        std::vector<double> sy(gy.size(), 0.0), sx(gx.size(), 0.0);
        lv.smoothness(lv.cy, lv.cx, &sy, &sx);
        for (std::size_t k = 0; k < gy.size(); ++k) {
          gy[k] += cfg.smoothness * sy[k];
          gx[k] += cfg.smoothness * sx[k];
        }
      }
      if (!all_finite(gy) || !all_finite(gx))
        throw NumericalError("register_ffd: non-finite gradient at spacing " + std::to_string(s));
      double gmax = 0;
      for (std::size_t k = 0; k < gy.size(); ++k)
        gmax = std::max({gmax, std::abs(gy[k]), std::abs(gx[k])});
      if (gmax == 0.0) break;

      bool accepted = false;
      std::vector<double> ny(lv.cy.size()), nx(lv.cx.size());
      while (t >= cfg.min_step) {
        for (std::size_t k = 0; k < ny.size(); ++k) {
          ny[k] = lv.cy[k] - t * gy[k] / gmax;
          nx[k] = lv.cx[k] - t * gx[k] / gmax;
        }
        double new_ssd = 0;
        const double ne = energy(ny, nx, &new_ssd);
        if (!std::isfinite(ne)) throw NumericalError("register_ffd: non-finite objective");
        if (ne < e) {
          lv.cy.swap(ny);
          lv.cx.swap(nx);
          e = ne;
          ssd = new_ssd;
          accepted = true;
          if (ssd < best_ssd) {
            best_ssd = ssd;
            best = trial;
          }
          t *= 1.5;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) break;
    }
    if (!all_finite(lv.cy) || !all_finite(lv.cx))
      throw NumericalError("register_ffd: non-finite control grid");
    lv.evaluate(lv.cy, lv.cx, trial, base);
    base = trial;
    res.level_ssd.push_back(ssd);
  }

  res.field = best;
  res.warped = warp_image(moving, best);
  res.final_ssd = best_ssd;
  return res;
}

}  // namespace lf
