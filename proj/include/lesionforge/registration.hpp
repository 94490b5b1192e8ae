#pragma once

#include <nlohmann/json.hpp>
#include <vector>

#include "lesionforge/image.hpp"

namespace lf {

/// Backward map: output pixel (y, x) samples the source at (y + dy, x + dx).
struct DisplacementField {
  Grid<float> dy;
  Grid<float> dx;

  DisplacementField() = default;
  DisplacementField(int height, int width) : dy(height, width, 0.0f), dx(height, width, 0.0f) {}
  int height() const { return dy.height(); }
  int width() const { return dy.width(); }
  /// Largest displacement magnitude, px.
  double max_norm() const;
};

Image2D warp_image(const Image2D& img, const DisplacementField& field);
/// Nearest-neighbour warp so labels stay binary.
BinaryMask2D warp_mask(const BinaryMask2D& mask, const DisplacementField& field);

/// Smooth random field: N(0, amplitude) displacements on a grid_points x
/// grid_points lattice, bilinearly upsampled to height x width.
DisplacementField random_elastic_field(int height, int width, int grid_points, double amplitude,
                                       Rng& rng);

struct FFDConfig {
  std::vector<int> spacings{32, 16, 8};  // control-point spacing per level, px, coarse to fine
  int steps_per_level = 80;
  double step_size = 1.0;     // initial max control-point move per step, px
  double smoothness = 0.05;   // weight of the control-grid membrane energy
  double min_step = 1e-3;     // line search gives up below this
};

void to_json(nlohmann::json& j, const FFDConfig& c);
void from_json(const nlohmann::json& j, FFDConfig& c);
void validate(const FFDConfig& c);

struct RegistrationResult {
  Image2D warped;
  DisplacementField field;
  double initial_ssd = 0;  // mean squared difference, moving vs fixed
  double final_ssd = 0;    // warped vs fixed
  std::vector<double> level_ssd;  // after each level
};

/// Multi-level cubic B-spline FFD. Levels add on top of each other; each is
/// fitted by gradient descent on mean SSD + smoothness with a backtracking
/// line search. Returns the lowest-SSD iterate, so final_ssd <= initial_ssd.
/// Throws NumericalError if the field turns non-finite.
RegistrationResult register_ffd(const Image2D& moving, const Image2D& fixed,
                                const FFDConfig& cfg = {});

}  // namespace lf
