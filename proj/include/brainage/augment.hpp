#pragma once

#include <array>
#include <cstdint>
#include <utility>

#include <json.hpp>

#include "brainage/tensor.hpp"

namespace brainage {

/// Bounds of the training-time random transforms. Defaults are small perturbations.
struct AugmentConfig {
  double brightness_delta_max = 10.0;
  std::pair<double, double> contrast_factor_range{0.9, 1.1};
  double rotation_max_deg = 10.0;
  std::pair<double, double> zoom_range{0.9, 1.1};
  int translation_max = 3;
  double flip_probability = 0.5;
  std::uint64_t seed = 0;

  /// Every range collapsed onto the identity transform.
  static AugmentConfig identity();

  /// Throws BadConfig when a range excludes the identity or a probability leaves [0, 1].
  void validate() const;
};

void to_json(nlohmann::json& j, const AugmentConfig& cfg);
void from_json(const nlohmann::json& j, AugmentConfig& cfg);

/// Augmentations act on single-channel grids: rank-2 [rows, cols] or rank-3 [x, y, z] tensors.
using Grid = Tensor<float>;

/// clamp((x - mean) * factor + mean + delta, 0, 255) with mean over the nonzero elements.
Grid adjust_brightness_contrast(const Grid& data, double delta, double factor);

/// Reverses the index order along axis. Throws BadAxis.
Grid flip(const Grid& data, int axis);

/// Rotation in the first two axes about the grid centre, isotropic zoom and an integer shift,
/// resampled with (bi|tri)linear interpolation. Out-of-bounds samples read 0.
Grid affine_resample(const Grid& data, double rotation_deg, double zoom, std::array<int, 3> translation);

/// Concrete draw of every transform parameter.
struct AugmentDraw {
  double delta = 0.0;
  double factor = 1.0;
  std::array<bool, 2> flips{false, false};
  double rotation_deg = 0.0;
  double zoom = 1.0;
  std::array<int, 3> translation{0, 0, 0};
};

/// Parameters for draw number `counter`, a pure function of (cfg.seed, counter, rank).
AugmentDraw sample_augmentation(const AugmentConfig& cfg, std::uint64_t counter, int rank);

/// brightness/contrast, then flips on the two in-plane axes, then the affine resample;
/// outputs are clamped to [0, 255].
Grid apply_augmentation(const Grid& data, const AugmentConfig& cfg, std::uint64_t counter);

}  // namespace brainage
