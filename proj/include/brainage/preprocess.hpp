#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "brainage/volume.hpp"

namespace brainage {

/// A sampled inverse CDF: values[i] is the intensity at cumulative level levels[i].
struct QuantileTable {
  std::vector<double> levels;
  std::vector<double> values;

  std::size_t size() const { return levels.size(); }

  /// Piecewise-linear inverse CDF, clamped to [0, 1].
  double interp(double level) const;

  /// Largest gap between consecutive values; the tolerance unit for matching.
  double max_step() const;
};

/// Default number of quantile levels in the reference table.
inline constexpr int kDefaultQuantiles = 1000;

/// Central axial slices per subject and their cropped shape.
inline constexpr int kDefaultSliceCount = 40;
inline constexpr int kSliceRows = 86;
inline constexpr int kSliceCols = 104;

/// A 2D x-y plane of a volume, row-major with rows along x.
struct Slice {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;
  int source_index = 0;
  std::string subject_id;

  float operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  float& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
};

/// Levels 0, 1/(q-1), ..., 1.
std::vector<double> uniform_levels(int q);

/// Nonzero voxels of v, sorted ascending. Zero voxels are skull-stripped background.
std::vector<float> sorted_foreground(const Volume& v);

/// Linear-interpolation empirical quantiles of an ascending sample: position level * (n - 1).
std::vector<double> empirical_quantiles(std::span<const float> sorted, std::span<const double> levels);

/// Averages each volume's foreground quantiles at q uniform levels.
///
/// Throws EmptyInput for no volumes, BadConfig for q < 2 and AllZeroVolume for a volume with no
/// foreground.
QuantileTable build_reference_histogram(std::span<const Volume> volumes, int q = kDefaultQuantiles);

/// Maps each foreground voxel v to ref.interp(F(v)); background stays 0.
///
/// F is the empirical CDF with ties at the midpoint of their rank run, normalised so the minimum
/// lands on level 0 and the maximum on level 1: F(v) = (first + last) / (2 (N - 1)).
/// Throws DegenerateVolume when the foreground has fewer than two distinct values.
Volume histogram_match(const Volume& volume, const QuantileTable& ref);

/// Affine rescale to [0, 255] using the whole-volume range; zero voxels remain zero.
/// Throws DegenerateVolume when max == min.
Volume minmax_normalize(const Volume& volume);

/// The k axial slices around the centre: z in [floor((Z - k) / 2), ... + k). Throws KTooLarge.
std::vector<Slice> extract_center_slices(const Volume& volume, int k = kDefaultSliceCount,
                                         const std::string& subject_id = {});

/// Central sub-grid with offsets floor((R - rows) / 2), floor((C - cols) / 2). Throws TargetTooLarge.
Slice center_crop(const Slice& slice, int rows = kSliceRows, int cols = kSliceCols);

/// Two-column CSV with header "level,value".
void write_quantile_table(const QuantileTable& table, const std::filesystem::path& path);
QuantileTable read_quantile_table(const std::filesystem::path& path);

}  // namespace brainage
