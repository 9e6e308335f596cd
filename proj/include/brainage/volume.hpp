#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

namespace brainage {

/// A 3D scalar grid indexed (x, y, z) with z varying fastest in memory.
///
/// Inputs are assumed MNI-registered, so x is sagittal, y coronal and z axial.
struct Volume {
  std::array<int, 3> dims{0, 0, 0};
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  std::vector<float> data;
  std::optional<std::pair<float, float>> intensity_range;

  Volume() = default;
  Volume(std::array<int, 3> d, std::array<float, 3> s = {2.0f, 2.0f, 2.0f})
      : dims(d), spacing(s), data(static_cast<std::size_t>(d[0]) * d[1] * d[2], 0.0f) {}

  std::size_t size() const { return data.size(); }

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(x) * dims[1] + y) * dims[2] + z;
  }
  float& operator()(int x, int y, int z) { return data[index(x, y, z)]; }
  float operator()(int x, int y, int z) const { return data[index(x, y, z)]; }

  bool operator==(const Volume& o) const {
    return dims == o.dims && spacing == o.spacing && data == o.data;
  }
};

/// The MNI152 2 mm grid registered inputs live on.
inline constexpr std::array<int, 3> kMniDims{91, 109, 91};
inline constexpr std::array<float, 3> kMniSpacing{2.0f, 2.0f, 2.0f};

/// Throws unless every voxel is finite, extents are positive and spacing is positive.
void validate(const Volume& v);

}  // namespace brainage
